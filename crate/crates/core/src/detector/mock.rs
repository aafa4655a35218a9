//! Scripted detector for offline runs.
//!
//! A fixture directory holds one `<scenario>.json` file per scenario, each a
//! JSON array of rules:
//!
//! ```json
//! [
//!   {"prompt_substring": "water bottle", "image_id": "office_02",
//!    "detections": [{"box": [50, 40, 120, 200], "score": 0.91}]},
//!   {"prompt_substring": "bottle",
//!    "detections": [{"box": [50, 40, 120, 200], "token_logits": [2.3, -0.4]}]}
//! ]
//! ```
//!
//! Rules are tried top-down and the first match wins. A rule matches when
//! its normalized `prompt_substring` occurs in the normalized prompt and its
//! `image_id`, if given, equals the queried image. No match means no
//! detections. A detection's confidence is either a literal `score`,
//! `token_logits` (grounding-style) or `objectness` plus `class_prob`.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::confidence::{gd_confidence, yoloe_confidence};
use super::{Detection, DetectionInput, Detector, DetectorSpec};
use crate::error::{Error, Result};
use crate::geometry::BoundingBox;
use crate::vlm::normalize_text;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum FixtureScore {
    Literal { score: f64 },
    TokenLogits { token_logits: Vec<f64> },
    Objectness { objectness: f64, class_prob: f64 },
}

impl FixtureScore {
    pub fn resolve(&self) -> Result<f64> {
        match self {
            FixtureScore::Literal { score } => Ok(*score),
            FixtureScore::TokenLogits { token_logits } => gd_confidence(token_logits),
            FixtureScore::Objectness {
                objectness,
                class_prob,
            } => yoloe_confidence(*objectness, *class_prob),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FixtureDetection {
    #[serde(rename = "box")]
    pub bbox: BoundingBox,
    #[serde(flatten)]
    pub score: FixtureScore,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phrase: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FixtureRule {
    pub prompt_substring: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_id: Option<String>,
    pub detections: Vec<FixtureDetection>,
}

impl FixtureRule {
    fn matches(&self, image_id: &str, normalized_prompt: &str) -> bool {
        self.image_id.as_deref().map_or(true, |id| id == image_id)
            && normalized_prompt.contains(&normalize_text(&self.prompt_substring))
    }
}

#[derive(Clone, Debug, Default)]
pub struct FixtureStore {
    scenarios: BTreeMap<String, Vec<FixtureRule>>,
}

impl FixtureStore {
    pub fn load_dir(dir: &Path) -> Result<Self> {
        if !dir.is_dir() {
            return Err(Error::Config(format!("fixture directory not found: {}", dir.display())));
        }
        let mut paths: Vec<_> = fs::read_dir(dir)
            .map_err(|e| Error::io(dir, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "json"))
            .collect();
        paths.sort();
        let mut store = FixtureStore::default();
        for path in paths {
            let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
            let rules: Vec<FixtureRule> = serde_json::from_str(&text)
                .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
            let scenario = path
                .file_stem()
                .and_then(|s| s.to_str())
                .ok_or_else(|| Error::Config(format!("bad fixture file name {}", path.display())))?;
            store.insert(scenario, rules);
        }
        Ok(store)
    }

    pub fn insert(&mut self, scenario: impl Into<String>, rules: Vec<FixtureRule>) {
        self.scenarios.insert(scenario.into(), rules);
    }

    pub fn has_scenario(&self, scenario: &str) -> bool {
        self.scenarios.contains_key(scenario)
    }

    /// Scripted detections for `(scenario, image_id, prompt_text)`.
    pub fn mock_detect(
        &self,
        scenario: &str,
        image_id: &str,
        prompt_text: &str,
        backend_id: &str,
    ) -> Result<Vec<Detection>> {
        let rules = self
            .scenarios
            .get(scenario)
            .ok_or_else(|| Error::Config(format!("unknown mock scenario `{scenario}`")))?;
        let prompt = normalize_text(prompt_text);
        let Some(rule) = rules.iter().find(|r| r.matches(image_id, &prompt)) else {
            return Ok(Vec::new());
        };
        rule.detections
            .iter()
            .map(|d| {
                Ok(Detection {
                    bbox: d.bbox,
                    score: d.score.resolve()?,
                    backend_id: backend_id.to_string(),
                    matched_phrase: d.phrase.clone(),
                })
            })
            .collect()
    }
}

pub struct MockDetector {
    spec: DetectorSpec,
    store: Arc<FixtureStore>,
    scenario: String,
}

impl MockDetector {
    pub fn new(spec: DetectorSpec, store: Arc<FixtureStore>, scenario: impl Into<String>) -> Result<Self> {
        let scenario = scenario.into();
        if !store.has_scenario(&scenario) {
            return Err(Error::Config(format!(
                "backend `{}`: unknown mock scenario `{scenario}`",
                spec.backend_id
            )));
        }
        Ok(Self { spec, store, scenario })
    }

    /// Reads `extra.fixtures` (directory) and `extra.scenario` (defaults to
    /// the backend id).
    pub fn from_spec(spec: &DetectorSpec, base_dir: &Path) -> Result<Self> {
        let dir = spec.extra_str("fixtures").ok_or_else(|| {
            Error::Config(format!("mock backend `{}` needs extra.fixtures", spec.backend_id))
        })?;
        let store = FixtureStore::load_dir(&base_dir.join(dir))?;
        let scenario = spec.extra_str("scenario").unwrap_or(&spec.backend_id).to_string();
        Self::new(spec.clone(), Arc::new(store), scenario)
    }
}

impl Detector for MockDetector {
    fn spec(&self) -> &DetectorSpec {
        &self.spec
    }

    fn is_reentrant(&self) -> bool {
        true
    }

    fn candidates(&self, input: &DetectionInput<'_>) -> Result<Vec<Detection>> {
        self.store
            .mock_detect(&self.scenario, input.image_id, input.prompt, &self.spec.backend_id)
    }
}
