//! Language-conditioned detection over pluggable backends.
//!
//! Every backend maps `(image, prompt)` to scored boxes in absolute corner
//! format. [`detect`] applies the shared contract on top of whatever a
//! backend emits: malformed outputs are dropped with a diagnostic, boxes are
//! clipped to the frame, scores below the threshold are removed and the rest
//! are ordered by descending score. An empty list is a normal result.

mod confidence;
mod mock;
mod remote;

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use image::RgbImage;
use serde::{Deserialize, Serialize};
use serde_json::Value;

pub use confidence::{gd_confidence, sigmoid, yoloe_confidence};
pub use mock::{FixtureDetection, FixtureRule, FixtureScore, FixtureStore, MockDetector};
pub use remote::{RemoteDetector, RemoteRequest};

use crate::cache::{CacheStore, RunMode};
use crate::error::{Error, Result};
use crate::geometry::BoundingBox;
use crate::transport::HttpTransport;
use crate::vlm::EnhancedPrompt;

pub const DEFAULT_SCORE_THRESHOLD: f64 = 0.25;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    #[serde(rename = "box")]
    pub bbox: BoundingBox,
    pub score: f64,
    pub backend_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub matched_phrase: Option<String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DetectorKind {
    /// Phrase-grounding transformer; confidence from per-token logits.
    GroundingTransformer,
    /// Real-time detector with text embeddings; objectness × class probability.
    RealtimeEmbedding,
    /// Scripted fixtures for offline runs.
    Mock,
}

fn default_threshold() -> f64 {
    DEFAULT_SCORE_THRESHOLD
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectorSpec {
    pub backend_id: String,
    pub kind: DetectorKind,
    #[serde(default = "default_threshold")]
    pub score_threshold: f64,
    /// Backend parameters: `fixtures` and `scenario` for mocks, `url` and
    /// `reentrant` for remote services.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub extra: BTreeMap<String, Value>,
}

impl DetectorSpec {
    pub fn new(backend_id: impl Into<String>, kind: DetectorKind) -> Self {
        Self {
            backend_id: backend_id.into(),
            kind,
            score_threshold: DEFAULT_SCORE_THRESHOLD,
            extra: BTreeMap::new(),
        }
    }

    pub fn with_extra(mut self, key: &str, value: impl Into<Value>) -> Self {
        self.extra.insert(key.to_string(), value.into());
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.backend_id.trim().is_empty() {
            return Err(Error::Config("backend_id must not be empty".into()));
        }
        if !(0.0..=1.0).contains(&self.score_threshold) {
            return Err(Error::Config(format!(
                "backend `{}`: score_threshold {} outside [0, 1]",
                self.backend_id, self.score_threshold
            )));
        }
        Ok(())
    }

    pub fn extra_str(&self, key: &str) -> Option<&str> {
        self.extra.get(key).and_then(Value::as_str)
    }

    pub fn extra_bool(&self, key: &str) -> Option<bool> {
        match self.extra.get(key)? {
            Value::Bool(b) => Some(*b),
            Value::String(s) => s.parse().ok(),
            _ => None,
        }
    }
}

/// One detection query as a backend sees it.
pub struct DetectionInput<'a> {
    pub image: &'a RgbImage,
    pub image_id: &'a str,
    pub prompt: &'a str,
}

pub trait Detector: Send + Sync {
    fn spec(&self) -> &DetectorSpec;

    /// Whether concurrent calls are safe. Non-reentrant backends are
    /// serialized by the caller.
    fn is_reentrant(&self) -> bool;

    /// Raw scored boxes, before sanitizing, thresholding and ordering.
    fn candidates(&self, input: &DetectionInput<'_>) -> Result<Vec<Detection>>;
}

/// Runs `detector` on one image/prompt pair under the shared output contract.
pub fn detect(
    detector: &dyn Detector,
    image: &RgbImage,
    image_id: &str,
    prompt: &EnhancedPrompt,
) -> Result<Vec<Detection>> {
    if prompt.text.trim().is_empty() {
        return Err(Error::EmptyPrompt);
    }
    let spec = detector.spec();
    if image.width() == 0 || image.height() == 0 {
        return Err(Error::Backend {
            backend_id: spec.backend_id.clone(),
            message: "empty image".into(),
        });
    }
    let raw = detector.candidates(&DetectionInput {
        image,
        image_id,
        prompt: &prompt.text,
    })?;
    Ok(finalize(spec, raw, image.width(), image.height()))
}

fn finalize(spec: &DetectorSpec, raw: Vec<Detection>, width: u32, height: u32) -> Vec<Detection> {
    let mut kept: Vec<Detection> = raw
        .into_iter()
        .filter_map(|mut d| {
            if !d.score.is_finite() || !(0.0..=1.0).contains(&d.score) {
                log::warn!("{}: dropping detection with invalid score {}", spec.backend_id, d.score);
                return None;
            }
            if !d.bbox.is_finite() || d.bbox.x1 >= d.bbox.x2 || d.bbox.y1 >= d.bbox.y2 {
                log::warn!("{}: dropping malformed box {}", spec.backend_id, d.bbox);
                return None;
            }
            let Some(clipped) = d.bbox.clip_to(width, height) else {
                log::debug!("{}: box {} lies outside the image", spec.backend_id, d.bbox);
                return None;
            };
            d.bbox = clipped;
            (d.score >= spec.score_threshold).then_some(d)
        })
        .collect();
    kept.sort_by(|a, b| b.score.total_cmp(&a.score));
    kept
}

/// Instantiates the backend described by `spec`. Relative paths in `extra`
/// resolve against `base_dir`. Remote backends record exchanges in `store`.
pub fn build_detector(
    spec: &DetectorSpec,
    base_dir: &Path,
    mode: RunMode,
    store: Option<Arc<CacheStore>>,
    transport: Option<Arc<dyn HttpTransport>>,
) -> Result<Arc<dyn Detector>> {
    spec.validate()?;
    match spec.kind {
        DetectorKind::Mock => Ok(Arc::new(MockDetector::from_spec(spec, base_dir)?)),
        DetectorKind::GroundingTransformer | DetectorKind::RealtimeEmbedding => {
            Ok(Arc::new(RemoteDetector::from_spec(spec, mode, store, transport)?))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vlm::{passthrough_raw, DetailLevel, PromptVariant, Provenance};

    struct Fixed(DetectorSpec, Vec<Detection>);

    impl Detector for Fixed {
        fn spec(&self) -> &DetectorSpec {
            &self.0
        }
        fn is_reentrant(&self) -> bool {
            true
        }
        fn candidates(&self, _: &DetectionInput<'_>) -> Result<Vec<Detection>> {
            Ok(self.1.clone())
        }
    }

    fn d(b: [f64; 4], score: f64) -> Detection {
        Detection {
            bbox: b.into(),
            score,
            backend_id: "fixed".into(),
            matched_phrase: None,
        }
    }

    fn prompt(text: &str) -> EnhancedPrompt {
        let mut p = passthrough_raw(
            &PromptVariant::new("x", DetailLevel::Standard, "img", "t", Provenance::Fixture, "initial/standard", "m").unwrap(),
        );
        p.text = text.into();
        p
    }

    #[test]
    fn contract_filters_clips_and_orders() {
        let det = Fixed(
            DetectorSpec::new("fixed", DetectorKind::Mock),
            vec![
                d([0.0, 0.0, 10.0, 10.0], 0.3),
                d([5.0, 5.0, 200.0, 20.0], 0.9),
                d([0.0, 0.0, 10.0, 10.0], 0.1),
                d([0.0, 0.0, 10.0, 10.0], f64::NAN),
                d([10.0, 0.0, 5.0, 10.0], 0.8),
                d([150.0, 0.0, 160.0, 10.0], 0.95),
                d([1.0, 1.0, 2.0, 2.0], 0.25),
            ],
        );
        let img = RgbImage::new(100, 50);
        let out = detect(&det, &img, "img", &prompt("mug")).unwrap();
        let scores: Vec<f64> = out.iter().map(|d| d.score).collect();
        assert_eq!(scores, vec![0.9, 0.3, 0.25]);
        assert_eq!(out[0].bbox, BoundingBox::new(5.0, 5.0, 100.0, 20.0));
        assert!(out.iter().all(|d| d.score >= DEFAULT_SCORE_THRESHOLD));
    }

    #[test]
    fn empty_output_is_not_an_error() {
        let det = Fixed(DetectorSpec::new("fixed", DetectorKind::Mock), vec![]);
        assert!(detect(&det, &RgbImage::new(4, 4), "img", &prompt("mug")).unwrap().is_empty());
    }

    #[test]
    fn preconditions() {
        let det = Fixed(DetectorSpec::new("fixed", DetectorKind::Mock), vec![]);
        assert!(matches!(detect(&det, &RgbImage::new(4, 4), "img", &prompt(" ")), Err(Error::EmptyPrompt)));
        assert!(detect(&det, &RgbImage::new(0, 0), "img", &prompt("mug")).is_err());
    }

    #[test]
    fn spec_validation() {
        let mut s = DetectorSpec::new("gd", DetectorKind::GroundingTransformer);
        assert!(s.validate().is_ok());
        s.score_threshold = 1.5;
        assert!(s.validate().is_err());
        let spec: DetectorSpec = serde_json::from_str(r#"{"backend_id":"gd","kind":"grounding_transformer"}"#).unwrap();
        assert_eq!(spec.score_threshold, 0.25);
    }
}
