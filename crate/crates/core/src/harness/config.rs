//! Run configuration, read from a versioned TOML document.
//!
//! ```toml
//! schema_version = 1
//! manifest = "manifest.jsonl"
//! mode = "replay"
//! output_dir = "out"
//! prompt_levels = ["standard", "pragmatic_ambiguity"]
//! enhancement_methods = ["raw", "semantic_category_grounding"]
//!
//! [vlm]
//! model_id = "gpt-5-2025-08-07"
//! cache_dir = "replay_store"
//!
//! [[backends]]
//! backend_id = "gd"
//! kind = "mock"
//! extra = { fixtures = "fixtures" }
//! ```
//!
//! Relative paths resolve against the directory holding the config file.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::report::ReportFormat;
use crate::cache::{canonical_key, RunMode};
use crate::detector::DetectorSpec;
use crate::error::{Error, Result};
use crate::metrics::{ConfidencePolicy, MatchCriterion};
use crate::overlay::OverlayStyle;
use crate::vlm::{DetailLevel, EnhancementMethod, VlmSettings};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricsSettings {
    pub matching: MatchCriterion,
    pub confidence: ConfidencePolicy,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

fn default_workers() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

fn all_levels() -> Vec<DetailLevel> {
    DetailLevel::ALL.to_vec()
}

fn all_methods() -> Vec<EnhancementMethod> {
    EnhancementMethod::ALL.to_vec()
}

fn all_formats() -> Vec<ReportFormat> {
    ReportFormat::ALL.to_vec()
}

fn default_failure_threshold() -> f64 {
    0.5
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    pub manifest: PathBuf,
    #[serde(default)]
    pub mode: RunMode,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    /// Shuffles task order only; reported numbers never depend on it.
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_workers")]
    pub workers: usize,
    #[serde(default = "all_levels")]
    pub prompt_levels: Vec<DetailLevel>,
    #[serde(default = "all_methods")]
    pub enhancement_methods: Vec<EnhancementMethod>,
    #[serde(default = "all_formats")]
    pub report_formats: Vec<ReportFormat>,
    /// Targets with IoU below this land in the failure index.
    #[serde(default = "default_failure_threshold")]
    pub failure_iou_threshold: f64,
    #[serde(default)]
    pub vlm: VlmSettings,
    #[serde(default)]
    pub overlay: OverlayStyle,
    #[serde(default)]
    pub metrics: MetricsSettings,
    pub backends: Vec<DetectorSpec>,
    /// Directory relative paths resolve against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        let base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::from_toml_str(&text, base_dir)
    }

    /// Parses and normalizes a config; levels and methods are put in
    /// canonical order with duplicates removed.
    pub fn from_toml_str(text: &str, base_dir: impl Into<PathBuf>) -> Result<Self> {
        let mut config: RunConfig =
            toml::from_str(text).map_err(|e| Error::Config(format!("invalid config: {e}")))?;
        config.base_dir = base_dir.into();
        config.prompt_levels.sort();
        config.prompt_levels.dedup();
        config.enhancement_methods.sort();
        config.enhancement_methods.dedup();
        config.report_formats.sort();
        config.report_formats.dedup();
        Ok(config)
    }

    pub fn resolve(&self, path: &Path) -> PathBuf {
        if path.is_absolute() {
            path.to_path_buf()
        } else {
            self.base_dir.join(path)
        }
    }

    pub fn manifest_path(&self) -> PathBuf {
        self.resolve(&self.manifest)
    }

    pub fn output_path(&self) -> PathBuf {
        self.resolve(&self.output_dir)
    }

    /// Store directory: `vlm.cache_dir` when set, else `<output_dir>/cache`.
    pub fn cache_path(&self) -> PathBuf {
        match &self.vlm.cache_dir {
            Some(dir) => self.resolve(dir),
            None => self.output_path().join("cache"),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "unsupported schema_version {} (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        if self.backends.is_empty() {
            return Err(Error::Config("at least one backend is required".into()));
        }
        if self.prompt_levels.is_empty() {
            return Err(Error::Config("prompt_levels must not be empty".into()));
        }
        if self.enhancement_methods.is_empty() {
            return Err(Error::Config("enhancement_methods must not be empty".into()));
        }
        if self.workers == 0 {
            return Err(Error::Config("workers must be at least 1".into()));
        }
        if self.vlm.max_in_flight == 0 {
            return Err(Error::Config("vlm.max_in_flight must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.failure_iou_threshold) {
            return Err(Error::Config(format!(
                "failure_iou_threshold {} outside [0, 1]",
                self.failure_iou_threshold
            )));
        }
        self.overlay
            .validate()
            .map_err(|e| Error::Config(e.to_string()))?;
        let mut ids = Vec::new();
        for spec in &self.backends {
            spec.validate()?;
            if ids.contains(&spec.backend_id.as_str()) {
                return Err(Error::Config(format!("duplicate backend_id `{}`", spec.backend_id)));
            }
            ids.push(&spec.backend_id);
        }
        if self.mode == RunMode::Replay && !self.cache_path().is_dir() {
            return Err(Error::Config(format!(
                "replay store not found: {}",
                self.cache_path().display()
            )));
        }
        Ok(())
    }

    /// Hash of everything that can change reported numbers. Mode, workers,
    /// seed, paths of outputs and stores, and credentials are excluded, so a
    /// replay of a live run carries the same hash.
    pub fn config_hash(&self) -> Result<String> {
        let v = json!({
            "schema_version": self.schema_version,
            "manifest": self.manifest,
            "prompt_levels": self.prompt_levels,
            "enhancement_methods": self.enhancement_methods,
            "failure_iou_threshold": self.failure_iou_threshold,
            "vlm": {
                "base_url": self.vlm.base_url,
                "model_id": self.vlm.model_id,
                "decoding": self.vlm.decoding,
            },
            "overlay": self.overlay,
            "metrics": self.metrics,
            "backends": self.backends,
        });
        canonical_key(&v)
    }
}
