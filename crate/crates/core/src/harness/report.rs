//! Run report and its csv, json and markdown renderings.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::cache::RunMode;
use crate::detector::Detection;
use crate::error::{Error, Result};
use crate::geometry::BoundingBox;
use crate::metrics::{
    format_pp, format_signed_pp, improvement, round_half_even, ConditionKey, ConditionResult, ConfidencePolicy, MatchCriterion,
};
use crate::vlm::{DetailLevel, EnhancementMethod};

pub const REPORT_SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Csv,
    Json,
    Md,
}

impl ReportFormat {
    pub const ALL: [ReportFormat; 3] = [ReportFormat::Csv, ReportFormat::Json, ReportFormat::Md];

    pub fn extension(self) -> &'static str {
        match self {
            ReportFormat::Csv => "csv",
            ReportFormat::Json => "json",
            ReportFormat::Md => "md",
        }
    }

    /// Parses a comma-separated list such as `csv,json,md`.
    pub fn parse_list(s: &str) -> Result<Vec<ReportFormat>> {
        let mut out: Vec<ReportFormat> = s
            .split(',')
            .map(str::trim)
            .filter(|p| !p.is_empty())
            .map(str::parse)
            .collect::<Result<_>>()?;
        out.sort();
        out.dedup();
        Ok(out)
    }
}

impl FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(ReportFormat::Csv),
            "json" => Ok(ReportFormat::Json),
            "md" | "markdown" => Ok(ReportFormat::Md),
            other => Err(Error::Config(format!("unknown report format `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellGap {
    pub prompt_type: DetailLevel,
    pub enhancement_method: EnhancementMethod,
    pub backend_id: String,
    pub error: String,
    pub n_failed_targets: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum Cell {
    Complete(ConditionResult),
    Gap(CellGap),
}

impl Cell {
    pub fn key(&self) -> ConditionKey {
        match self {
            Cell::Complete(r) => r.key(),
            Cell::Gap(g) => ConditionKey::new(g.prompt_type, g.enhancement_method, g.backend_id.clone()),
        }
    }

    pub fn result(&self) -> Option<&ConditionResult> {
        match self {
            Cell::Complete(r) => Some(r),
            Cell::Gap(_) => None,
        }
    }
}

/// Gain of one enhancement method over the raw prompt within a
/// (prompt type, backend) group.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImprovementRow {
    pub prompt_type: DetailLevel,
    pub backend_id: String,
    pub enhancement_method: EnhancementMethod,
    pub delta_miou_pp: f64,
    pub delta_conf_pp: f64,
}

/// Everything measured for one target under one condition.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TargetRecord {
    pub image_id: String,
    pub target_id: String,
    pub prompt_type: DetailLevel,
    pub enhancement_method: EnhancementMethod,
    pub backend_id: String,
    pub gt_box: BoundingBox,
    pub initial_prompt: String,
    pub prompt_text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub category_valid: Option<bool>,
    pub iou: f64,
    pub confidence: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub matched_box: Option<BoundingBox>,
    pub detections: Vec<Detection>,
}

impl TargetRecord {
    pub fn key(&self) -> ConditionKey {
        ConditionKey::new(self.prompt_type, self.enhancement_method, self.backend_id.clone())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FailureEntry {
    pub image_id: String,
    pub target_id: String,
    pub prompt_type: DetailLevel,
    pub enhancement_method: EnhancementMethod,
    pub backend_id: String,
    pub prompt_text: String,
    pub iou: f64,
    pub confidence: f64,
}

impl FailureEntry {
    pub fn from_record(r: &TargetRecord) -> Self {
        Self {
            image_id: r.image_id.clone(),
            target_id: r.target_id.clone(),
            prompt_type: r.prompt_type,
            enhancement_method: r.enhancement_method,
            backend_id: r.backend_id.clone(),
            prompt_text: r.prompt_text.clone(),
            iou: r.iou,
            confidence: r.confidence,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunMetadata {
    pub config_hash: String,
    pub mode: RunMode,
    pub vlm_model_id: String,
    pub backends: Vec<String>,
    pub prompt_levels: Vec<DetailLevel>,
    pub enhancement_methods: Vec<EnhancementMethod>,
    pub matching: MatchCriterion,
    pub confidence_policy: ConfidencePolicy,
    pub n_images: usize,
    pub n_targets: usize,
    pub vlm_requests: usize,
    pub vlm_cache_hits: usize,
    pub vlm_network_calls: usize,
    pub cache_hit_rate: f64,
    pub category_invalid_count: usize,
    pub failure_iou_threshold: f64,
}

/// Result of one run. Wall-clock timestamps live in `run_context.json`
/// next to the report so the report itself is reproducible byte for byte.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub schema_version: u32,
    pub metadata: RunMetadata,
    pub cells: Vec<Cell>,
    pub improvements: Vec<ImprovementRow>,
    pub failure_index: Vec<FailureEntry>,
    pub targets: Vec<TargetRecord>,
}

impl RunReport {
    pub fn cell(&self, key: &ConditionKey) -> Option<&Cell> {
        self.cells.iter().find(|c| &c.key() == key)
    }

    pub fn result(&self, key: &ConditionKey) -> Option<&ConditionResult> {
        self.cell(key).and_then(Cell::result)
    }

    pub fn gaps(&self) -> impl Iterator<Item = &CellGap> {
        self.cells.iter().filter_map(|c| match c {
            Cell::Gap(g) => Some(g),
            Cell::Complete(_) => None,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_slice(&bytes)?)
    }

    /// Loads `<dir>/report.json`.
    pub fn load_dir(dir: &Path) -> Result<Self> {
        Self::load(&dir.join("report.json"))
    }
}

/// Improvement rows for every complete (level, method ≠ raw, backend) cell
/// whose raw counterpart is also complete.
pub fn improvement_rows(cells: &[Cell]) -> Vec<ImprovementRow> {
    let by_key: BTreeMap<ConditionKey, &ConditionResult> =
        cells.iter().filter_map(|c| c.result().map(|r| (r.key(), r))).collect();
    let mut rows = Vec::new();
    for cell in cells {
        let Some(b) = cell.result() else { continue };
        if b.enhancement_method == EnhancementMethod::Raw {
            continue;
        }
        let raw_key = ConditionKey::new(b.prompt_type, EnhancementMethod::Raw, b.backend_id.clone());
        let Some(a) = by_key.get(&raw_key) else { continue };
        if let Ok(d) = improvement(a, b) {
            rows.push(ImprovementRow {
                prompt_type: b.prompt_type,
                backend_id: b.backend_id.clone(),
                enhancement_method: b.enhancement_method,
                delta_miou_pp: d.delta_miou_pp,
                delta_conf_pp: d.delta_conf_pp,
            });
        }
    }
    rows
}

pub fn render_json(report: &RunReport) -> Result<String> {
    let mut s = serde_json::to_string_pretty(report)?;
    s.push('\n');
    Ok(s)
}

/// One row per cell; numbers at full precision.
pub fn render_csv(report: &RunReport) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let io = |e: csv::Error| Error::Config(format!("csv: {e}"));
    w.write_record([
        "prompt_type",
        "enhancement_method",
        "backend_id",
        "status",
        "miou_percent",
        "mean_confidence_percent",
        "n_targets",
        "n_no_detection",
        "n_category_invalid",
        "error",
    ])
    .map_err(io)?;
    for cell in &report.cells {
        let row: Vec<String> = match cell {
            Cell::Complete(r) => vec![
                r.prompt_type.to_string(),
                r.enhancement_method.to_string(),
                r.backend_id.clone(),
                "complete".into(),
                r.miou_percent.to_string(),
                r.mean_confidence_percent.to_string(),
                r.n_targets.to_string(),
                r.n_no_detection.to_string(),
                r.n_category_invalid.to_string(),
                String::new(),
            ],
            Cell::Gap(g) => vec![
                g.prompt_type.to_string(),
                g.enhancement_method.to_string(),
                g.backend_id.clone(),
                "gap".into(),
                String::new(),
                String::new(),
                String::new(),
                String::new(),
                String::new(),
                g.error.clone(),
            ],
        };
        w.write_record(&row).map_err(io)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Config(format!("csv: {e}")))?;
    String::from_utf8(bytes).map_err(|e| Error::Config(format!("csv: {e}")))
}

fn pct(x: f64) -> String {
    format!("{} %", format_pp(x))
}

/// Table-style layout: one group of rows per
/// prompt type, one row per enhancement method, an mIoU and a confidence
/// column per backend. The best value of each column within a group is
/// bold (all of them on a tie at two decimals). Gaps show as "—" with a
/// footnote naming the error.
pub fn render_markdown(report: &RunReport) -> String {
    let meta = &report.metadata;
    let by_key: BTreeMap<ConditionKey, &Cell> = report.cells.iter().map(|c| (c.key(), c)).collect();
    let mut out = String::new();
    let mut notes: Vec<String> = Vec::new();

    out.push_str("# Detection robustness by prompt type\n\n");
    let _ = writeln!(
        out,
        "Mode: {}. VLM: {}. Images: {}. Targets: {}. Config hash: `{}`.\n",
        meta.mode,
        meta.vlm_model_id,
        meta.n_images,
        meta.n_targets,
        &meta.config_hash[..meta.config_hash.len().min(12)]
    );

    out.push_str("| Initial Prompt Type | Prompt Enhancement Method |");
    for b in &meta.backends {
        let _ = write!(out, " {b} mIoU | {b} Conf |");
    }
    out.push_str("\n|---|---|");
    for _ in &meta.backends {
        out.push_str("---:|---:|");
    }
    out.push('\n');

    for level in &meta.prompt_levels {
        // best value per column, compared at the printed precision
        let mut best: Vec<Option<f64>> = vec![None; meta.backends.len() * 2];
        for (bi, backend) in meta.backends.iter().enumerate() {
            for method in &meta.enhancement_methods {
                let key = ConditionKey::new(*level, *method, backend.clone());
                if let Some(r) = by_key.get(&key).and_then(|c| c.result()) {
                    for (slot, v) in [(bi * 2, r.miou_percent), (bi * 2 + 1, r.mean_confidence_percent)] {
                        let v = round_half_even(v, 2);
                        best[slot] = Some(best[slot].map_or(v, |b| b.max(v)));
                    }
                }
            }
        }
        for (mi, method) in meta.enhancement_methods.iter().enumerate() {
            let group = if mi == 0 { level.title() } else { "" };
            let _ = write!(out, "| {group} | {} |", method.title());
            for (bi, backend) in meta.backends.iter().enumerate() {
                let key = ConditionKey::new(*level, *method, backend.clone());
                match by_key.get(&key) {
                    Some(Cell::Complete(r)) => {
                        for (slot, v) in [(bi * 2, r.miou_percent), (bi * 2 + 1, r.mean_confidence_percent)] {
                            if best[slot] == Some(round_half_even(v, 2)) {
                                let _ = write!(out, " **{}** |", pct(v));
                            } else {
                                let _ = write!(out, " {} |", pct(v));
                            }
                        }
                    }
                    Some(Cell::Gap(g)) => {
                        notes.push(format!("{key}: {}", g.error));
                        let n = notes.len();
                        let _ = write!(out, " —[^{n}] | —[^{n}] |");
                    }
                    None => out.push_str(" — | — |"),
                }
            }
            out.push('\n');
        }
    }

    if !report.improvements.is_empty() {
        out.push_str("\n## Gain over raw prompt (percentage points)\n\n");
        out.push_str("| Initial Prompt Type | Prompt Enhancement Method | Backend | ΔmIoU | ΔConf |\n");
        out.push_str("|---|---|---|---:|---:|\n");
        for row in &report.improvements {
            let _ = writeln!(
                out,
                "| {} | {} | {} | {} | {} |",
                row.prompt_type.title(),
                row.enhancement_method.title(),
                row.backend_id,
                format_signed_pp(row.delta_miou_pp),
                format_signed_pp(row.delta_conf_pp)
            );
        }
    }

    if !notes.is_empty() {
        out.push('\n');
        for (i, note) in notes.iter().enumerate() {
            let _ = writeln!(out, "[^{}]: {note}", i + 1);
        }
    }
    out
}

/// Writes `report.<ext>` for each requested format into `out_dir`.
pub fn emit_report(report: &RunReport, formats: &[ReportFormat], out_dir: &Path) -> Result<Vec<PathBuf>> {
    if formats.is_empty() {
        log::warn!("no report formats requested; nothing written");
        return Ok(Vec::new());
    }
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut written = Vec::new();
    for format in formats {
        let body = match format {
            ReportFormat::Csv => render_csv(report)?,
            ReportFormat::Json => render_json(report)?,
            ReportFormat::Md => render_markdown(report),
        };
        let path = out_dir.join(format!("report.{}", format.extension()));
        fs::write(&path, body).map_err(|e| Error::io(&path, e))?;
        written.push(path);
    }
    Ok(written)
}
