//! Renders low-IoU cases for inspection.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::report::{RunReport, TargetRecord};
use crate::dataset::load_rgb;
use crate::detector::Detection;
use crate::error::{Error, Result};
use crate::overlay::{render_detections, save_png, OverlayStyle};
use crate::vlm::{DetailLevel, EnhancementMethod};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FailureCase {
    pub image_id: String,
    pub target_id: String,
    pub prompt_type: DetailLevel,
    pub enhancement_method: EnhancementMethod,
    pub backend_id: String,
    pub prompt_text: String,
    pub iou: f64,
    pub confidence: f64,
    /// Path of the render relative to the failures directory.
    pub render: PathBuf,
}

/// Records with `iou < threshold`, in report order.
pub fn select_failures(report: &RunReport, threshold: f64) -> Vec<&TargetRecord> {
    report.targets.iter().filter(|r| r.iou < threshold).collect()
}

fn render_name(r: &TargetRecord) -> PathBuf {
    PathBuf::from(&r.image_id).join(format!(
        "{}__{}__{}__{}.png",
        r.prompt_type, r.enhancement_method, r.backend_id, r.target_id
    ))
}

/// Writes one render per failing record plus `index.json` into `out_dir`.
/// `images` maps image ids to files; ground truth is drawn in green,
/// predictions in red with their confidence.
pub fn export_failures(
    report: &RunReport,
    threshold: f64,
    images: &BTreeMap<String, PathBuf>,
    out_dir: &Path,
) -> Result<Vec<FailureCase>> {
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let gt_style = OverlayStyle::new([0, 200, 0], 2);
    let pred_style = OverlayStyle::new([255, 0, 0], 2);
    let mut cases = Vec::new();
    let mut loaded: BTreeMap<&str, image::RgbImage> = BTreeMap::new();
    for r in select_failures(report, threshold) {
        if !loaded.contains_key(r.image_id.as_str()) {
            let path = images
                .get(&r.image_id)
                .ok_or_else(|| Error::Config(format!("no image file for `{}`", r.image_id)))?;
            loaded.insert(&r.image_id, load_rgb(path)?);
        }
        let img = &loaded[r.image_id.as_str()];
        let preds: &[Detection] = &r.detections;
        let canvas = render_detections(img, &[r.gt_box], preds, &gt_style, &pred_style)?;
        let render = render_name(r);
        save_png(&out_dir.join(&render), &canvas)?;
        cases.push(FailureCase {
            image_id: r.image_id.clone(),
            target_id: r.target_id.clone(),
            prompt_type: r.prompt_type,
            enhancement_method: r.enhancement_method,
            backend_id: r.backend_id.clone(),
            prompt_text: r.prompt_text.clone(),
            iou: r.iou,
            confidence: r.confidence,
            render,
        });
    }
    let index = out_dir.join("index.json");
    let mut body = serde_json::to_string_pretty(&cases)?;
    body.push('\n');
    fs::write(&index, body).map_err(|e| Error::io(&index, e))?;
    Ok(cases)
}
