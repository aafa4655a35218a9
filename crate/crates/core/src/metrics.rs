//! Localization and confidence metrics.
//!
//! Each ground-truth target is paired with the prediction that has the
//! largest intersection with it. Targets are matched independently, so one
//! prediction may serve several targets. A target with no overlapping
//! prediction contributes IoU 0 and confidence 0. mIoU and mean confidence
//! average over ground-truth targets, not images.

use std::cmp::Ordering;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::dataset::Target;
use crate::detector::Detection;
use crate::error::{Error, Result};
use crate::geometry::BoundingBox;
use crate::vlm::{DetailLevel, EnhancementMethod};

/// Intersection over union under the half-open box convention.
pub fn iou(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let inter = a.intersection_area(b);
    if inter <= 0.0 {
        return 0.0;
    }
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        0.0
    } else {
        (inter / union).min(1.0)
    }
}

/// What "best prediction" means when pairing a target with a prediction.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchCriterion {
    #[default]
    IntersectionArea,
    /// Highest IoU; for sensitivity analysis only.
    Iou,
}

/// How unmatched targets enter the mean confidence.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConfidencePolicy {
    /// Unmatched targets count as confidence 0.
    #[default]
    ZeroFill,
    /// Average over matched targets only.
    MatchedOnly,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TargetMatch {
    pub target_id: String,
    /// Index into the prediction list, if any prediction overlaps the target.
    pub matched_index: Option<usize>,
    pub matched_detection: Option<Detection>,
    pub intersection_area: f64,
    pub iou: f64,
    pub confidence: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MatchResult {
    pub entries: Vec<TargetMatch>,
}

/// Pairs every target with the prediction of largest intersection area.
/// Ties go to the higher score, then the lower prediction index.
pub fn match_largest_intersection(gts: &[Target], preds: &[Detection]) -> MatchResult {
    match_targets(gts, preds, MatchCriterion::IntersectionArea)
}

pub fn match_targets(gts: &[Target], preds: &[Detection], criterion: MatchCriterion) -> MatchResult {
    let entries = gts
        .iter()
        .map(|gt| {
            let mut best: Option<(usize, f64, f64)> = None; // (index, criterion value, intersection)
            for (idx, pred) in preds.iter().enumerate() {
                let inter = gt.bbox.intersection_area(&pred.bbox);
                if inter <= 0.0 {
                    continue;
                }
                let value = match criterion {
                    MatchCriterion::IntersectionArea => inter,
                    MatchCriterion::Iou => iou(&gt.bbox, &pred.bbox),
                };
                let better = match best {
                    None => true,
                    Some((b_idx, b_value, _)) => match value.total_cmp(&b_value) {
                        Ordering::Greater => true,
                        Ordering::Less => false,
                        // earlier index already holds on equal score
                        Ordering::Equal => pred.score > preds[b_idx].score,
                    },
                };
                if better {
                    best = Some((idx, value, inter));
                }
            }
            match best {
                Some((idx, _, inter)) => TargetMatch {
                    target_id: gt.target_id.clone(),
                    matched_index: Some(idx),
                    matched_detection: Some(preds[idx].clone()),
                    intersection_area: inter,
                    iou: iou(&gt.bbox, &preds[idx].bbox),
                    confidence: preds[idx].score,
                },
                None => TargetMatch {
                    target_id: gt.target_id.clone(),
                    matched_index: None,
                    matched_detection: None,
                    intersection_area: 0.0,
                    iou: 0.0,
                    confidence: 0.0,
                },
            }
        })
        .collect();
    MatchResult { entries }
}

/// One cell of the evaluation grid.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ConditionKey {
    pub prompt_type: DetailLevel,
    pub enhancement_method: EnhancementMethod,
    pub backend_id: String,
}

impl ConditionKey {
    pub fn new(prompt_type: DetailLevel, enhancement_method: EnhancementMethod, backend_id: impl Into<String>) -> Self {
        Self {
            prompt_type,
            enhancement_method,
            backend_id: backend_id.into(),
        }
    }

    /// File-name friendly label, e.g. `pragmatic_ambiguity__raw__gd`.
    pub fn label(&self) -> String {
        format!("{}__{}__{}", self.prompt_type, self.enhancement_method, self.backend_id)
    }
}

impl fmt::Display for ConditionKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} / {} / {}", self.prompt_type, self.enhancement_method, self.backend_id)
    }
}

/// Per-target outcome feeding an aggregate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoredTarget {
    pub image_id: String,
    pub target_id: String,
    pub iou: f64,
    pub confidence: f64,
    pub matched: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub category_valid: Option<bool>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConditionResult {
    pub prompt_type: DetailLevel,
    pub enhancement_method: EnhancementMethod,
    pub backend_id: String,
    pub miou_percent: f64,
    pub mean_confidence_percent: f64,
    pub n_targets: usize,
    pub n_no_detection: usize,
    pub n_category_invalid: usize,
}

impl ConditionResult {
    pub fn key(&self) -> ConditionKey {
        ConditionKey::new(self.prompt_type, self.enhancement_method, self.backend_id.clone())
    }
}

/// Reduces one condition's targets to mIoU and mean confidence, in percent.
/// Targets are sorted by `(image_id, target_id)` first, so the floating-point
/// result does not depend on input order.
pub fn aggregate(key: &ConditionKey, targets: &[ScoredTarget], policy: ConfidencePolicy) -> Result<ConditionResult> {
    if targets.is_empty() {
        return Err(Error::EmptyCondition);
    }
    let mut sorted: Vec<&ScoredTarget> = targets.iter().collect();
    sorted.sort_by(|a, b| (&a.image_id, &a.target_id).cmp(&(&b.image_id, &b.target_id)));

    let n = sorted.len();
    let iou_sum: f64 = sorted.iter().map(|t| t.iou).sum();
    let n_matched = sorted.iter().filter(|t| t.matched).count();
    let conf_sum: f64 = sorted.iter().filter(|t| t.matched).map(|t| t.confidence).sum();
    let conf_denominator = match policy {
        ConfidencePolicy::ZeroFill => n,
        ConfidencePolicy::MatchedOnly => n_matched,
    };
    let mean_conf = if conf_denominator == 0 {
        0.0
    } else {
        conf_sum / conf_denominator as f64
    };
    Ok(ConditionResult {
        prompt_type: key.prompt_type,
        enhancement_method: key.enhancement_method,
        backend_id: key.backend_id.clone(),
        miou_percent: 100.0 * iou_sum / n as f64,
        mean_confidence_percent: 100.0 * mean_conf,
        n_targets: n,
        n_no_detection: n - n_matched,
        n_category_invalid: sorted.iter().filter(|t| t.category_valid == Some(false)).count(),
    })
}

/// Gain of `b` over `a` in absolute percentage points.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Improvement {
    pub delta_miou_pp: f64,
    pub delta_conf_pp: f64,
}

pub fn improvement(a: &ConditionResult, b: &ConditionResult) -> Result<Improvement> {
    if a.prompt_type != b.prompt_type || a.backend_id != b.backend_id {
        return Err(Error::ConditionMismatch(format!("{} vs {}", a.key(), b.key())));
    }
    Ok(Improvement {
        delta_miou_pp: b.miou_percent - a.miou_percent,
        delta_conf_pp: b.mean_confidence_percent - a.mean_confidence_percent,
    })
}

/// Rounds to `decimals` places, ties to even, on the exact binary value.
pub fn round_half_even(x: f64, decimals: usize) -> f64 {
    // std's fixed-precision formatting rounds the exact value half-to-even
    format!("{x:.decimals$}").parse().unwrap_or(x)
}

/// Two-decimal rendering used for every reported percentage.
pub fn format_pp(x: f64) -> String {
    format!("{x:.2}")
}

/// Like [`format_pp`] with an explicit sign; a value that rounds to zero
/// prints as `+0.00`.
pub fn format_signed_pp(x: f64) -> String {
    let r = round_half_even(x, 2);
    let r = if r == 0.0 { 0.0 } else { r };
    format!("{r:+.2}")
}
