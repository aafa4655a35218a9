//! Reference implementations the library is checked against. Nothing here
//! calls into the metric or matching code under test.

#![allow(dead_code)]

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde_json::Value;

pub fn bundle_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../bundle")
}

/// Writes straight to the process stdout so the line shows up even when
/// libtest captures output.
pub fn verdict(name: &str, outcome: Result<String, String>, elapsed: Duration, budget: Duration) {
    let outcome = outcome.and_then(|detail| {
        if elapsed <= budget {
            Ok(detail)
        } else {
            Err(format!("{detail}; took {elapsed:.2?}, budget {budget:.0?}"))
        }
    });
    let line = match &outcome {
        Ok(detail) => format!("PASS {name}: {detail} ({elapsed:.2?})\n"),
        Err(why) => format!("FAIL {name}: {why} ({elapsed:.2?})\n"),
    };
    let mut out = std::io::stdout().lock();
    let _ = out.write_all(line.as_bytes());
    let _ = out.flush();
    if let Err(why) = outcome {
        panic!("{name}: {why}");
    }
}

pub type IBox = [i64; 4];

/// Unit cells `(x, y)` with `x1 <= x < x2`, `y1 <= y < y2`.
pub fn cells(b: IBox) -> HashSet<(i64, i64)> {
    let mut s = HashSet::new();
    for x in b[0]..b[2] {
        for y in b[1]..b[3] {
            s.insert((x, y));
        }
    }
    s
}

pub fn raster_intersection(a: IBox, b: IBox) -> usize {
    cells(a).intersection(&cells(b)).count()
}

pub fn raster_iou(a: IBox, b: IBox) -> f64 {
    let (ca, cb) = (cells(a), cells(b));
    let inter = ca.intersection(&cb).count();
    let union = ca.union(&cb).count();
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

/// Index of the prediction each ground truth should be matched to:
/// greatest shared cell count, then higher score, then lower index.
pub fn brute_force_match(gts: &[IBox], preds: &[(IBox, f64)]) -> Vec<Option<usize>> {
    gts.iter()
        .map(|g| {
            let mut best: Option<(usize, usize)> = None; // (intersection, index)
            for (i, (p, score)) in preds.iter().enumerate() {
                let inter = raster_intersection(*g, *p);
                if inter == 0 {
                    continue;
                }
                best = match best {
                    None => Some((inter, i)),
                    Some((bi, bidx)) => {
                        let wins = inter > bi || (inter == bi && *score > preds[bidx].1);
                        Some(if wins { (inter, i) } else { (bi, bidx) })
                    }
                };
            }
            best.map(|(_, i)| i)
        })
        .collect()
}

fn norm(s: &str) -> String {
    s.split_whitespace().map(str::to_lowercase).collect::<Vec<_>>().join(" ")
}

fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn vocabulary() -> HashSet<String> {
    let assets = Path::new(env!("CARGO_MANIFEST_DIR")).join("assets");
    ["coco_categories.txt", "lvis_categories.txt"]
        .iter()
        .flat_map(|f| {
            fs::read_to_string(assets.join(f))
                .unwrap()
                .lines()
                .flat_map(|l| l.split('/').map(norm).collect::<Vec<_>>())
                .collect::<Vec<_>>()
        })
        .filter(|n| !n.is_empty())
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleCell {
    pub miou_percent: f64,
    pub mean_confidence_percent: f64,
    pub n_targets: usize,
    pub n_no_detection: usize,
    pub n_category_invalid: usize,
}

fn ibox(v: &Value) -> IBox {
    let a = v.as_array().expect("box array");
    let mut out = [0i64; 4];
    for (o, x) in out.iter_mut().zip(a) {
        let f = x.as_f64().unwrap();
        assert_eq!(f.fract(), 0.0, "fixture boxes are integer");
        *o = f as i64;
    }
    out
}

/// Recomputes every cell of the bundle from its source files: the scene
/// transcript, the fixture rules and the bundled vocabulary. Keys are
/// `(level, method, backend)` as written in the report.
pub fn bundle_oracle(bundle: &Path) -> BTreeMap<(String, String, String), OracleCell> {
    let scenes: Value = serde_json::from_str(&fs::read_to_string(bundle.join("source/scenes.json")).unwrap()).unwrap();
    let config: toml::Value = toml::from_str(&fs::read_to_string(bundle.join("config.toml")).unwrap()).unwrap();
    let (w, h) = (scenes["width"].as_i64().unwrap(), scenes["height"].as_i64().unwrap());
    let vocab = vocabulary();
    let levels = ["underdetailed", "standard", "overdetailed", "pragmatic_ambiguity"];
    let methods = ["raw", "key_object_extraction", "semantic_category_grounding"];

    let mut per_cell: BTreeMap<(String, String, String), Vec<(f64, f64, bool, bool)>> = BTreeMap::new();
    for backend in config["backends"].as_array().unwrap() {
        let id = backend["backend_id"].as_str().unwrap();
        let threshold = backend["score_threshold"].as_float().unwrap();
        let scenario = backend["extra"]["scenario"].as_str().unwrap();
        let fixture_dir = backend["extra"]["fixtures"].as_str().unwrap();
        let rules: Value = serde_json::from_str(
            &fs::read_to_string(bundle.join(fixture_dir).join(format!("{scenario}.json"))).unwrap(),
        )
        .unwrap();
        for scene in scenes["scenes"].as_array().unwrap() {
            let image_id = scene["image_id"].as_str().unwrap();
            for t in scene["targets"].as_array().unwrap() {
                let gt = ibox(&t["box"]);
                for level in levels {
                    let initial = t["prompts"][level].as_str().unwrap().trim().to_string();
                    let koe = t["key_object"][level].as_str().unwrap().trim().to_string();
                    let category = norm(t["category"][level].as_str().unwrap());
                    let invalid = !vocab.contains(&category);
                    for method in methods {
                        let prompt = match method {
                            "raw" => initial.clone(),
                            "key_object_extraction" => koe.clone(),
                            _ => category.clone(),
                        };
                        let rule = rules.as_array().unwrap().iter().find(|r| {
                            r["image_id"].as_str().map_or(true, |i| i == image_id)
                                && norm(&prompt).contains(&norm(r["prompt_substring"].as_str().unwrap()))
                        });
                        let mut preds: Vec<(IBox, f64)> = Vec::new();
                        for d in rule.map(|r| r["detections"].as_array().unwrap().clone()).unwrap_or_default() {
                            let score = if let Some(s) = d.get("score") {
                                s.as_f64().unwrap()
                            } else if let Some(l) = d.get("token_logits") {
                                l.as_array()
                                    .unwrap()
                                    .iter()
                                    .map(|x| logistic(x.as_f64().unwrap()))
                                    .fold(f64::MIN, f64::max)
                            } else {
                                d["objectness"].as_f64().unwrap() * d["class_prob"].as_f64().unwrap()
                            };
                            let b = ibox(&d["box"]);
                            let clipped = [b[0].max(0), b[1].max(0), b[2].min(w), b[3].min(h)];
                            if clipped[0] >= clipped[2] || clipped[1] >= clipped[3] || score < threshold {
                                continue;
                            }
                            preds.push((clipped, score));
                        }
                        preds.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap());
                        let m = brute_force_match(&[gt], &preds)[0];
                        let (iou, conf) = match m {
                            Some(i) => (raster_iou(gt, preds[i].0), preds[i].1),
                            None => (0.0, 0.0),
                        };
                        let flagged = method == "semantic_category_grounding" && invalid;
                        per_cell
                            .entry((level.to_string(), method.to_string(), id.to_string()))
                            .or_default()
                            .push((iou, conf, m.is_none(), flagged));
                    }
                }
            }
        }
    }
    per_cell
        .into_iter()
        .map(|(k, v)| {
            let n = v.len() as f64;
            let cell = OracleCell {
                miou_percent: 100.0 * v.iter().map(|x| x.0).sum::<f64>() / n,
                mean_confidence_percent: 100.0 * v.iter().map(|x| x.1).sum::<f64>() / n,
                n_targets: v.len(),
                n_no_detection: v.iter().filter(|x| x.2).count(),
                n_category_invalid: v.iter().filter(|x| x.3).count(),
            };
            (k, cell)
        })
        .collect()
}
