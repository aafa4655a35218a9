//! Evaluation over the full condition grid.
//!
//! Images are processed concurrently. For every target the overlay is drawn
//! once, one initial prompt is generated per level and reused by every
//! enhancement method and backend, and each detection is matched against
//! that target alone. A failure inside a cell turns the cell into a gap;
//! replay misses, corrupt store entries and configuration errors abort the
//! run.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use image::RgbImage;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use super::report::{
    improvement_rows, Cell, CellGap, FailureEntry, RunMetadata, RunReport, TargetRecord,
    REPORT_SCHEMA_VERSION,
};
use crate::cache::{CacheStore, RunMode};
use crate::dataset::{load_manifest, load_rgb, AnnotatedImage, Target};
use crate::detector::{build_detector, detect, Detection, Detector};
use crate::error::{Error, Result};
use crate::metrics::{aggregate, match_targets, ConditionKey, ScoredTarget};
use crate::overlay::render_target_overlay;
use crate::transport::{HttpTransport, ReqwestTransport};
use crate::vlm::{passthrough_raw, EnhancedPrompt, EnhancementMethod, PromptVariant, VlmClient, Vocabulary};

/// HTTP transports to use instead of the default client; `None` builds one
/// from the config when the mode needs it.
#[derive(Clone, Default)]
pub struct Transports {
    pub vlm: Option<Arc<dyn HttpTransport>>,
    pub detector: Option<Arc<dyn HttpTransport>>,
}

/// Facts about a run that vary between otherwise identical runs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunContext {
    pub started_at: u64,
    pub finished_at: u64,
    pub manifest: PathBuf,
    pub cache_dir: PathBuf,
    pub output_dir: PathBuf,
    pub mode: RunMode,
    pub workers: usize,
    pub seed: u64,
}

impl RunContext {
    pub fn load_dir(dir: &Path) -> Result<Self> {
        let path = dir.join("run_context.json");
        let bytes = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
        Ok(serde_json::from_slice(&bytes)?)
    }

    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join("run_context.json");
        let mut body = serde_json::to_string_pretty(self)?;
        body.push('\n');
        std::fs::write(&path, body).map_err(|e| Error::io(&path, e))
    }
}

pub struct RunOutcome {
    pub report: RunReport,
    pub context: RunContext,
}

struct Backend {
    detector: Arc<dyn Detector>,
    // held around calls into backends that are not reentrant
    serial: Option<Mutex<()>>,
}

impl Backend {
    fn id(&self) -> &str {
        &self.detector.spec().backend_id
    }

    fn run(&self, image: &RgbImage, image_id: &str, prompt: &EnhancedPrompt) -> Result<Vec<Detection>> {
        let _guard = self.serial.as_ref().map(|m| m.lock().unwrap_or_else(|p| p.into_inner()));
        detect(self.detector.as_ref(), image, image_id, prompt)
    }
}

struct Ctx<'a> {
    config: &'a RunConfig,
    manifest_dir: PathBuf,
    vlm: VlmClient,
    backends: Vec<Backend>,
    vocabulary: &'static Vocabulary,
}

struct CellFailure {
    key: ConditionKey,
    image_id: String,
    target_id: String,
    error: String,
}

#[derive(Default)]
struct ImageOutcome {
    records: Vec<TargetRecord>,
    failures: Vec<CellFailure>,
    category_invalid: usize,
}

/// Keeps recoverable errors as cell failures and passes fatal ones up.
fn soften(e: Error) -> Result<String> {
    if e.is_fatal() {
        Err(e)
    } else {
        Ok(e.to_string())
    }
}

fn now_secs() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

pub fn run(config: &RunConfig) -> Result<RunOutcome> {
    run_with(config, Transports::default())
}

pub fn run_with(config: &RunConfig, transports: Transports) -> Result<RunOutcome> {
    config.validate()?;
    let started_at = now_secs();
    let manifest_path = config.manifest_path();
    let manifest_dir = manifest_path.parent().map(Path::to_path_buf).unwrap_or_default();
    let images = load_manifest(&manifest_path)?;

    let store = Arc::new(CacheStore::open(config.cache_path(), config.mode)?);
    let needs_network = config.mode != RunMode::Replay;
    let default_transport = if needs_network && (transports.vlm.is_none() || transports.detector.is_none()) {
        let t: Arc<dyn HttpTransport> =
            Arc::new(ReqwestTransport::new(Duration::from_secs(config.vlm.timeout_secs))?);
        Some(t)
    } else {
        None
    };
    let vlm_transport = if needs_network {
        transports.vlm.or_else(|| default_transport.clone())
    } else {
        None
    };
    let det_transport = if needs_network {
        transports.detector.or_else(|| default_transport.clone())
    } else {
        None
    };

    let api_key = std::env::var(&config.vlm.api_key_env).ok().filter(|k| !k.is_empty());
    if needs_network && api_key.is_none() {
        log::warn!("{} is not set; VLM requests will be unauthenticated", config.vlm.api_key_env);
    }
    let vlm = VlmClient::new(config.vlm.clone(), config.mode, Some(store.clone()), vlm_transport)?
        .with_api_key(api_key);

    let backends = config
        .backends
        .iter()
        .map(|spec| {
            let detector = build_detector(
                spec,
                &config.base_dir,
                config.mode,
                Some(store.clone()),
                det_transport.clone(),
            )?;
            let serial = (!detector.is_reentrant()).then(|| Mutex::new(()));
            Ok(Backend { detector, serial })
        })
        .collect::<Result<Vec<_>>>()?;

    let ctx = Ctx {
        config,
        manifest_dir,
        vlm,
        backends,
        vocabulary: Vocabulary::bundled(),
    };

    // the seed only decides the order tasks are handed out
    let mut order: Vec<&AnnotatedImage> = images.iter().collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(config.seed));

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.workers)
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?;
    let outcomes: Vec<ImageOutcome> =
        pool.install(|| order.par_iter().map(|img| evaluate_image(&ctx, img)).collect::<Result<_>>())?;

    let report = assemble(&ctx, &images, outcomes)?;
    let context = RunContext {
        started_at,
        finished_at: now_secs(),
        manifest: std::path::absolute(&manifest_path).unwrap_or(manifest_path),
        cache_dir: std::path::absolute(store.root()).unwrap_or_else(|_| store.root().to_path_buf()),
        output_dir: config.output_path(),
        mode: config.mode,
        workers: config.workers,
        seed: config.seed,
    };
    Ok(RunOutcome { report, context })
}

fn evaluate_image(ctx: &Ctx<'_>, image: &AnnotatedImage) -> Result<ImageOutcome> {
    let mut out = ImageOutcome::default();
    let fail_all = |out: &mut ImageOutcome, target: &Target, levels_methods: &[(crate::vlm::DetailLevel, EnhancementMethod)], error: &str| {
        for (level, method) in levels_methods {
            for b in &ctx.backends {
                out.failures.push(CellFailure {
                    key: ConditionKey::new(*level, *method, b.id()),
                    image_id: image.image_id.clone(),
                    target_id: target.target_id.clone(),
                    error: error.to_string(),
                });
            }
        }
    };
    let cfg = ctx.config;
    let grid: Vec<_> = cfg
        .prompt_levels
        .iter()
        .flat_map(|l| cfg.enhancement_methods.iter().map(move |m| (*l, *m)))
        .collect();

    let pixels = match load_rgb(&image.resolve_path(&ctx.manifest_dir)) {
        Ok(p) => p,
        Err(e) => {
            let msg = soften(e)?;
            for t in &image.targets {
                fail_all(&mut out, t, &grid, &msg);
            }
            return Ok(out);
        }
    };
    if pixels.dimensions() != (image.width, image.height) {
        return Err(Error::Config(format!(
            "image `{}` is {}x{}, manifest says {}x{}",
            image.image_id,
            pixels.width(),
            pixels.height(),
            image.width,
            image.height
        )));
    }

    for target in &image.targets {
        let overlay = match render_target_overlay(&pixels, &target.bbox, &cfg.overlay) {
            Ok(o) => o,
            Err(e) => {
                let msg = soften(e)?;
                fail_all(&mut out, target, &grid, &msg);
                continue;
            }
        };
        for level in &cfg.prompt_levels {
            let level_grid: Vec<_> = cfg.enhancement_methods.iter().map(|m| (*level, *m)).collect();
            let initial: PromptVariant =
                match ctx.vlm.generate_initial_prompt(&overlay, *level, &image.image_id, &target.target_id) {
                    Ok(p) => p,
                    Err(e) => {
                        let msg = soften(e)?;
                        fail_all(&mut out, target, &level_grid, &msg);
                        continue;
                    }
                };
            for method in &cfg.enhancement_methods {
                let enhanced = match method {
                    EnhancementMethod::Raw => Ok(passthrough_raw(&initial)),
                    EnhancementMethod::KeyObjectExtraction => ctx.vlm.enhance_key_object(&pixels, &initial),
                    EnhancementMethod::SemanticCategoryGrounding => {
                        ctx.vlm.enhance_semantic_category(&pixels, &initial, ctx.vocabulary)
                    }
                };
                let enhanced = match enhanced {
                    Ok(p) => p,
                    Err(e) => {
                        let msg = soften(e)?;
                        fail_all(&mut out, target, &[(*level, *method)], &msg);
                        continue;
                    }
                };
                if enhanced.category_valid == Some(false) {
                    out.category_invalid += 1;
                }
                for backend in &ctx.backends {
                    let key = ConditionKey::new(*level, *method, backend.id());
                    let detections = match backend.run(&pixels, &image.image_id, &enhanced) {
                        Ok(d) => d,
                        Err(e) => {
                            out.failures.push(CellFailure {
                                key,
                                image_id: image.image_id.clone(),
                                target_id: target.target_id.clone(),
                                error: soften(e)?,
                            });
                            continue;
                        }
                    };
                    let m = match_targets(std::slice::from_ref(target), &detections, cfg.metrics.matching);
                    let entry = &m.entries[0];
                    out.records.push(TargetRecord {
                        image_id: image.image_id.clone(),
                        target_id: target.target_id.clone(),
                        prompt_type: *level,
                        enhancement_method: *method,
                        backend_id: backend.id().to_string(),
                        gt_box: target.bbox,
                        initial_prompt: initial.text.clone(),
                        prompt_text: enhanced.text.clone(),
                        category_valid: enhanced.category_valid,
                        iou: entry.iou,
                        confidence: entry.confidence,
                        matched_box: entry.matched_detection.as_ref().map(|d| d.bbox),
                        detections,
                    });
                }
            }
        }
    }
    Ok(out)
}

fn assemble(ctx: &Ctx<'_>, images: &[AnnotatedImage], outcomes: Vec<ImageOutcome>) -> Result<RunReport> {
    let cfg = ctx.config;
    let backend_rank: BTreeMap<&str, usize> =
        cfg.backends.iter().enumerate().map(|(i, b)| (b.backend_id.as_str(), i)).collect();
    let mut records = Vec::new();
    let mut failures = Vec::new();
    let mut category_invalid = 0;
    for o in outcomes {
        records.extend(o.records);
        failures.extend(o.failures);
        category_invalid += o.category_invalid;
    }
    let cell_order = |k: &ConditionKey| (k.prompt_type, k.enhancement_method, backend_rank[k.backend_id.as_str()]);
    records.sort_by(|a, b| {
        (cell_order(&a.key()), &a.image_id, &a.target_id).cmp(&(cell_order(&b.key()), &b.image_id, &b.target_id))
    });
    failures.sort_by(|a, b| {
        (cell_order(&a.key), &a.image_id, &a.target_id).cmp(&(cell_order(&b.key), &b.image_id, &b.target_id))
    });

    let mut by_cell: BTreeMap<ConditionKey, Vec<ScoredTarget>> = BTreeMap::new();
    for r in &records {
        by_cell.entry(r.key()).or_default().push(ScoredTarget {
            image_id: r.image_id.clone(),
            target_id: r.target_id.clone(),
            iou: r.iou,
            confidence: r.confidence,
            matched: r.matched_box.is_some(),
            category_valid: r.category_valid,
        });
    }
    let mut failed: BTreeMap<ConditionKey, Vec<&CellFailure>> = BTreeMap::new();
    for f in &failures {
        failed.entry(f.key.clone()).or_default().push(f);
    }

    let mut cells = Vec::new();
    for level in &cfg.prompt_levels {
        for method in &cfg.enhancement_methods {
            for spec in &cfg.backends {
                let key = ConditionKey::new(*level, *method, spec.backend_id.clone());
                let gap = |error: String, n_failed_targets: usize| {
                    Cell::Gap(CellGap {
                        prompt_type: *level,
                        enhancement_method: *method,
                        backend_id: spec.backend_id.clone(),
                        error,
                        n_failed_targets,
                    })
                };
                if let Some(fs) = failed.get(&key) {
                    let first = fs[0];
                    let msg = format!("{} ({}/{})", first.error, first.image_id, first.target_id);
                    log::warn!("cell {key} is a gap: {msg}");
                    cells.push(gap(msg, fs.len()));
                    continue;
                }
                let targets = by_cell.get(&key).map(Vec::as_slice).unwrap_or_default();
                match aggregate(&key, targets, cfg.metrics.confidence) {
                    Ok(r) => cells.push(Cell::Complete(r)),
                    Err(e) => cells.push(gap(e.to_string(), 0)),
                }
            }
        }
    }

    let stats = ctx.vlm.stats();
    let failure_index = records
        .iter()
        .filter(|r| r.iou < cfg.failure_iou_threshold)
        .map(FailureEntry::from_record)
        .collect();
    Ok(RunReport {
        schema_version: REPORT_SCHEMA_VERSION,
        metadata: RunMetadata {
            config_hash: cfg.config_hash()?,
            mode: cfg.mode,
            vlm_model_id: cfg.vlm.model_id.clone(),
            backends: cfg.backends.iter().map(|b| b.backend_id.clone()).collect(),
            prompt_levels: cfg.prompt_levels.clone(),
            enhancement_methods: cfg.enhancement_methods.clone(),
            matching: cfg.metrics.matching,
            confidence_policy: cfg.metrics.confidence,
            n_images: images.len(),
            n_targets: images.iter().map(|i| i.targets.len()).sum(),
            vlm_requests: stats.requests,
            vlm_cache_hits: stats.cache_hits,
            vlm_network_calls: stats.network_calls,
            cache_hit_rate: if stats.requests == 0 {
                0.0
            } else {
                stats.cache_hits as f64 / stats.requests as f64
            },
            category_invalid_count: category_invalid,
            failure_iou_threshold: cfg.failure_iou_threshold,
        },
        improvements: improvement_rows(&cells),
        cells,
        failure_index,
        targets: records,
    })
}

/// Writes the configured report formats and `run_context.json` into
/// `out_dir`.
pub fn write_outputs(outcome: &RunOutcome, config: &RunConfig, out_dir: &Path) -> Result<Vec<PathBuf>> {
    let written = super::report::emit_report(&outcome.report, &config.report_formats, out_dir)?;
    outcome.context.write_dir(out_dir)?;
    Ok(written)
}
