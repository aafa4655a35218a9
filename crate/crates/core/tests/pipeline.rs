mod common;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use common::bundle_dir;
use promptbench::cache::RunMode;
use promptbench::dataset::load_manifest;
use promptbench::error::{Error, TransportError};
use promptbench::harness::{
    export_failures, render_json, run_with, write_outputs, Cell, RunConfig, RunContext, RunReport, Transports,
};
use promptbench::transport::{CountingTransport, HttpTransport, OfflineTransport};
use promptbench::vlm::{DetailLevel, EnhancementMethod};

fn copy_dir(from: &Path, to: &Path) {
    fs::create_dir_all(to).unwrap();
    for entry in fs::read_dir(from).unwrap() {
        let entry = entry.unwrap();
        let dest = to.join(entry.file_name());
        if entry.file_type().unwrap().is_dir() {
            copy_dir(&entry.path(), &dest);
        } else {
            fs::copy(entry.path(), dest).unwrap();
        }
    }
}

fn config(out: &Path, mode: RunMode, store: PathBuf) -> RunConfig {
    let mut cfg = RunConfig::load(&bundle_dir().join("config.toml")).unwrap();
    cfg.mode = mode;
    cfg.output_dir = out.to_path_buf();
    cfg.vlm.cache_dir = Some(store);
    cfg
}

fn counted() -> (Arc<CountingTransport>, Transports) {
    let counter = Arc::new(CountingTransport::new(Arc::new(OfflineTransport)));
    let t: Arc<dyn HttpTransport> = counter.clone();
    (
        counter,
        Transports {
            vlm: Some(t.clone()),
            detector: Some(t),
        },
    )
}

#[test]
fn single_cell_grid() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = config(tmp.path(), RunMode::Replay, bundle_dir().join("replay_store"));
    cfg.prompt_levels = vec![DetailLevel::Standard];
    cfg.enhancement_methods = vec![EnhancementMethod::Raw];
    cfg.backends.truncate(1);
    let report = run_with(&cfg, counted().1).unwrap().report;
    assert_eq!(report.cells.len(), 1);
    assert!(report.improvements.is_empty());
    assert_eq!(report.targets.len(), report.metadata.n_targets);
}

#[test]
fn cached_rerun_makes_no_network_calls() {
    let tmp = tempfile::tempdir().unwrap();
    let store = tmp.path().join("store");
    copy_dir(&bundle_dir().join("replay_store"), &store);
    let cfg = config(&tmp.path().join("out"), RunMode::Cached, store);
    let (counter, transports) = counted();
    let report = run_with(&cfg, transports).unwrap().report;
    assert_eq!(counter.calls(), 0);
    assert_eq!(report.metadata.vlm_network_calls, 0);
    assert_eq!(report.metadata.cache_hit_rate, 1.0);
    assert_eq!(report.gaps().count(), 0);
}

#[test]
fn cached_and_replay_agree() {
    let tmp = tempfile::tempdir().unwrap();
    let store = tmp.path().join("store");
    copy_dir(&bundle_dir().join("replay_store"), &store);
    let cached = run_with(&config(&tmp.path().join("a"), RunMode::Cached, store.clone()), counted().1).unwrap();
    let replay = run_with(&config(&tmp.path().join("b"), RunMode::Replay, store), counted().1).unwrap();
    let (mut a, b) = (cached.report, replay.report);
    assert_eq!(a.metadata.mode, RunMode::Cached);
    a.metadata.mode = RunMode::Replay;
    assert_eq!(render_json(&a).unwrap(), render_json(&b).unwrap());
}

struct Refusing;

impl HttpTransport for Refusing {
    fn post_json(&self, _url: &str, _bearer: Option<&str>, _body: &[u8]) -> Result<Vec<u8>, TransportError> {
        Err(TransportError::permanent("HTTP 401: unauthorized"))
    }
}

#[test]
fn permanent_vlm_errors_become_gaps() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = config(&tmp.path().join("out"), RunMode::Live, tmp.path().join("store"));
    cfg.prompt_levels = vec![DetailLevel::Standard];
    let refusing: Arc<dyn HttpTransport> = Arc::new(Refusing);
    let transports = Transports {
        vlm: Some(refusing.clone()),
        detector: Some(refusing),
    };
    let report = run_with(&cfg, transports).unwrap().report;
    assert_eq!(report.cells.len(), 6);
    assert_eq!(report.gaps().count(), 6);
    assert!(report.improvements.is_empty());
    for cell in &report.cells {
        match cell {
            Cell::Gap(g) => {
                assert!(g.error.contains("401"), "{}", g.error);
                assert_eq!(g.n_failed_targets, report.metadata.n_targets);
            }
            Cell::Complete(_) => panic!("expected a gap"),
        }
    }
}

#[test]
fn replay_miss_aborts() {
    let tmp = tempfile::tempdir().unwrap();
    let store = tmp.path().join("empty");
    fs::create_dir_all(&store).unwrap();
    let cfg = config(&tmp.path().join("out"), RunMode::Replay, store);
    let (counter, transports) = counted();
    match run_with(&cfg, transports) {
        Err(Error::ReplayMiss(_)) => {}
        Err(e) => panic!("unexpected error {e}"),
        Ok(_) => panic!("replay against an empty store succeeded"),
    }
    assert_eq!(counter.calls(), 0);
}

#[test]
fn corrupt_entry_is_fatal_in_replay() {
    let tmp = tempfile::tempdir().unwrap();
    let store = tmp.path().join("store");
    copy_dir(&bundle_dir().join("replay_store"), &store);
    let victim = fs::read_dir(&store)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .min()
        .unwrap();
    fs::write(&victim, b"{\"truncated\": ").unwrap();
    let cfg = config(&tmp.path().join("out"), RunMode::Replay, store);
    assert!(matches!(run_with(&cfg, counted().1), Err(Error::CorruptCache { .. })));
}

#[test]
fn written_report_round_trips() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let cfg = config(&out, RunMode::Replay, bundle_dir().join("replay_store"));
    let outcome = run_with(&cfg, counted().1).unwrap();
    write_outputs(&outcome, &cfg, &out).unwrap();
    let loaded = RunReport::load_dir(&out).unwrap();
    assert_eq!(loaded, outcome.report);
    let context = RunContext::load_dir(&out).unwrap();
    assert!(context.manifest.is_absolute());
    assert!(context.finished_at >= context.started_at);
    let json = fs::read_to_string(out.join("report.json")).unwrap();
    assert!(!json.contains("started_at"));
}

#[test]
fn failure_export_respects_threshold() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config(&tmp.path().join("out"), RunMode::Replay, bundle_dir().join("replay_store"));
    let report = run_with(&cfg, counted().1).unwrap().report;
    let manifest = cfg.manifest_path();
    let root = manifest.parent().unwrap();
    let images: BTreeMap<String, PathBuf> = load_manifest(&manifest)
        .unwrap()
        .into_iter()
        .map(|img| {
            let p = img.resolve_path(root);
            (img.image_id, p)
        })
        .collect();

    let none = export_failures(&report, 0.0, &images, &tmp.path().join("f0")).unwrap();
    assert!(none.is_empty());

    let half = export_failures(&report, 0.5, &images, &tmp.path().join("f50")).unwrap();
    let want = report.targets.iter().filter(|t| t.iou < 0.5).count();
    assert_eq!(half.len(), want);
    assert!(want > 0);
    for case in &half {
        assert!(case.iou < 0.5);
        assert!(tmp.path().join("f50").join(&case.render).is_file());
    }
    assert!(tmp.path().join("f50/index.json").is_file());

    let all = export_failures(&report, 1.0, &images, &tmp.path().join("f100")).unwrap();
    assert_eq!(all.len(), report.targets.iter().filter(|t| t.iou < 1.0).count());
    assert!(all.len() >= half.len());
}
