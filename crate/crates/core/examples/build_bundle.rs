//! Regenerates the replay bundle from `bundle/source/scenes.json`.
//!
//! Writes the synthetic images, the manifest, the mock fixtures, the replay
//! store of recorded VLM answers and the expected reports.
//!
//!     cargo run -p promptbench --example build_bundle -- bundle

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use image::{Rgb, RgbImage};
use promptbench::cache::{sha256_hex, CacheStore, RunMode};
use promptbench::dataset::{write_manifest, AnnotatedImage, Target};
use promptbench::detector::FixtureRule;
use promptbench::geometry::BoundingBox;
use promptbench::harness::{emit_report, run, ReportFormat, RunConfig};
use promptbench::overlay::{render_target_overlay, save_png};
use promptbench::transport::OfflineTransport;
use promptbench::vlm::{DetailLevel, TemplateId, VlmClient, VlmResponse};
use serde::Deserialize;
use serde_json::Value;

// 2026-01-01T00:00:00Z, so the store does not change between rebuilds
const RECORDED_AT: u64 = 1_767_225_600;

#[derive(Deserialize)]
struct Scenes {
    width: u32,
    height: u32,
    scenes: Vec<Scene>,
}

#[derive(Deserialize)]
struct Shape {
    color: [u8; 3],
    #[serde(rename = "box")]
    bbox: [u32; 4],
}

#[derive(Deserialize)]
struct SceneTarget {
    target_id: String,
    label_hint: String,
    color: [u8; 3],
    #[serde(rename = "box")]
    bbox: [u32; 4],
    prompts: BTreeMap<DetailLevel, String>,
    key_object: BTreeMap<DetailLevel, String>,
    category: BTreeMap<DetailLevel, String>,
    rules: BTreeMap<String, Vec<Value>>,
}

#[derive(Deserialize)]
struct Scene {
    image_id: String,
    background: [u8; 3],
    distractors: Vec<Shape>,
    targets: Vec<SceneTarget>,
}

fn fill(img: &mut RgbImage, b: [u32; 4], color: [u8; 3]) {
    for y in b[1]..b[3] {
        for x in b[0]..b[2] {
            // a faint checker keeps flat regions from compressing to nothing
            let shade = if (x / 4 + y / 4) % 2 == 0 { 0 } else { 12 };
            img.put_pixel(x, y, Rgb(color.map(|c| c.saturating_sub(shade))));
        }
    }
}

fn draw(scenes: &Scenes, scene: &Scene) -> RgbImage {
    let mut img = RgbImage::from_pixel(scenes.width, scenes.height, Rgb(scene.background));
    for d in &scene.distractors {
        fill(&mut img, d.bbox, d.color);
    }
    for t in &scene.targets {
        fill(&mut img, t.bbox, t.color);
    }
    img
}

fn answer(text: &str) -> VlmResponse {
    let payload = serde_json::json!({"choices": [{"message": {"content": text}}]}).to_string();
    VlmResponse {
        text: text.to_string(),
        timestamp: RECORDED_AT,
        payload_sha256: sha256_hex(payload.as_bytes()),
    }
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let root = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "bundle".into()));
    let scenes: Scenes = serde_json::from_str(&fs::read_to_string(root.join("source/scenes.json"))?)?;
    let config = RunConfig::load(&root.join("config.toml"))?;

    let mut manifest = Vec::new();
    let mut fixtures: BTreeMap<String, Vec<FixtureRule>> = BTreeMap::new();
    let mut pixels = BTreeMap::new();
    for scene in &scenes.scenes {
        let img = draw(&scenes, scene);
        let rel = PathBuf::from("images").join(format!("{}.png", scene.image_id));
        save_png(&root.join(&rel), &img)?;
        manifest.push(AnnotatedImage {
            image_id: scene.image_id.clone(),
            image_path: rel,
            width: scenes.width,
            height: scenes.height,
            targets: scene
                .targets
                .iter()
                .map(|t| Target {
                    target_id: t.target_id.clone(),
                    bbox: BoundingBox::from(t.bbox.map(f64::from)),
                    label_hint: Some(t.label_hint.clone()),
                })
                .collect(),
        });
        for t in &scene.targets {
            for (backend, rules) in &t.rules {
                for rule in rules {
                    let mut rule = rule.clone();
                    rule["image_id"] = Value::from(scene.image_id.clone());
                    fixtures.entry(backend.clone()).or_default().push(serde_json::from_value(rule)?);
                }
            }
        }
        pixels.insert(scene.image_id.clone(), img);
    }
    write_manifest(&root.join("manifest.jsonl"), &manifest)?;
    let fixture_dir = root.join("fixtures");
    fs::create_dir_all(&fixture_dir)?;
    for (backend, rules) in &fixtures {
        let mut body = serde_json::to_string_pretty(rules)?;
        body.push('\n');
        fs::write(fixture_dir.join(format!("{backend}.json")), body)?;
    }

    let store_dir = config.cache_path();
    if store_dir.exists() {
        fs::remove_dir_all(&store_dir)?;
    }
    let store = Arc::new(CacheStore::open(&store_dir, RunMode::Cached)?);
    let client = VlmClient::new(
        config.vlm.clone(),
        RunMode::Cached,
        Some(store),
        Some(Arc::new(OfflineTransport)),
    )?;
    let mut entries = 0;
    for (scene, record) in scenes.scenes.iter().zip(&manifest) {
        let img = &pixels[&scene.image_id];
        for (t, target) in scene.targets.iter().zip(&record.targets) {
            let overlay = render_target_overlay(img, &target.bbox, &config.overlay)?;
            for level in DetailLevel::ALL {
                let initial = &t.prompts[&level];
                let req = client.request_for(TemplateId::Initial(level), &overlay, None);
                client.cache_put(&req, &answer(initial))?;
                let input = Some(initial.trim());
                let req = client.request_for(TemplateId::KeyObjectExtraction, img, input);
                client.cache_put(&req, &answer(&t.key_object[&level]))?;
                let req = client.request_for(TemplateId::SemanticCategoryGrounding, img, input);
                client.cache_put(&req, &answer(&t.category[&level]))?;
                entries += 3;
            }
        }
    }

    let mut replay = config.clone();
    replay.mode = RunMode::Replay;
    let tmp = std::env::temp_dir().join(format!("promptbench-bundle-{}", std::process::id()));
    replay.output_dir = tmp.clone();
    let outcome = run(&replay)?;
    let expected = root.join("expected");
    emit_report(&outcome.report, &ReportFormat::ALL, &expected)?;
    let _ = fs::remove_dir_all(&tmp);

    println!(
        "{} images, {} store entries, {} cells -> {}",
        manifest.len(),
        entries,
        outcome.report.cells.len(),
        Path::new(&expected).display()
    );
    Ok(())
}
