//! Annotated image manifests.
//!
//! A manifest is UTF-8 JSON Lines, one [`AnnotatedImage`] per line:
//!
//! ```text
//! {"image_id":"office_01","image_path":"images/office_01.png","width":640,"height":480,
//!  "targets":[{"target_id":"bottle","box":[50,40,120,200],"label_hint":"water bottle"}]}
//! ```
//!
//! Relative `image_path` values are resolved against the manifest's directory.

use std::collections::HashSet;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use image::RgbImage;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{validate_box, BoundingBox};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Target {
    pub target_id: String,
    #[serde(rename = "box")]
    pub bbox: BoundingBox,
    /// Fixture-construction metadata only; never sent to a detector.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label_hint: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnnotatedImage {
    pub image_id: String,
    pub image_path: PathBuf,
    pub width: u32,
    pub height: u32,
    pub targets: Vec<Target>,
}

impl AnnotatedImage {
    /// Checks the per-record invariants: non-empty ids, at least one target,
    /// unique target ids, and every box inside the image.
    pub fn validate(&self) -> Result<()> {
        if self.image_id.is_empty() {
            return Err(Error::Config("empty image_id".into()));
        }
        if self.targets.is_empty() {
            return Err(Error::Config(format!("image `{}` has no targets", self.image_id)));
        }
        let mut seen = HashSet::new();
        for t in &self.targets {
            if t.target_id.is_empty() || !seen.insert(t.target_id.as_str()) {
                return Err(Error::Config(format!(
                    "image `{}` has an empty or duplicate target_id `{}`",
                    self.image_id, t.target_id
                )));
            }
            validate_box(&t.bbox, self.width, self.height).map_err(|violation| {
                Error::InvalidTarget {
                    image_id: self.image_id.clone(),
                    target_id: t.target_id.clone(),
                    violation,
                }
            })?;
        }
        Ok(())
    }

    pub fn resolve_path(&self, manifest_dir: &Path) -> PathBuf {
        if self.image_path.is_absolute() {
            self.image_path.clone()
        } else {
            manifest_dir.join(&self.image_path)
        }
    }
}

/// Reads and validates a manifest. Blank lines are skipped; line numbers in
/// errors are 1-based.
pub fn load_manifest(path: &Path) -> Result<Vec<AnnotatedImage>> {
    if !path.is_file() {
        return Err(Error::Config(format!("manifest not found: {}", path.display())));
    }
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut images = Vec::new();
    let mut ids = HashSet::new();
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let line_no = idx + 1;
        let record: AnnotatedImage = serde_json::from_str(line).map_err(|e| Error::Manifest {
            path: path.to_path_buf(),
            line: line_no,
            message: e.to_string(),
        })?;
        match record.validate() {
            Ok(()) => {}
            Err(e @ Error::InvalidTarget { .. }) => return Err(e),
            Err(e) => {
                return Err(Error::Manifest {
                    path: path.to_path_buf(),
                    line: line_no,
                    message: e.to_string(),
                })
            }
        }
        if !ids.insert(record.image_id.clone()) {
            return Err(Error::Manifest {
                path: path.to_path_buf(),
                line: line_no,
                message: format!("duplicate image_id `{}`", record.image_id),
            });
        }
        images.push(record);
    }
    if images.is_empty() {
        log::warn!("manifest {} contains no records", path.display());
    } else {
        log::info!("loaded {} annotated images from {}", images.len(), path.display());
    }
    Ok(images)
}

pub fn write_manifest(path: &Path, images: &[AnnotatedImage]) -> Result<()> {
    let mut out = Vec::new();
    for image in images {
        serde_json::to_writer(&mut out, image)?;
        out.push(b'\n');
    }
    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(&out).map_err(|e| Error::io(path, e))
}

/// Loads a PNG or JPEG as 8-bit RGB.
pub fn load_rgb(path: &Path) -> Result<RgbImage> {
    let img = image::open(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(img.to_rgb8())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &Path, body: &str) -> PathBuf {
        let p = dir.join("manifest.jsonl");
        fs::write(&p, body).unwrap();
        p
    }

    const GOOD: &str = r#"{"image_id":"a","image_path":"a.png","width":100,"height":80,"targets":[{"target_id":"t0","box":[10,10,20,20],"label_hint":"mug"}]}"#;

    #[test]
    fn loads_valid_records_in_order() {
        let dir = tempfile::tempdir().unwrap();
        let body = format!("{GOOD}\n\n{}\n", GOOD.replace("\"a\"", "\"b\""));
        let images = load_manifest(&write(dir.path(), &body)).unwrap();
        assert_eq!(images.len(), 2);
        assert_eq!(images[0].image_id, "a");
        assert_eq!(images[1].image_id, "b");
        assert_eq!(images[0].targets[0].label_hint.as_deref(), Some("mug"));
    }

    #[test]
    fn empty_manifest_is_empty_list() {
        let dir = tempfile::tempdir().unwrap();
        assert!(load_manifest(&write(dir.path(), "")).unwrap().is_empty());
    }

    #[test]
    fn missing_file_is_config_error() {
        let err = load_manifest(Path::new("/nonexistent/manifest.jsonl")).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn malformed_record_names_line() {
        let dir = tempfile::tempdir().unwrap();
        let err = load_manifest(&write(dir.path(), &format!("{GOOD}\n{{not json\n"))).unwrap_err();
        match err {
            Error::Manifest { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn degenerate_box_names_image_and_target() {
        let dir = tempfile::tempdir().unwrap();
        let body = GOOD.replace("[10,10,20,20]", "[10,10,10,20]");
        let err = load_manifest(&write(dir.path(), &body)).unwrap_err();
        match err {
            Error::InvalidTarget {
                image_id,
                target_id,
                ..
            } => assert_eq!((image_id.as_str(), target_id.as_str()), ("a", "t0")),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn out_of_bounds_box_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let body = GOOD.replace("[10,10,20,20]", "[10,10,20,81]");
        let err = load_manifest(&write(dir.path(), &body)).unwrap_err();
        assert!(err.to_string().contains("y2 exceeds height"), "{err}");
    }

    #[test]
    fn duplicate_ids_and_empty_targets_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let err = load_manifest(&write(dir.path(), &format!("{GOOD}\n{GOOD}\n"))).unwrap_err();
        assert!(matches!(err, Error::Manifest { line: 2, .. }));
        let body = r#"{"image_id":"a","image_path":"a.png","width":100,"height":80,"targets":[]}"#;
        let err = load_manifest(&write(dir.path(), body)).unwrap_err();
        assert!(matches!(err, Error::Manifest { line: 1, .. }));
    }

    #[test]
    fn loading_does_not_touch_the_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = write(dir.path(), &format!("{GOOD}\n"));
        let before = fs::read(&path).unwrap();
        let mtime = fs::metadata(&path).unwrap().modified().unwrap();
        load_manifest(&path).unwrap();
        assert_eq!(fs::read(&path).unwrap(), before);
        assert_eq!(fs::metadata(&path).unwrap().modified().unwrap(), mtime);
    }
}
