//! Box overlays drawn onto RGB rasters.
//!
//! Target overlays tell the prompt-generating model which object is meant;
//! detection overlays are used to inspect failure cases. Borders are drawn
//! inward from the box edge so a width-`w` border never leaves the box, and
//! labels use the fixed 8×8 bitmap font from `font8x8`, so output bytes do
//! not depend on the platform.

use std::path::Path;

use font8x8::UnicodeFonts;
use image::{Rgb, RgbImage};
use serde::{Deserialize, Serialize};

use crate::detector::Detection;
use crate::error::{Error, Result};
use crate::geometry::{validate_box, BoundingBox, PixelRect};

const GLYPH: u32 = 8;
const LABEL_PAD: u32 = 1;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OverlayStyle {
    pub border_color: [u8; 3],
    pub border_width: u32,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub label_text: Option<String>,
}

impl Default for OverlayStyle {
    fn default() -> Self {
        Self {
            border_color: [255, 0, 0],
            border_width: 3,
            label_text: None,
        }
    }
}

impl OverlayStyle {
    pub fn new(border_color: [u8; 3], border_width: u32) -> Self {
        Self {
            border_color,
            border_width,
            label_text: None,
        }
    }

    pub fn with_label(mut self, text: impl Into<String>) -> Self {
        self.label_text = Some(text.into());
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.border_width == 0 {
            return Err(Error::InvalidStyle("border_width must be at least 1".into()));
        }
        Ok(())
    }
}

/// Whether pixel `(x, y)` lies in the border band of `rect` for the given width.
pub fn in_border_band(rect: &PixelRect, border_width: u32, x: u32, y: u32) -> bool {
    rect.contains(x, y)
        && (x < rect.left + border_width
            || x + border_width >= rect.right
            || y < rect.top + border_width
            || y + border_width >= rect.bottom)
}

/// Region covered by a label drawn for `rect`: above the box when there is
/// room, otherwise just inside its top edge. Clipped to the image.
pub fn label_region(rect: &PixelRect, text: &str, width: u32, height: u32) -> Option<PixelRect> {
    let chars = text.chars().count() as u32;
    if chars == 0 {
        return None;
    }
    let label_h = GLYPH + 2 * LABEL_PAD;
    let label_w = chars * GLYPH + 2 * LABEL_PAD;
    let top = if rect.top >= label_h { rect.top - label_h } else { rect.top };
    let region = PixelRect {
        left: rect.left,
        top,
        right: (rect.left + label_w).min(width),
        bottom: (top + label_h).min(height),
    };
    (region.left < region.right && region.top < region.bottom).then_some(region)
}

fn draw_border(img: &mut RgbImage, rect: &PixelRect, style: &OverlayStyle) {
    let color = Rgb(style.border_color);
    for y in rect.top..rect.bottom {
        for x in rect.left..rect.right {
            if in_border_band(rect, style.border_width, x, y) {
                img.put_pixel(x, y, color);
            }
        }
    }
}

fn draw_label(img: &mut RgbImage, rect: &PixelRect, text: &str, background: [u8; 3]) {
    let (w, h) = img.dimensions();
    let Some(region) = label_region(rect, text, w, h) else {
        return;
    };
    for y in region.top..region.bottom {
        for x in region.left..region.right {
            img.put_pixel(x, y, Rgb(background));
        }
    }
    let luminance = 299 * u32::from(background[0])
        + 587 * u32::from(background[1])
        + 114 * u32::from(background[2]);
    let ink = if luminance > 128_000 { Rgb([0, 0, 0]) } else { Rgb([255, 255, 255]) };
    let origin_x = region.left + LABEL_PAD;
    let origin_y = region.top + LABEL_PAD;
    for (i, c) in text.chars().enumerate() {
        let glyph = font8x8::BASIC_FONTS.get(c).unwrap_or([0xFF; 8]);
        for (row, bits) in glyph.iter().enumerate() {
            for col in 0..GLYPH {
                if bits & (1 << col) == 0 {
                    continue;
                }
                let x = origin_x + i as u32 * GLYPH + col;
                let y = origin_y + row as u32;
                if region.contains(x, y) {
                    img.put_pixel(x, y, ink);
                }
            }
        }
    }
}

fn draw_box(img: &mut RgbImage, bbox: &BoundingBox, style: &OverlayStyle, label: Option<&str>) {
    let (w, h) = img.dimensions();
    let Some(rect) = bbox.pixel_rect(w, h) else {
        return;
    };
    draw_border(img, &rect, style);
    if let Some(text) = label {
        draw_label(img, &rect, text, style.border_color);
    }
}

/// Copy of `image` with the target box outlined.
pub fn render_target_overlay(
    image: &RgbImage,
    bbox: &BoundingBox,
    style: &OverlayStyle,
) -> Result<RgbImage> {
    style.validate()?;
    validate_box(bbox, image.width(), image.height()).map_err(Error::InvalidBox)?;
    let mut out = image.clone();
    draw_box(&mut out, bbox, style, style.label_text.as_deref());
    Ok(out)
}

fn prediction_label(style: &OverlayStyle, score: f64) -> String {
    match &style.label_text {
        Some(prefix) => format!("{prefix} {score:.2}"),
        None => format!("{score:.2}"),
    }
}

/// Ground truths first, then predictions (clipped to the frame) on top,
/// each prediction labelled with its confidence to two decimals.
pub fn render_detections(
    image: &RgbImage,
    gts: &[BoundingBox],
    preds: &[Detection],
    style_gt: &OverlayStyle,
    style_pred: &OverlayStyle,
) -> Result<RgbImage> {
    style_gt.validate()?;
    style_pred.validate()?;
    let (w, h) = image.dimensions();
    for gt in gts {
        validate_box(gt, w, h).map_err(Error::InvalidBox)?;
    }
    let mut out = image.clone();
    for gt in gts {
        draw_box(&mut out, gt, style_gt, style_gt.label_text.as_deref());
    }
    for pred in preds {
        if let Some(clipped) = pred.bbox.clip_to(w, h) {
            let label = prediction_label(style_pred, pred.score);
            draw_box(&mut out, &clipped, style_pred, Some(&label));
        }
    }
    Ok(out)
}

pub fn save_png(path: &Path, img: &RgbImage) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    img.save_with_format(path, image::ImageFormat::Png)
        .map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })
}
