use std::path::Path;

use serde::{Deserialize, Serialize};

use super::font::{draw_text, text_width, GLYPH_H};
use super::{Explanation, HeatMap};
use crate::data::EmotionLabel;
use crate::error::{Error, Result};
use crate::pixels::PixelGrid;
use crate::transforms::{gray_to_rgb, sample_axis};

const ALPHA: f64 = 0.5;

/// Blue-to-red ramp for a value in `[0, 1]`.
pub fn heat_color(v: f64) -> [f64; 3] {
    let ramp = |centre: f64| (1.5 - (4.0 * v - centre).abs()).clamp(0.0, 1.0) * 255.0;
    [ramp(3.0), ramp(2.0), ramp(1.0)]
}

/// Bilinear upsampling of a heatmap to `height × width`, row-major.
pub fn upsample_heatmap(map: &HeatMap, height: usize, width: usize) -> Vec<f64> {
    let cols: Vec<_> = (0..width)
        .map(|x| sample_axis(x, map.width, width))
        .collect();
    let mut out = Vec::with_capacity(height * width);
    for y in 0..height {
        let (y0, y1, fy) = sample_axis(y, map.height, height);
        for &(x0, x1, fx) in &cols {
            let top = map.get(y0, x0) * (1.0 - fx) + map.get(y0, x1) * fx;
            let bottom = map.get(y1, x0) * (1.0 - fx) + map.get(y1, x1) * fx;
            out.push(top * (1.0 - fy) + bottom * fy);
        }
    }
    out
}

/// `pixel * (1 - a h) + colour(h) * a h` with `a = 0.5`, on the RGB image.
pub fn overlay(image: &PixelGrid, map: &HeatMap) -> PixelGrid {
    let mut out = gray_to_rgb(image);
    let heat = upsample_heatmap(map, image.height(), image.width());
    for y in 0..image.height() {
        for x in 0..image.width() {
            let h = heat[y * image.width() + x];
            if h == 0.0 {
                continue;
            }
            let colour = heat_color(h);
            for (c, col) in colour.iter().enumerate() {
                let v = out.get(y, x, c) as f64 * (1.0 - ALPHA * h) + col * ALPHA * h;
                out.set(y, x, c, v.round().clamp(0.0, 255.0) as u8);
            }
        }
    }
    out
}

fn caption_scale(width: usize) -> usize {
    (width / 48).max(1)
}

/// One column per image: the original on top, the overlay below, then the
/// predicted label. All images must share one size.
pub fn compose_panel(
    images: &[PixelGrid],
    heatmaps: &[HeatMap],
    labels: &[EmotionLabel],
) -> Result<PixelGrid> {
    if images.is_empty() {
        return Err(Error::InvalidArgument(
            "panel needs at least one image".into(),
        ));
    }
    if heatmaps.len() != images.len() || labels.len() != images.len() {
        return Err(Error::InvalidArgument(format!(
            "{} images, {} heatmaps, {} labels",
            images.len(),
            heatmaps.len(),
            labels.len()
        )));
    }
    let (h, w) = (images[0].height(), images[0].width());
    if let Some(bad) = images.iter().find(|i| (i.height(), i.width()) != (h, w)) {
        return Err(Error::ShapeMismatch {
            expected: format!("{h}x{w}"),
            actual: format!("{}x{}", bad.height(), bad.width()),
        });
    }
    let scale = caption_scale(w);
    let caption_h = (GLYPH_H + 2) * scale;
    let mut panel = PixelGrid::filled(2 * h + caption_h, images.len() * w, 3, 0)?;
    for (col, ((img, map), label)) in images.iter().zip(heatmaps).zip(labels).enumerate() {
        let x0 = col * w;
        let rgb = gray_to_rgb(img);
        let over = overlay(img, map);
        for y in 0..h {
            for x in 0..w {
                for c in 0..3 {
                    panel.set(y, x0 + x, c, rgb.get(y, x, c));
                    panel.set(h + y, x0 + x, c, over.get(y, x, c));
                }
            }
        }
        let mut text: String = label.name().to_uppercase();
        while text_width(&text, scale) > w && !text.is_empty() {
            text.pop();
        }
        let tx = x0 + (w - text_width(&text, scale)) / 2;
        let ty = 2 * h + scale;
        draw_text(&text, scale, |x, y| {
            for c in 0..3 {
                panel.set(ty + y, tx + x, c, 255);
            }
        });
    }
    Ok(panel)
}

/// Writes [`compose_panel`] as a PNG.
pub fn render_panel(
    images: &[PixelGrid],
    heatmaps: &[HeatMap],
    labels: &[EmotionLabel],
    path: &Path,
) -> Result<()> {
    let panel = compose_panel(images, heatmaps, labels)?;
    panel
        .to_dynamic_image()
        .save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| Error::ImageEncode(format!("{}: {e}", path.display())))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SidecarEntry {
    pub index: usize,
    pub predicted: EmotionLabel,
    pub confidence: f64,
    pub target: EmotionLabel,
    pub heatmap_max: f64,
    pub heatmap_mean: f64,
    pub upper_mass: f64,
    pub lower_mass: f64,
}

impl SidecarEntry {
    pub fn new(index: usize, e: &Explanation) -> Self {
        let (upper_mass, lower_mass) = e.heatmap.half_masses();
        Self {
            index,
            predicted: e.predicted,
            confidence: e.confidence,
            target: e.heatmap.target,
            heatmap_max: e.heatmap.max(),
            heatmap_mean: e.heatmap.mean(),
            upper_mass,
            lower_mass,
        }
    }
}

pub fn write_sidecar(path: &Path, explanations: &[Explanation]) -> Result<()> {
    let entries: Vec<SidecarEntry> = explanations
        .iter()
        .enumerate()
        .map(|(i, e)| SidecarEntry::new(i, e))
        .collect();
    let text = serde_json::to_string_pretty(&entries)?;
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}
