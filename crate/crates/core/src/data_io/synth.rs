use rand::Rng;
use serde::{Deserialize, Serialize};

use super::ImageDataset;
use crate::augment::CropRect;
use crate::model::Image;
use crate::{seed, MisdError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthGeometry {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub blob_side: usize,
    /// Background pixels are uniform in `[0, noise_amplitude]`.
    pub noise_amplitude: f64,
    /// Per-sample multiplicative jitter of the class color, uniform in `±color_jitter`.
    pub color_jitter: f64,
}

impl Default for SynthGeometry {
    fn default() -> Self {
        Self { height: 32, width: 32, channels: 3, blob_side: 16, noise_amplitude: 0.25, color_jitter: 0.25 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub classes: usize,
    pub per_class: usize,
    pub seed: u64,
    pub geometry: SynthGeometry,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self { classes: 10, per_class: 20, seed: 0, geometry: SynthGeometry::default() }
    }
}

struct Appearance {
    color: Vec<f64>,
    frequency: f64,
    angle: f64,
}

fn appearance(seed_value: u64, class: usize, channels: usize) -> Appearance {
    let mut rng = seed::rng_indexed(seed_value, &["synth", "class"], class as u64);
    Appearance {
        color: (0..channels).map(|_| rng.random_range(0.0..1.0)).collect(),
        frequency: rng.random_range(1.0..3.0),
        angle: rng.random_range(0.0..std::f64::consts::PI),
    }
}

/// Images of noise with one class-keyed textured blob each, class-major.
/// Class appearance depends only on `config.seed`; `split` selects an
/// independent draw of positions and noise, so splits share their classes.
pub fn gen_synth(config: &SynthConfig, split: &str) -> Result<ImageDataset> {
    gen_synth_with_layout(config, split).map(|(ds, _)| ds)
}

/// Same as [`gen_synth`], also returning each sample's blob rectangle.
pub fn gen_synth_with_layout(config: &SynthConfig, split: &str) -> Result<(ImageDataset, Vec<CropRect>)> {
    let g = &config.geometry;
    if config.classes < 2 {
        return Err(MisdError::DegenerateTask(format!("need at least 2 classes, got {}", config.classes)));
    }
    if config.per_class == 0 {
        return Err(MisdError::Config("per-class count must be at least 1".into()));
    }
    if g.blob_side == 0 || g.blob_side > g.height.min(g.width) || g.channels == 0 {
        return Err(MisdError::Config("blob must fit inside the image".into()));
    }
    if !(0.0..=1.0).contains(&g.noise_amplitude) || !(0.0..1.0).contains(&g.color_jitter) {
        return Err(MisdError::Config("noise amplitude must lie in [0, 1] and jitter in [0, 1)".into()));
    }
    let looks: Vec<Appearance> = (0..config.classes).map(|c| appearance(config.seed, c, g.channels)).collect();
    let n = config.classes * config.per_class;
    let mut images = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    let mut layout = Vec::with_capacity(n);
    for (class, look) in looks.iter().enumerate() {
        for i in 0..config.per_class {
            let idx = (class * config.per_class + i) as u64;
            let mut rng = seed::rng_indexed(config.seed, &["synth", split, "sample"], idx);
            let mut img = Image::filled(g.height, g.width, g.channels, 0.0);
            for v in img.data_mut() {
                *v = rng.random_range(0.0..=g.noise_amplitude);
            }
            let x0 = rng.random_range(0..=g.width - g.blob_side);
            let y0 = rng.random_range(0..=g.height - g.blob_side);
            let tint: Vec<f64> =
                look.color.iter().map(|c| c * (1.0 + rng.random_range(-g.color_jitter..=g.color_jitter))).collect();
            let phase = rng.random_range(0.0..std::f64::consts::TAU);
            let (ca, sa) = (look.angle.cos(), look.angle.sin());
            for dy in 0..g.blob_side {
                for dx in 0..g.blob_side {
                    let u = dx as f64 / g.blob_side as f64;
                    let v = dy as f64 / g.blob_side as f64;
                    let wave = (std::f64::consts::TAU * look.frequency * (u * ca + v * sa) + phase).sin();
                    for (c, t) in tint.iter().enumerate() {
                        img.set(y0 + dy, x0 + dx, c, (t * (0.6 + 0.4 * wave)).clamp(0.0, 1.0));
                    }
                }
            }
            images.push(img);
            labels.push(class);
            layout.push(CropRect { x: x0, y: y0, width: g.blob_side, height: g.blob_side });
        }
    }
    let names = (0..config.classes).map(|c| format!("synth_{c:02}")).collect();
    Ok((ImageDataset::new(images, labels, names)?, layout))
}

/// Square crop of side `side` centered on `blob`, shifted to stay inside the image.
pub fn blob_centered_rect(blob: CropRect, side: usize, height: usize, width: usize) -> CropRect {
    let cx = blob.x + blob.width / 2;
    let cy = blob.y + blob.height / 2;
    let x = cx.saturating_sub(side / 2).min(width - side);
    let y = cy.saturating_sub(side / 2).min(height - side);
    CropRect { x, y, width: side, height: side }
}

/// Square crop of side `side` in the image corner farthest from the blob center.
pub fn farthest_corner_rect(blob: CropRect, side: usize, height: usize, width: usize) -> CropRect {
    let cx = blob.x as f64 + blob.width as f64 / 2.0;
    let cy = blob.y as f64 + blob.height as f64 / 2.0;
    let x = if cx < width as f64 / 2.0 { width - side } else { 0 };
    let y = if cy < height as f64 / 2.0 { height - side } else { 0 };
    CropRect { x, y, width: side, height: side }
}
