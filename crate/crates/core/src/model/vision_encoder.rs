use serde::{Deserialize, Serialize};

use super::{normal_vec, Embedding, Image};
use crate::{seed, MisdError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VisionEncoderSpec {
    pub embed_dim: usize,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub patch: usize,
    pub seed: u64,
    /// Fraction of each patch projection's variance shared by all positions.
    /// 1.0 makes the encoder translation invariant at patch granularity, 0.0
    /// gives every position an independent projection.
    pub shared_fraction: f64,
    /// Subtracted from every pixel before projection.
    #[serde(default)]
    pub pixel_mean: f64,
}

impl Default for VisionEncoderSpec {
    fn default() -> Self {
        Self { embed_dim: 32, height: 32, width: 32, channels: 3, patch: 8, seed: 0, shared_fraction: 0.5, pixel_mean: 0.125 }
    }
}

impl VisionEncoderSpec {
    pub fn validate(&self) -> Result<()> {
        if self.embed_dim < 2 {
            return Err(MisdError::Config(format!("embedding dimension must be >= 2, got {}", self.embed_dim)));
        }
        if self.patch == 0 || self.channels == 0 {
            return Err(MisdError::Config("patch size and channel count must be positive".into()));
        }
        if self.height == 0 || self.width == 0 || !self.height.is_multiple_of(self.patch) || !self.width.is_multiple_of(self.patch) {
            return Err(MisdError::Config(format!(
                "input resolution {}x{} must be a positive multiple of patch size {}",
                self.height, self.width, self.patch
            )));
        }
        if !self.pixel_mean.is_finite() {
            return Err(MisdError::Config("pixel_mean must be finite".into()));
        }
        if !(0.0..=1.0).contains(&self.shared_fraction) {
            return Err(MisdError::Config("shared_fraction must lie in [0, 1]".into()));
        }
        Ok(())
    }

    pub fn patch_count(&self) -> usize {
        (self.height / self.patch) * (self.width / self.patch)
    }

    pub fn patch_len(&self) -> usize {
        self.patch * self.patch * self.channels
    }
}

/// Non-overlapping patches, a frozen linear projection per patch position,
/// mean pooled. No bias.
#[derive(Debug, Clone, PartialEq)]
pub struct FrozenVisionEncoder {
    spec: VisionEncoderSpec,
    // patch_count blocks of embed_dim x patch_len, row-major
    projections: Vec<f64>,
}

impl FrozenVisionEncoder {
    pub fn new(spec: VisionEncoderSpec) -> Result<Self> {
        spec.validate()?;
        let block = spec.embed_dim * spec.patch_len();
        let scale = 1.0 / (spec.patch_len() as f64).sqrt();
        let mut rng = seed::rng(spec.seed, &["vision-encoder", "shared"]);
        let shared = normal_vec(&mut rng, block, scale);
        let (a, b) = (spec.shared_fraction.sqrt(), (1.0 - spec.shared_fraction).sqrt());
        let mut projections = Vec::with_capacity(block * spec.patch_count());
        for p in 0..spec.patch_count() {
            let mut rng = seed::rng_indexed(spec.seed, &["vision-encoder", "position"], p as u64);
            let own = normal_vec(&mut rng, block, scale);
            projections.extend(shared.iter().zip(&own).map(|(s, o)| a * s + b * o));
        }
        Ok(Self { spec, projections })
    }

    pub fn spec(&self) -> &VisionEncoderSpec {
        &self.spec
    }

    pub fn embed_dim(&self) -> usize {
        self.spec.embed_dim
    }

    pub fn encode(&self, image: &Image) -> Result<Embedding> {
        let s = &self.spec;
        if image.height() != s.height || image.width() != s.width || image.channels() != s.channels {
            return Err(MisdError::Shape(format!(
                "image is {}x{}x{}, encoder expects {}x{}x{}",
                image.height(),
                image.width(),
                image.channels(),
                s.height,
                s.width,
                s.channels
            )));
        }
        if !image.is_finite() {
            return Err(MisdError::Data("image contains non-finite pixels".into()));
        }
        let plen = s.patch_len();
        let block = s.embed_dim * plen;
        let cols = s.width / s.patch;
        let mut patch = vec![0.0; plen];
        let mut out = vec![0.0; s.embed_dim];
        for p in 0..s.patch_count() {
            let (py, px) = (p / cols * s.patch, p % cols * s.patch);
            for dy in 0..s.patch {
                let row_start = ((py + dy) * s.width + px) * s.channels;
                let len = s.patch * s.channels;
                for (dst, src) in patch[dy * len..(dy + 1) * len].iter_mut().zip(&image.data()[row_start..row_start + len]) {
                    *dst = src - s.pixel_mean;
                }
            }
            let proj = &self.projections[p * block..(p + 1) * block];
            for (k, acc) in out.iter_mut().enumerate() {
                let w = &proj[k * plen..(k + 1) * plen];
                *acc += w.iter().zip(&patch).map(|(a, b)| a * b).sum::<f64>();
            }
        }
        let n = s.patch_count() as f64;
        out.iter_mut().for_each(|v| *v /= n);
        Ok(Embedding::from_vec_unchecked(out))
    }
}
