//! Random crop views and text-guided selection of normal/pseudo views.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::losses::cosine_sim;
use crate::model::{Embedding, Image, VisionEncoderSpec};
use crate::{MisdError, Result};

pub const DEFAULT_CROPS: usize = 8;
pub const DEFAULT_AREA_MIN: f64 = 0.2;
pub const DEFAULT_AREA_MAX: f64 = 1.0;
pub const ASPECT_MIN: f64 = 3.0 / 4.0;
pub const ASPECT_MAX: f64 = 4.0 / 3.0;
pub const NOISE_STD: f64 = 0.1;

/// When normal/pseudo views are chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CropSchedule {
    /// Reselected every epoch against the current class features.
    #[default]
    Adaptive,
    /// Selected once against the initial class features.
    Static,
}

impl std::str::FromStr for CropSchedule {
    type Err = MisdError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "adaptive" => Ok(Self::Adaptive),
            "static" => Ok(Self::Static),
            other => Err(MisdError::Config(format!("unknown crop schedule `{other}`"))),
        }
    }
}

/// How the k candidate views of an image are produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ViewStrategy {
    #[default]
    RandomCrop,
    Cutout,
    GaussianNoise,
}

impl std::str::FromStr for ViewStrategy {
    type Err = MisdError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "random-crop" | "crop" => Ok(Self::RandomCrop),
            "cutout" => Ok(Self::Cutout),
            "gaussian-noise" | "noise" => Ok(Self::GaussianNoise),
            other => Err(MisdError::Config(format!("unknown augmentation strategy `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CropConfig {
    pub k: usize,
    pub area_min: f64,
    pub area_max: f64,
    pub schedule: CropSchedule,
    pub strategy: ViewStrategy,
}

impl Default for CropConfig {
    fn default() -> Self {
        Self {
            k: DEFAULT_CROPS,
            area_min: DEFAULT_AREA_MIN,
            area_max: DEFAULT_AREA_MAX,
            schedule: CropSchedule::Adaptive,
            strategy: ViewStrategy::RandomCrop,
        }
    }
}

impl CropConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k < 2 {
            return Err(MisdError::Config(format!("need at least 2 views per sample, got {}", self.k)));
        }
        if !(self.area_min > 0.0 && self.area_min <= self.area_max && self.area_max <= 1.0) {
            return Err(MisdError::Config(format!(
                "crop area range [{}, {}] must satisfy 0 < min <= max <= 1",
                self.area_min, self.area_max
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CropRect {
    pub x: usize,
    pub y: usize,
    pub width: usize,
    pub height: usize,
}

/// Samples one crop rectangle inside a `height × width` image.
pub fn sample_crop_rect<R: Rng>(height: usize, width: usize, config: &CropConfig, rng: &mut R) -> CropRect {
    let area = rng.random_range(config.area_min..=config.area_max) * (height * width) as f64;
    let aspect = rng.random_range(ASPECT_MIN..=ASPECT_MAX);
    let w = ((area * aspect).sqrt().round() as usize).clamp(1, width);
    let h = ((area / aspect).sqrt().round() as usize).clamp(1, height);
    let x = rng.random_range(0..=width - w);
    let y = rng.random_range(0..=height - h);
    CropRect { x, y, width: w, height: h }
}

/// Bilinear resample of `rect` to `out_h × out_w` (half-pixel centers, edge clamped).
pub fn crop_resize(image: &Image, rect: CropRect, out_h: usize, out_w: usize) -> Image {
    let ch = image.channels();
    let mut out = Image::filled(out_h, out_w, ch, 0.0);
    let sy = rect.height as f64 / out_h as f64;
    let sx = rect.width as f64 / out_w as f64;
    for oy in 0..out_h {
        let fy = ((oy as f64 + 0.5) * sy - 0.5).clamp(0.0, (rect.height - 1) as f64);
        let y0 = fy.floor() as usize;
        let y1 = (y0 + 1).min(rect.height - 1);
        let wy = fy - y0 as f64;
        for ox in 0..out_w {
            let fx = ((ox as f64 + 0.5) * sx - 0.5).clamp(0.0, (rect.width - 1) as f64);
            let x0 = fx.floor() as usize;
            let x1 = (x0 + 1).min(rect.width - 1);
            let wx = fx - x0 as f64;
            for c in 0..ch {
                let p = |y: usize, x: usize| image.get(rect.y + y, rect.x + x, c);
                let top = p(y0, x0) * (1.0 - wx) + p(y0, x1) * wx;
                let bottom = p(y1, x0) * (1.0 - wx) + p(y1, x1) * wx;
                out.set(oy, ox, c, top * (1.0 - wy) + bottom * wy);
            }
        }
    }
    out
}

fn full_rect(image: &Image) -> CropRect {
    CropRect { x: 0, y: 0, width: image.width(), height: image.height() }
}

fn to_encoder_resolution(image: &Image, spec: &VisionEncoderSpec) -> Image {
    if image.height() == spec.height && image.width() == spec.width {
        image.clone()
    } else {
        crop_resize(image, full_rect(image), spec.height, spec.width)
    }
}

/// `k` random crops, each resized to the encoder's input resolution.
pub fn random_crops<R: Rng>(
    image: &Image,
    config: &CropConfig,
    spec: &VisionEncoderSpec,
    rng: &mut R,
) -> Result<Vec<Image>> {
    config.validate()?;
    if image.height() < spec.patch || image.width() < spec.patch {
        return Err(MisdError::Shape(format!(
            "image {}x{} is smaller than one {}x{} patch",
            image.height(),
            image.width(),
            spec.patch,
            spec.patch
        )));
    }
    Ok((0..config.k)
        .map(|_| {
            let rect = sample_crop_rect(image.height(), image.width(), config, rng);
            crop_resize(image, rect, spec.height, spec.width)
        })
        .collect())
}

/// Zeroes one random square of side `height / 2`, fully inside the image.
pub fn cutout<R: Rng>(image: &Image, rng: &mut R) -> Image {
    let side = (image.height() / 2).min(image.width()).max(1);
    let y = rng.random_range(0..=image.height() - side);
    let x = rng.random_range(0..=image.width() - side);
    let mut out = image.clone();
    for yy in y..y + side {
        for xx in x..x + side {
            for c in 0..image.channels() {
                out.set(yy, xx, c, 0.0);
            }
        }
    }
    out
}

/// Adds zero-mean Gaussian noise with std [`NOISE_STD`] (pixel range is [0, 1]).
/// Values are not clamped.
pub fn gaussian_noise<R: Rng>(image: &Image, rng: &mut R) -> Image {
    let mut out = image.clone();
    for v in out.data_mut() {
        *v += NOISE_STD * rng.sample::<f64, _>(StandardNormal);
    }
    out
}

/// Single corrupted copy of `image` for the non-crop ablation strategies.
pub fn alternative_augment<R: Rng>(image: &Image, strategy: ViewStrategy, rng: &mut R) -> Result<Image> {
    match strategy {
        ViewStrategy::Cutout => Ok(cutout(image, rng)),
        ViewStrategy::GaussianNoise => Ok(gaussian_noise(image, rng)),
        ViewStrategy::RandomCrop => Err(MisdError::Config(
            "random crop is not an alternative augmentation; use random_crops".into(),
        )),
    }
}

/// The `k` candidate views of one image under the configured strategy.
pub fn generate_views<R: Rng>(
    image: &Image,
    config: &CropConfig,
    spec: &VisionEncoderSpec,
    rng: &mut R,
) -> Result<Vec<Image>> {
    match config.strategy {
        ViewStrategy::RandomCrop => random_crops(image, config, spec, rng),
        other => {
            config.validate()?;
            let base = to_encoder_resolution(image, spec);
            (0..config.k).map(|_| alternative_augment(&base, other, rng)).collect()
        }
    }
}

/// The candidate view embeddings of one training sample.
#[derive(Debug, Clone, PartialEq)]
pub struct ViewSet {
    pub id: u64,
    pub views: Vec<Embedding>,
    pub label: usize,
}

impl ViewSet {
    pub fn new(id: u64, views: Vec<Embedding>, label: usize) -> Result<Self> {
        if views.len() < 2 {
            return Err(MisdError::Config(format!("a view set needs at least 2 views, got {}", views.len())));
        }
        let d = views[0].dim();
        if views.iter().any(|v| v.dim() != d) {
            return Err(MisdError::Shape("views in one set have different dimensions".into()));
        }
        Ok(Self { id, views, label })
    }

    pub fn k(&self) -> usize {
        self.views.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelectedPair {
    pub normal: Embedding,
    pub pseudo: Embedding,
    pub normal_index: usize,
    pub pseudo_index: usize,
}

/// Most similar view to `class_feature` becomes the normal view, least
/// similar the pseudo view. Ties go to the lowest index for the normal view
/// and the highest for the pseudo view.
pub fn select_views(views: &ViewSet, class_feature: &Embedding) -> Result<SelectedPair> {
    if views.k() < 2 {
        return Err(MisdError::Config("selection needs at least 2 views".into()));
    }
    let sims: Vec<f64> = views.views.iter().map(|v| cosine_sim(v, class_feature)).collect::<Result<_>>()?;
    let (mut best, mut worst) = (0, 0);
    for (i, &s) in sims.iter().enumerate() {
        if s > sims[best] {
            best = i;
        }
        if s <= sims[worst] {
            worst = i;
        }
    }
    Ok(SelectedPair {
        normal: views.views[best].clone(),
        pseudo: views.views[worst].clone(),
        normal_index: best,
        pseudo_index: worst,
    })
}
