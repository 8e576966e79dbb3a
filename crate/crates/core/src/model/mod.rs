//! Embeddings, prompts and the frozen toy encoders prompts are trained through.

mod align;
mod embedding;
mod image;
mod prompt;
mod text_encoder;
mod vision_encoder;

pub use align::fit_name_tokens;
pub use embedding::{Embedding, TokenEmbedding};
pub use image::Image;
pub use prompt::{PromptBank, Vocabulary};
pub use text_encoder::{FrozenTextEncoder, TextEncoderSpec};
pub use vision_encoder::{FrozenVisionEncoder, VisionEncoderSpec};

use rand::Rng;
use rand_distr::StandardNormal;

pub(crate) fn normal_vec<R: Rng>(rng: &mut R, len: usize, scale: f64) -> Vec<f64> {
    (0..len).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect()
}
