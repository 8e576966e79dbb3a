//! Few-shot misclassification detection through prompt learning.
//!
//! Learnable category prompts and negative prompts are trained through a
//! pair of frozen toy encoders. Pseudo samples are the random crops least
//! similar to their class feature, and the resulting classifier is scored
//! with maximum softmax probability against the usual selective-prediction
//! metrics (FPR95, AURC, E-AURC, AUROC, AUPR).

pub mod augment;
pub mod cli;
pub mod data_io;
mod error;
pub mod gradcheck;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod seed;
pub mod trainer;

pub use error::{MisdError, Result};
pub use model::{Embedding, FrozenTextEncoder, FrozenVisionEncoder, Image, PromptBank, TokenEmbedding};
