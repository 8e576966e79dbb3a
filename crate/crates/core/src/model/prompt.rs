use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{normal_vec, TextEncoderSpec, TokenEmbedding};
use crate::{seed, MisdError, Result};

/// Std of freshly initialized learnable context vectors.
pub const CONTEXT_INIT_SCALE: f64 = 0.02;

/// Frozen name → token lookup standing in for a pretrained token table.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Vocabulary {
    pub seed: u64,
    pub token_dim: usize,
    pub scale: f64,
    /// Names with a fitted token. Every other name hashes to a random one.
    pub table: BTreeMap<String, TokenEmbedding>,
}

impl Vocabulary {
    pub fn from_spec(spec: &TextEncoderSpec) -> Self {
        Self { seed: spec.seed, token_dim: spec.token_dim, scale: spec.token_scale, table: BTreeMap::new() }
    }

    pub fn with_table(mut self, table: BTreeMap<String, TokenEmbedding>) -> Self {
        self.table = table;
        self
    }

    pub fn token(&self, name: &str) -> TokenEmbedding {
        if let Some(tok) = self.table.get(name) {
            return tok.clone();
        }
        let mut rng = seed::rng(self.seed, &["vocab", name]);
        TokenEmbedding::from_vec_unchecked(normal_vec(&mut rng, self.token_dim, self.scale))
    }

    /// Token filling the class slot of every negative prompt.
    pub fn null_token(&self) -> TokenEmbedding {
        let mut rng = seed::rng(self.seed, &["vocab-null"]);
        TokenEmbedding::from_vec_unchecked(normal_vec(&mut rng, self.token_dim, self.scale))
    }
}

/// The trainable prompt state: a class context shared by all categories,
/// one frozen name token per category, and independent negative contexts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptBank {
    pub class_names: Vec<String>,
    pub class_context: Vec<TokenEmbedding>,
    pub class_tokens: Vec<TokenEmbedding>,
    pub null_token: TokenEmbedding,
    pub negative_contexts: Vec<Vec<TokenEmbedding>>,
}

impl PromptBank {
    pub fn init(
        vocab: &Vocabulary,
        class_names: &[String],
        context_len: usize,
        negative_count: usize,
        seed: u64,
    ) -> Result<Self> {
        if class_names.len() < 2 {
            return Err(MisdError::DegenerateTask(format!(
                "need at least 2 classes, got {}",
                class_names.len()
            )));
        }
        if context_len == 0 {
            return Err(MisdError::Config("context length must be positive".into()));
        }
        if negative_count == 0 {
            return Err(MisdError::Config("negative prompt count must be positive".into()));
        }
        let d = vocab.token_dim;
        let mut rng = seed::rng(seed, &["bank", "class-context"]);
        let class_context = (0..context_len)
            .map(|_| TokenEmbedding::from_vec_unchecked(normal_vec(&mut rng, d, CONTEXT_INIT_SCALE)))
            .collect();
        let negative_contexts = (0..negative_count)
            .map(|n| {
                let mut rng = seed::rng_indexed(seed, &["bank", "negative-context"], n as u64);
                (0..context_len)
                    .map(|_| TokenEmbedding::from_vec_unchecked(normal_vec(&mut rng, d, CONTEXT_INIT_SCALE)))
                    .collect()
            })
            .collect();
        Ok(Self {
            class_names: class_names.to_vec(),
            class_context,
            class_tokens: class_names.iter().map(|n| vocab.token(n)).collect(),
            null_token: vocab.null_token(),
            negative_contexts,
        })
    }

    /// Convenience for anonymous classes named `class_0 … class_{C-1}`.
    pub fn init_anonymous(
        vocab: &Vocabulary,
        classes: usize,
        context_len: usize,
        negative_count: usize,
        seed: u64,
    ) -> Result<Self> {
        let names: Vec<String> = (0..classes).map(|c| format!("class_{c}")).collect();
        Self::init(vocab, &names, context_len, negative_count, seed)
    }

    pub fn num_classes(&self) -> usize {
        self.class_tokens.len()
    }

    pub fn num_negatives(&self) -> usize {
        self.negative_contexts.len()
    }

    pub fn context_len(&self) -> usize {
        self.class_context.len()
    }

    pub fn token_dim(&self) -> usize {
        self.null_token.dim()
    }

    /// `[v_1 … v_L; v_c]`
    pub fn class_prompt(&self, class: usize) -> Vec<TokenEmbedding> {
        let mut p = self.class_context.clone();
        p.push(self.class_tokens[class].clone());
        p
    }

    /// `[v̆_1 … v̆_L; null]`
    pub fn negative_prompt(&self, n: usize) -> Vec<TokenEmbedding> {
        let mut p = self.negative_contexts[n].clone();
        p.push(self.null_token.clone());
        p
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.token_dim();
        let l = self.context_len();
        if self.num_classes() < 2 || self.class_names.len() != self.num_classes() {
            return Err(MisdError::DegenerateTask("prompt bank needs >= 2 named classes".into()));
        }
        if l == 0 || self.num_negatives() == 0 {
            return Err(MisdError::Config("prompt bank needs a context and >= 1 negative prompt".into()));
        }
        let all = self
            .class_context
            .iter()
            .chain(&self.class_tokens)
            .chain(self.negative_contexts.iter().flatten());
        for tok in all {
            if tok.dim() != d || !tok.is_finite() {
                return Err(MisdError::Shape("prompt bank token has wrong dimension or non-finite entry".into()));
            }
        }
        if self.negative_contexts.iter().any(|n| n.len() != l) {
            return Err(MisdError::Shape("negative context length differs from class context length".into()));
        }
        Ok(())
    }
}
