use serde::{Deserialize, Serialize};

use super::{normal_vec, Embedding, TokenEmbedding};
use crate::{seed, MisdError, Result};

/// Everything needed to regenerate a frozen text encoder bit-for-bit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TextEncoderSpec {
    /// Output dimension `d`, shared with the vision encoder.
    pub embed_dim: usize,
    /// Width of one token slot.
    pub token_dim: usize,
    /// Number of learnable context slots `L`; the encoder consumes `L + 1` slots.
    pub context_len: usize,
    pub seed: u64,
    /// Weight entries are drawn with std `gain / sqrt(fan_in)`.
    pub gain: f64,
    pub bias_scale: f64,
    /// Std of class-name tokens drawn from the frozen vocabulary.
    pub token_scale: f64,
}

impl Default for TextEncoderSpec {
    fn default() -> Self {
        Self {
            embed_dim: 32,
            token_dim: 16,
            context_len: 16,
            seed: 0,
            gain: 0.75,
            bias_scale: 0.5,
            token_scale: 1.0,
        }
    }
}

impl TextEncoderSpec {
    pub fn slots(&self) -> usize {
        self.context_len + 1
    }

    pub fn fan_in(&self) -> usize {
        self.slots() * self.token_dim
    }

    pub fn validate(&self) -> Result<()> {
        if self.embed_dim < 2 {
            return Err(MisdError::Config(format!("embedding dimension must be >= 2, got {}", self.embed_dim)));
        }
        if self.token_dim == 0 || self.context_len == 0 {
            return Err(MisdError::Config("token dimension and context length must be positive".into()));
        }
        if !(self.gain.is_finite() && self.bias_scale.is_finite() && self.token_scale.is_finite()) {
            return Err(MisdError::Config("text encoder scales must be finite".into()));
        }
        Ok(())
    }
}

/// `t = tanh(W · concat(prompt) + b)`, frozen after construction.
#[derive(Debug, Clone, PartialEq)]
pub struct FrozenTextEncoder {
    spec: TextEncoderSpec,
    // row-major, embed_dim x fan_in
    weight: Vec<f64>,
    bias: Vec<f64>,
}

impl FrozenTextEncoder {
    pub fn new(spec: TextEncoderSpec) -> Result<Self> {
        spec.validate()?;
        let fan_in = spec.fan_in();
        let mut rng = seed::rng(spec.seed, &["text-encoder", "weight"]);
        let weight = normal_vec(&mut rng, spec.embed_dim * fan_in, spec.gain / (fan_in as f64).sqrt());
        let mut rng = seed::rng(spec.seed, &["text-encoder", "bias"]);
        let bias = normal_vec(&mut rng, spec.embed_dim, spec.bias_scale);
        Ok(Self { spec, weight, bias })
    }

    pub fn spec(&self) -> &TextEncoderSpec {
        &self.spec
    }

    pub fn embed_dim(&self) -> usize {
        self.spec.embed_dim
    }

    pub fn weight(&self) -> &[f64] {
        &self.weight
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    /// Replaces the bias with zeros.
    pub fn without_bias(mut self) -> Self {
        self.bias.iter_mut().for_each(|b| *b = 0.0);
        self
    }

    fn check_prompt(&self, prompt: &[TokenEmbedding]) -> Result<()> {
        if prompt.len() != self.spec.slots() {
            return Err(MisdError::Shape(format!(
                "prompt has {} token slots, encoder expects {}",
                prompt.len(),
                self.spec.slots()
            )));
        }
        if let Some((i, tok)) = prompt.iter().enumerate().find(|(_, t)| t.dim() != self.spec.token_dim) {
            return Err(MisdError::Shape(format!(
                "token slot {i} has dimension {}, expected {}",
                tok.dim(),
                self.spec.token_dim
            )));
        }
        Ok(())
    }

    fn pre_activation(&self, prompt: &[TokenEmbedding]) -> Vec<f64> {
        let fan_in = self.spec.fan_in();
        let tok = self.spec.token_dim;
        let mut out = self.bias.clone();
        for (row, acc) in out.iter_mut().enumerate() {
            let w = &self.weight[row * fan_in..(row + 1) * fan_in];
            for (slot, token) in prompt.iter().enumerate() {
                let ws = &w[slot * tok..(slot + 1) * tok];
                *acc += ws.iter().zip(token.as_slice()).map(|(a, b)| a * b).sum::<f64>();
            }
        }
        out
    }

    pub fn encode(&self, prompt: &[TokenEmbedding]) -> Result<Embedding> {
        self.check_prompt(prompt)?;
        let out: Vec<f64> = self.pre_activation(prompt).into_iter().map(f64::tanh).collect();
        Ok(Embedding::from_vec_unchecked(out))
    }

    /// Returns `Jᵀ · cotangent` split back into the prompt's token slots.
    pub fn vjp(&self, prompt: &[TokenEmbedding], cotangent: &[f64]) -> Result<Vec<TokenEmbedding>> {
        self.check_prompt(prompt)?;
        if cotangent.len() != self.spec.embed_dim {
            return Err(MisdError::Shape(format!(
                "cotangent has dimension {}, expected {}",
                cotangent.len(),
                self.spec.embed_dim
            )));
        }
        let out: Vec<f64> = self.pre_activation(prompt).into_iter().map(f64::tanh).collect();
        Ok(self.vjp_from_output(&out, cotangent))
    }

    /// VJP given an already computed forward output `t`.
    pub(crate) fn vjp_from_output(&self, output: &[f64], cotangent: &[f64]) -> Vec<TokenEmbedding> {
        let fan_in = self.spec.fan_in();
        let mut grad = vec![0.0; fan_in];
        for (row, (t, g)) in output.iter().zip(cotangent).enumerate() {
            let delta = g * (1.0 - t * t);
            if delta == 0.0 {
                continue;
            }
            let w = &self.weight[row * fan_in..(row + 1) * fan_in];
            for (acc, wi) in grad.iter_mut().zip(w) {
                *acc += wi * delta;
            }
        }
        grad.chunks(self.spec.token_dim)
            .map(|c| TokenEmbedding::from_vec_unchecked(c.to_vec()))
            .collect()
    }
}
