//! Cross-entropy, negative-prompt and orthogonalization losses with exact
//! gradients down to the trainable context vectors.
//!
//! All similarities are cosine, so every loss is invariant to rescaling any
//! feature by a positive factor. Softmax-style terms use a max shift before
//! exponentiation.
//!
//! The orthogonalization term averages `sim(t̆_i, t̆_j)` over all ordered
//! pairs *including* `i == j`, so it carries a constant `1/n_n` offset: a set
//! of mutually orthogonal negative features scores exactly `1/n_n`, not 0.

use serde::{Deserialize, Serialize};

use crate::model::{Embedding, FrozenTextEncoder, PromptBank};
use crate::{MisdError, Result};

pub const DEFAULT_LAMBDA_NEG: f64 = 5.0;
pub const DEFAULT_LAMBDA_ORTH: f64 = 0.5;
pub const DEFAULT_TEMPERATURE: f64 = 1.0;

/// Which image features the negative loss is applied to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NegativeMode {
    /// The selected pseudo view only.
    #[default]
    Global,
    /// Every crop except the selected normal view, averaged.
    Local,
    /// Mean of the global and local terms.
    GlobalLocal,
}

impl std::str::FromStr for NegativeMode {
    type Err = MisdError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "global" => Ok(Self::Global),
            "local" => Ok(Self::Local),
            "global-local" | "global+local" => Ok(Self::GlobalLocal),
            other => Err(MisdError::Config(format!("unknown negative mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub temperature: f64,
    pub lambda_neg: f64,
    pub lambda_orth: f64,
    pub negative_mode: NegativeMode,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            temperature: DEFAULT_TEMPERATURE,
            lambda_neg: DEFAULT_LAMBDA_NEG,
            lambda_orth: DEFAULT_LAMBDA_ORTH,
            negative_mode: NegativeMode::Global,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        check_temperature(self.temperature)?;
        check_coefficients(self.lambda_neg, self.lambda_orth)
    }
}

/// Per-component weights. The public training objective is
/// `{ce: 1, neg: λ_neg, orth: λ_orth}`; other weightings isolate one term.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub ce: f64,
    pub neg: f64,
    pub orth: f64,
}

impl LossWeights {
    pub fn objective(config: &LossConfig) -> Self {
        Self { ce: 1.0, neg: config.lambda_neg, orth: config.lambda_orth }
    }

    pub const CE: Self = Self { ce: 1.0, neg: 0.0, orth: 0.0 };
    pub const NEG: Self = Self { ce: 0.0, neg: 1.0, orth: 0.0 };
    pub const ORTH: Self = Self { ce: 0.0, neg: 0.0, orth: 1.0 };
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub ce: f64,
    pub neg: f64,
    pub orth: f64,
    pub total: f64,
    pub lambda_neg: f64,
    pub lambda_orth: f64,
}

fn check_temperature(t: f64) -> Result<()> {
    if !(t.is_finite() && t > 0.0) {
        return Err(MisdError::Config(format!("temperature must be positive, got {t}")));
    }
    Ok(())
}

fn check_coefficients(lambda_neg: f64, lambda_orth: f64) -> Result<()> {
    if !(lambda_neg.is_finite() && lambda_neg >= 0.0 && lambda_orth.is_finite() && lambda_orth >= 0.0) {
        return Err(MisdError::Config(format!(
            "loss coefficients must be non-negative, got lambda_neg={lambda_neg}, lambda_orth={lambda_orth}"
        )));
    }
    Ok(())
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn cosine(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(MisdError::Shape(format!("dimension mismatch: {} vs {}", a.len(), b.len())));
    }
    let (na, nb) = (norm(a), norm(b));
    if na == 0.0 || nb == 0.0 {
        return Err(MisdError::UndefinedSimilarity("cosine similarity of a zero-norm vector".into()));
    }
    Ok(dot(a, b) / (na * nb))
}

/// Cosine similarity and its gradient with respect to `b`.
fn cosine_grad(a: &[f64], b: &[f64]) -> Result<(f64, Vec<f64>)> {
    let s = cosine(a, b)?;
    let (na, nb) = (norm(a), norm(b));
    let inv = 1.0 / (na * nb);
    let g = a.iter().zip(b).map(|(x, y)| x * inv - s * y / (nb * nb)).collect();
    Ok((s, g))
}

pub fn cosine_sim(a: &Embedding, b: &Embedding) -> Result<f64> {
    cosine(a.as_slice(), b.as_slice())
}

fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

fn softmax(xs: &[f64]) -> Vec<f64> {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = xs.iter().map(|x| (x - m).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|v| v / z).collect()
}

fn similarities(q: &Embedding, features: &[Embedding]) -> Result<Vec<f64>> {
    features.iter().map(|t| cosine_sim(q, t)).collect()
}

/// Softmax over `sim(q, t_c) / T`.
pub fn class_probabilities(q: &Embedding, category_features: &[Embedding], temperature: f64) -> Result<Vec<f64>> {
    check_temperature(temperature)?;
    let logits: Vec<f64> = similarities(q, category_features)?.into_iter().map(|s| s / temperature).collect();
    Ok(softmax(&logits))
}

pub fn ce_loss(q: &Embedding, category_features: &[Embedding], label: usize, temperature: f64) -> Result<f64> {
    check_temperature(temperature)?;
    if label >= category_features.len() {
        return Err(MisdError::Data(format!(
            "label {label} out of range for {} classes",
            category_features.len()
        )));
    }
    let logits: Vec<f64> = similarities(q, category_features)?.into_iter().map(|s| s / temperature).collect();
    Ok(log_sum_exp(&logits) - logits[label])
}

/// `-log( Σ_n e^{sim(q̆,t̆_n)/T} / (Σ_i e^{sim(q̆,t_i)/T} + Σ_n e^{sim(q̆,t̆_n)/T}) )`
pub fn neg_loss(
    pseudo: &Embedding,
    category_features: &[Embedding],
    negative_features: &[Embedding],
    temperature: f64,
) -> Result<f64> {
    check_temperature(temperature)?;
    if negative_features.is_empty() {
        return Err(MisdError::Config("negative loss needs at least one negative feature".into()));
    }
    let class: Vec<f64> = similarities(pseudo, category_features)?.into_iter().map(|s| s / temperature).collect();
    let neg: Vec<f64> = similarities(pseudo, negative_features)?.into_iter().map(|s| s / temperature).collect();
    let all: Vec<f64> = class.iter().chain(&neg).copied().collect();
    Ok(log_sum_exp(&all) - log_sum_exp(&neg))
}

pub fn orth_loss(negative_features: &[Embedding]) -> Result<f64> {
    let n = negative_features.len();
    if n == 0 {
        return Err(MisdError::Config("orthogonalization loss needs at least one negative feature".into()));
    }
    let mut sum = 0.0;
    for a in negative_features {
        for b in negative_features {
            sum += cosine_sim(a, b)?;
        }
    }
    Ok(sum / (n * n) as f64)
}

pub fn total_loss(ce: f64, neg: f64, orth: f64, lambda_neg: f64, lambda_orth: f64) -> Result<LossBreakdown> {
    check_coefficients(lambda_neg, lambda_orth)?;
    Ok(LossBreakdown { ce, neg, orth, total: ce + lambda_neg * neg + lambda_orth * orth, lambda_neg, lambda_orth })
}

/// One training sample as seen by the loss.
#[derive(Debug, Clone, Copy)]
pub struct LossSample<'a> {
    pub normal: &'a Embedding,
    pub pseudo: &'a Embedding,
    /// Every view except the normal one; only read by the local negative modes.
    pub locals: &'a [&'a Embedding],
    pub label: usize,
}

/// Gradients with respect to the encoded features `t_c` and `t̆_n`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureGradients {
    pub class: Vec<Vec<f64>>,
    pub negative: Vec<Vec<f64>>,
}

/// Gradients with respect to the trainable context vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct PromptGradients {
    pub class_context: Vec<Vec<f64>>,
    pub negative_contexts: Vec<Vec<Vec<f64>>>,
}

impl PromptGradients {
    /// Class context first, then each negative context in order.
    pub fn flatten(&self) -> Vec<f64> {
        self.class_context
            .iter()
            .chain(self.negative_contexts.iter().flatten())
            .flatten()
            .copied()
            .collect()
    }
}

fn axpy(acc: &mut [f64], alpha: f64, x: &[f64]) {
    for (a, v) in acc.iter_mut().zip(x) {
        *a += alpha * v;
    }
}

/// Adds `weight · ∂neg/∂features` for one pseudo feature; returns the loss.
fn neg_term(
    pseudo: &Embedding,
    class: &[Embedding],
    negative: &[Embedding],
    temperature: f64,
    weight: f64,
    grads: &mut FeatureGradients,
) -> Result<f64> {
    let p = pseudo.as_slice();
    let mut logits = Vec::with_capacity(class.len() + negative.len());
    let mut dsims = Vec::with_capacity(logits.capacity());
    for t in class.iter().chain(negative) {
        let (s, g) = cosine_grad(p, t.as_slice())?;
        logits.push(s / temperature);
        dsims.push(g);
    }
    let c = class.len();
    let loss = log_sum_exp(&logits) - log_sum_exp(&logits[c..]);
    if weight != 0.0 {
        let all = softmax(&logits);
        let negs = softmax(&logits[c..]);
        for (i, g) in dsims.iter().enumerate() {
            let dlogit = if i < c { all[i] } else { all[i] - negs[i - c] };
            let target = if i < c { &mut grads.class[i] } else { &mut grads.negative[i - c] };
            axpy(target, weight * dlogit / temperature, g);
        }
    }
    Ok(loss)
}

/// Mean-reduced losses over the batch and their gradients with respect to
/// the class and negative features.
pub fn feature_gradients(
    batch: &[LossSample<'_>],
    class: &[Embedding],
    negative: &[Embedding],
    config: &LossConfig,
    weights: LossWeights,
) -> Result<(LossBreakdown, FeatureGradients)> {
    config.validate()?;
    if batch.is_empty() {
        return Err(MisdError::Data("loss batch is empty".into()));
    }
    if negative.is_empty() {
        return Err(MisdError::Config("at least one negative feature is required".into()));
    }
    let t = config.temperature;
    let d = class.first().map(|e| e.dim()).unwrap_or(0);
    let mut grads = FeatureGradients { class: vec![vec![0.0; d]; class.len()], negative: vec![vec![0.0; d]; negative.len()] };
    let inv_b = 1.0 / batch.len() as f64;

    let (mut ce_sum, mut neg_sum) = (0.0, 0.0);
    for sample in batch {
        if sample.label >= class.len() {
            return Err(MisdError::Data(format!("label {} out of range for {} classes", sample.label, class.len())));
        }
        // cross-entropy on the normal view
        let q = sample.normal.as_slice();
        let mut logits = Vec::with_capacity(class.len());
        let mut dsims = Vec::with_capacity(class.len());
        for feat in class {
            let (s, g) = cosine_grad(q, feat.as_slice())?;
            logits.push(s / t);
            dsims.push(g);
        }
        ce_sum += log_sum_exp(&logits) - logits[sample.label];
        if weights.ce != 0.0 {
            let p = softmax(&logits);
            for (c, g) in dsims.iter().enumerate() {
                let dlogit = p[c] - if c == sample.label { 1.0 } else { 0.0 };
                axpy(&mut grads.class[c], weights.ce * inv_b * dlogit / t, g);
            }
        }

        let w = weights.neg * inv_b;
        neg_sum += match config.negative_mode {
            NegativeMode::Global => neg_term(sample.pseudo, class, negative, t, w, &mut grads)?,
            NegativeMode::Local => local_term(sample, class, negative, t, w, &mut grads)?,
            NegativeMode::GlobalLocal => {
                let g = neg_term(sample.pseudo, class, negative, t, 0.5 * w, &mut grads)?;
                let l = local_term(sample, class, negative, t, 0.5 * w, &mut grads)?;
                0.5 * (g + l)
            }
        };
    }

    let n = negative.len();
    let mut orth = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i == j {
                orth += cosine(negative[i].as_slice(), negative[j].as_slice())?;
                continue;
            }
            let (s, g) = cosine_grad(negative[j].as_slice(), negative[i].as_slice())?;
            orth += s;
            if weights.orth != 0.0 {
                // symmetric pair: the (j, i) visit accounts for the other argument
                axpy(&mut grads.negative[i], 2.0 * weights.orth / (n * n) as f64, &g);
            }
        }
    }
    orth /= (n * n) as f64;

    let ce = ce_sum * inv_b;
    let neg = neg_sum * inv_b;
    let breakdown = LossBreakdown {
        ce,
        neg,
        orth,
        total: weights.ce * ce + weights.neg * neg + weights.orth * orth,
        lambda_neg: weights.neg,
        lambda_orth: weights.orth,
    };
    Ok((breakdown, grads))
}

fn local_term(
    sample: &LossSample<'_>,
    class: &[Embedding],
    negative: &[Embedding],
    temperature: f64,
    weight: f64,
    grads: &mut FeatureGradients,
) -> Result<f64> {
    if sample.locals.is_empty() {
        return Err(MisdError::Config("local negative mode needs at least two views per sample".into()));
    }
    let share = 1.0 / sample.locals.len() as f64;
    let mut sum = 0.0;
    for view in sample.locals {
        sum += neg_term(view, class, negative, temperature, weight * share, grads)?;
    }
    Ok(sum * share)
}

/// Encoded class and negative features for the current bank.
pub fn encode_bank(bank: &PromptBank, encoder: &FrozenTextEncoder) -> Result<(Vec<Embedding>, Vec<Embedding>)> {
    let class = (0..bank.num_classes()).map(|c| encoder.encode(&bank.class_prompt(c))).collect::<Result<_>>()?;
    let negative = (0..bank.num_negatives()).map(|n| encoder.encode(&bank.negative_prompt(n))).collect::<Result<_>>()?;
    Ok((class, negative))
}

/// Gradients of the weighted mean loss with respect to every trainable
/// context vector. Class-name tokens and the null token get no gradient.
pub fn loss_gradients(
    batch: &[LossSample<'_>],
    bank: &PromptBank,
    encoder: &FrozenTextEncoder,
    config: &LossConfig,
    weights: LossWeights,
) -> Result<(LossBreakdown, PromptGradients)> {
    let (class, negative) = encode_bank(bank, encoder)?;
    let (breakdown, fg) = feature_gradients(batch, &class, &negative, config, weights)?;
    let l = bank.context_len();
    let d_tok = bank.token_dim();

    let mut class_context = vec![vec![0.0; d_tok]; l];
    for (feat, g) in class.iter().zip(&fg.class) {
        let slots = encoder.vjp_from_output(feat.as_slice(), g);
        for (acc, slot) in class_context.iter_mut().zip(&slots[..l]) {
            axpy(acc, 1.0, slot.as_slice());
        }
    }
    let negative_contexts = negative
        .iter()
        .zip(&fg.negative)
        .map(|(feat, g)| {
            encoder.vjp_from_output(feat.as_slice(), g)[..l].iter().map(|s| s.as_slice().to_vec()).collect()
        })
        .collect();
    Ok((breakdown, PromptGradients { class_context, negative_contexts }))
}

/// Flattened trainable parameters in [`PromptGradients::flatten`] order.
pub fn trainable_params(bank: &PromptBank) -> Vec<f64> {
    bank.class_context
        .iter()
        .chain(bank.negative_contexts.iter().flatten())
        .flat_map(|t| t.as_slice().iter().copied())
        .collect()
}

pub fn set_trainable_params(bank: &mut PromptBank, params: &[f64]) {
    let mut it = params.iter();
    for tok in bank.class_context.iter_mut().chain(bank.negative_contexts.iter_mut().flatten()) {
        for v in tok.as_mut_slice() {
            *v = *it.next().expect("parameter vector too short");
        }
    }
    debug_assert!(it.next().is_none(), "parameter vector too long");
}
