//! Finite-difference verification of the analytic prompt gradients.

use rand::Rng;
use serde::Serialize;

use crate::augment::{select_views, ViewSet};
use crate::losses::{self, LossConfig, LossSample, LossWeights, NegativeMode};
use crate::model::{normal_vec, Embedding, FrozenTextEncoder, PromptBank, TextEncoderSpec, Vocabulary};
use crate::{seed, MisdError, Result};

pub const DEFAULT_TRIALS: usize = 100;
pub const DEFAULT_STEP: f64 = 1e-5;
pub const DEFAULT_TOLERANCE: f64 = 1e-4;
/// Denominator floor for relative errors, so coordinates with a vanishing
/// gradient are judged on absolute error.
pub const ERROR_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckOptions {
    pub trials: usize,
    pub seed: u64,
    pub step: f64,
    pub tolerance: f64,
    /// Added to every analytic gradient coordinate. Only useful for checking
    /// that the checker notices a wrong gradient.
    pub perturbation: f64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self { trials: DEFAULT_TRIALS, seed: 0, step: DEFAULT_STEP, tolerance: DEFAULT_TOLERANCE, perturbation: 0.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Worst {
    pub component: &'static str,
    pub trial: usize,
    pub coordinate: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub relative_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradCheckReport {
    pub trials: usize,
    pub checked: usize,
    pub tolerance: f64,
    pub worst: Worst,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.worst.relative_error < self.tolerance
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(ERROR_FLOOR)
}

struct Instance {
    encoder: FrozenTextEncoder,
    bank: PromptBank,
    sets: Vec<ViewSet>,
    config: LossConfig,
}

fn instance(seed_value: u64, trial: usize) -> Result<Instance> {
    let mut rng = seed::rng_indexed(seed_value, &["gradcheck"], trial as u64);
    let spec = TextEncoderSpec {
        embed_dim: 8,
        token_dim: 6,
        context_len: 4,
        seed: rng.random(),
        ..TextEncoderSpec::default()
    };
    let encoder = FrozenTextEncoder::new(spec.clone())?;
    let mut bank = PromptBank::init_anonymous(&Vocabulary::from_spec(&spec), 5, 4, 3, rng.random())?;
    // move away from the tiny initialization so all terms are exercised
    let params: Vec<f64> = normal_vec(&mut rng, losses::trainable_params(&bank).len(), 0.5);
    losses::set_trainable_params(&mut bank, &params);
    let sets = (0..4)
        .map(|i| {
            let views = (0..3).map(|_| Embedding::new(normal_vec(&mut rng, 8, 1.0))).collect::<Result<Vec<_>>>()?;
            ViewSet::new(i, views, rng.random_range(0..5))
        })
        .collect::<Result<Vec<_>>>()?;
    let mode = [NegativeMode::Global, NegativeMode::Local, NegativeMode::GlobalLocal][trial % 3];
    let config = LossConfig {
        temperature: rng.random_range(0.5..2.0),
        negative_mode: mode,
        ..LossConfig::default()
    };
    Ok(Instance { encoder, bank, sets, config })
}

fn loss_value(inst: &Instance, bank: &PromptBank, weights: LossWeights, batch: &[LossSample<'_>]) -> Result<f64> {
    let (class, negative) = losses::encode_bank(bank, &inst.encoder)?;
    Ok(losses::feature_gradients(batch, &class, &negative, &inst.config, weights)?.0.total)
}

/// Compares analytic and central-difference gradients of the CE, negative,
/// orthogonality and total losses over randomized small instances.
pub fn run(options: &GradCheckOptions) -> Result<GradCheckReport> {
    if options.trials == 0 {
        return Err(MisdError::Config("gradcheck needs at least one trial".into()));
    }
    if options.step.is_nan() || options.step <= 0.0 {
        return Err(MisdError::Config("finite-difference step must be positive".into()));
    }
    let mut worst = Worst { component: "ce", trial: 0, coordinate: 0, analytic: 0.0, numeric: 0.0, relative_error: 0.0 };
    let mut checked = 0;
    for trial in 0..options.trials {
        let inst = instance(options.seed, trial)?;
        let (class, _) = losses::encode_bank(&inst.bank, &inst.encoder)?;
        let pairs = inst.sets.iter().map(|vs| select_views(vs, &class[vs.label])).collect::<Result<Vec<_>>>()?;
        let locals: Vec<Vec<&Embedding>> = inst
            .sets
            .iter()
            .zip(&pairs)
            .map(|(vs, p)| vs.views.iter().enumerate().filter(|(i, _)| *i != p.normal_index).map(|(_, v)| v).collect())
            .collect();
        let batch: Vec<LossSample<'_>> = inst
            .sets
            .iter()
            .zip(&pairs)
            .zip(&locals)
            .map(|((vs, p), l)| LossSample { normal: &p.normal, pseudo: &p.pseudo, locals: l, label: vs.label })
            .collect();
        let components = [
            ("ce", LossWeights::CE),
            ("neg", LossWeights::NEG),
            ("orth", LossWeights::ORTH),
            ("total", LossWeights::objective(&inst.config)),
        ];
        let params = losses::trainable_params(&inst.bank);
        for (name, weights) in components {
            let analytic = losses::loss_gradients(&batch, &inst.bank, &inst.encoder, &inst.config, weights)?.1.flatten();
            let mut bank = inst.bank.clone();
            for (i, &a) in analytic.iter().enumerate() {
                let mut shifted = params.clone();
                shifted[i] = params[i] + options.step;
                losses::set_trainable_params(&mut bank, &shifted);
                let plus = loss_value(&inst, &bank, weights, &batch)?;
                shifted[i] = params[i] - options.step;
                losses::set_trainable_params(&mut bank, &shifted);
                let minus = loss_value(&inst, &bank, weights, &batch)?;
                let numeric = (plus - minus) / (2.0 * options.step);
                let a = a + options.perturbation;
                let err = relative_error(a, numeric);
                checked += 1;
                if err > worst.relative_error || checked == 1 {
                    worst = Worst { component: name, trial, coordinate: i, analytic: a, numeric, relative_error: err };
                }
            }
        }
    }
    Ok(GradCheckReport { trials: options.trials, checked, tolerance: options.tolerance, worst })
}

/// Like [`run`] but fails with a `GradCheck` error naming the worst coordinate.
pub fn check(options: &GradCheckOptions) -> Result<GradCheckReport> {
    let report = run(options)?;
    if !report.passed() {
        let w = &report.worst;
        return Err(MisdError::GradCheck(format!(
            "{} gradient, trial {}, coordinate {}: analytic {:.6e} vs numeric {:.6e} (relative error {:.3e} >= {:.1e})",
            w.component, w.trial, w.coordinate, w.analytic, w.numeric, w.relative_error, report.tolerance
        )));
    }
    Ok(report)
}
