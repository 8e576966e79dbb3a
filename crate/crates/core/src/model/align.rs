//! Stand-in for vision-language pretraining: fits the frozen name tokens so
//! that the text encoder already roughly agrees with the image encoder before
//! any prompt is trained.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};

use super::{Embedding, FrozenTextEncoder, TokenEmbedding};
use crate::{MisdError, Result};

/// Ridge penalty of the token fit, relative to the mean diagonal of `WᵀW`.
const RIDGE: f64 = 1e-3;

/// For each `(name, anchor)`, the token `x` minimizing
/// `‖W_cls·x − (atanh(radius·â) − b)‖² + ridge·‖x‖²`, so that a prompt with
/// an all-zero context encodes close to the anchor direction `â`.
pub fn fit_name_tokens(
    encoder: &FrozenTextEncoder,
    anchors: &[(String, Embedding)],
    radius: f64,
) -> Result<BTreeMap<String, TokenEmbedding>> {
    if !(radius > 0.0 && radius < 1.0) {
        return Err(MisdError::Config(format!("alignment radius must lie in (0, 1), got {radius}")));
    }
    let spec = encoder.spec();
    let (d, tok, fan_in) = (spec.embed_dim, spec.token_dim, spec.fan_in());
    let class_slot = spec.context_len * tok;
    let w = DMatrix::from_fn(d, tok, |r, c| encoder.weight()[r * fan_in + class_slot + c]);
    let mut gram = w.transpose() * &w;
    let ridge = RIDGE * gram.trace() / tok as f64;
    for i in 0..tok {
        gram[(i, i)] += ridge;
    }
    let chol = gram.cholesky().ok_or_else(|| MisdError::Config("token fit is singular".into()))?;
    let mut table = BTreeMap::new();
    for (name, anchor) in anchors {
        if anchor.dim() != d {
            return Err(MisdError::Shape(format!("anchor for `{name}` has dimension {}, expected {d}", anchor.dim())));
        }
        let norm = anchor.norm();
        if norm == 0.0 {
            return Err(MisdError::UndefinedSimilarity(format!("anchor for `{name}` is the zero vector")));
        }
        let z = DVector::from_fn(d, |j, _| (radius * anchor.as_slice()[j] / norm).atanh() - encoder.bias()[j]);
        let x = chol.solve(&(w.transpose() * z));
        table.insert(name.clone(), TokenEmbedding::new(x.iter().copied().collect())?);
    }
    Ok(table)
}
