use serde::{Deserialize, Serialize};

use crate::{MisdError, Result};

/// A feature vector in the shared image/text space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Embedding(Vec<f64>);

/// One token slot of a prompt, in the text encoder's input space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TokenEmbedding(Vec<f64>);

macro_rules! vector_newtype {
    ($name:ident, $what:literal) => {
        impl $name {
            pub fn new(values: Vec<f64>) -> Result<Self> {
                if let Some(i) = values.iter().position(|v| !v.is_finite()) {
                    return Err(MisdError::Data(format!(
                        "{} entry {} is not finite ({})",
                        $what, i, values[i]
                    )));
                }
                Ok(Self(values))
            }

            pub fn zeros(dim: usize) -> Self {
                Self(vec![0.0; dim])
            }

            pub(crate) fn from_vec_unchecked(values: Vec<f64>) -> Self {
                debug_assert!(values.iter().all(|v| v.is_finite()));
                Self(values)
            }

            pub fn dim(&self) -> usize {
                self.0.len()
            }

            pub fn as_slice(&self) -> &[f64] {
                &self.0
            }

            #[allow(dead_code)]
            pub(crate) fn as_mut_slice(&mut self) -> &mut [f64] {
                &mut self.0
            }

            pub fn into_vec(self) -> Vec<f64> {
                self.0
            }

            pub fn norm(&self) -> f64 {
                self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
            }

            pub fn is_finite(&self) -> bool {
                self.0.iter().all(|v| v.is_finite())
            }
        }

        impl AsRef<[f64]> for $name {
            fn as_ref(&self) -> &[f64] {
                &self.0
            }
        }
    };
}

vector_newtype!(Embedding, "embedding");
vector_newtype!(TokenEmbedding, "token embedding");

impl Embedding {
    pub fn scaled(&self, alpha: f64) -> Embedding {
        Embedding(self.0.iter().map(|v| v * alpha).collect())
    }
}
