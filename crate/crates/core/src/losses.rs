//! Scalar losses in the prediction argument, with derivatives up to third
//! order and the radius bound used by the tolerance rule.
//!
//! The logistic loss is evaluated through `softplus`/`sigmoid` forms that
//! never exponentiate a positive argument, so values and derivatives stay
//! finite for any finite prediction.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossModel {
    /// `log(1 + exp(-y z))` with labels in `{-1, +1}`.
    Logistic,
    /// `(y - z)^2 / 2` with real labels.
    Squared,
}

impl LossModel {
    pub fn name(self) -> &'static str {
        match self {
            LossModel::Logistic => "logistic",
            LossModel::Squared => "squared",
        }
    }

    pub fn check_label(self, y: f64) -> Result<()> {
        match self {
            LossModel::Logistic if y == 1.0 || y == -1.0 => Ok(()),
            LossModel::Logistic => Err(Error::InvalidLabel {
                label: y,
                model: "logistic",
                expected: "-1 or +1",
            }),
            LossModel::Squared if y.is_finite() => Ok(()),
            LossModel::Squared => Err(Error::InvalidLabel {
                label: y,
                model: "squared",
                expected: "a finite real",
            }),
        }
    }

    pub fn check_labels(self, ys: &[f64]) -> Result<()> {
        ys.iter().try_for_each(|&y| self.check_label(y))
    }

    /// Loss value `l(y, z)`.
    pub fn value(self, y: f64, z: f64) -> Result<f64> {
        self.check_label(y)?;
        Ok(self.value_unchecked(y, z))
    }

    /// First three derivatives of `z -> l(y, z)`.
    pub fn derivatives(self, y: f64, z: f64) -> Result<Derivatives> {
        self.check_label(y)?;
        Ok(self.derivatives_unchecked(y, z))
    }

    /// Same as [`LossModel::value`] for labels already validated.
    #[inline]
    pub fn value_unchecked(self, y: f64, z: f64) -> f64 {
        match self {
            LossModel::Logistic => softplus(-y * z),
            LossModel::Squared => 0.5 * (y - z) * (y - z),
        }
    }

    #[inline]
    pub fn derivatives_unchecked(self, y: f64, z: f64) -> Derivatives {
        match self {
            LossModel::Logistic => {
                // with m = y z and p = sigmoid(-m): l' = -y p, l'' = p (1 - p),
                // l''' = y p (1 - p)(2p - 1) since y^2 = 1.
                let m = y * z;
                let p = sigmoid(-m);
                let q = sigmoid(m);
                let d2 = p * q;
                Derivatives {
                    d1: -y * p,
                    d2,
                    d3: y * d2 * (p - q),
                }
            }
            LossModel::Squared => Derivatives {
                d1: z - y,
                d2: 1.0,
                d3: 0.0,
            },
        }
    }

    /// Radius bound of the self-concordance set: the largest feature norm
    /// `sqrt(K(x, x))` for logistic, zero for the quadratic loss.
    pub fn gsc_radius(self, kernel_diag: &[f64]) -> Result<GscRadius> {
        if kernel_diag.is_empty() {
            return Err(Error::InvalidArgument("empty kernel diagonal".into()));
        }
        if let Some(&bad) = kernel_diag.iter().find(|d| !(**d >= 0.0)) {
            return Err(Error::InvalidArgument(format!(
                "kernel diagonal entry {bad} is negative or NaN"
            )));
        }
        Ok(match self {
            LossModel::Squared => GscRadius(0.0),
            LossModel::Logistic => GscRadius(
                kernel_diag
                    .iter()
                    .map(|d| d.sqrt())
                    .fold(0.0_f64, f64::max),
            ),
        })
    }
}

impl std::fmt::Display for LossModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for LossModel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "logistic" => Ok(LossModel::Logistic),
            "squared" => Ok(LossModel::Squared),
            other => Err(Error::Parse(format!("unknown loss {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Derivatives {
    pub d1: f64,
    pub d2: f64,
    pub d3: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
pub struct GscRadius(pub f64);

impl GscRadius {
    pub fn value(self) -> f64 {
        self.0
    }
}

/// `1 / (1 + exp(-z))` without overflow.
#[inline]
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + exp(z))` without overflow.
#[inline]
pub fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}
