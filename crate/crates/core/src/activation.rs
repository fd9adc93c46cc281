use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_LEAKY_SLOPE: f64 = 0.01;

/// Hidden-layer nonlinearity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Activation {
    Sigmoid,
    Tanh,
    Relu,
    LeakyRelu { slope: f64 },
}

/// Logistic function, branching on sign so `exp` never overflows.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + libm::exp(-x))
    } else {
        let e = libm::exp(x);
        e / (1.0 + e)
    }
}

impl Activation {
    pub fn leaky_relu(slope: f64) -> Result<Self> {
        let a = Activation::LeakyRelu { slope };
        a.validate()?;
        Ok(a)
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            Activation::LeakyRelu { slope } if !(slope > 0.0 && slope < 1.0) => Err(Error::InvalidConfig(
                alloc::format!("leaky_relu slope {slope} outside (0, 1)"),
            )),
            _ => Ok(()),
        }
    }

    pub fn apply(&self, x: f64) -> f64 {
        match *self {
            Activation::Sigmoid => sigmoid(x),
            Activation::Tanh => libm::tanh(x),
            Activation::Relu => x.max(0.0),
            Activation::LeakyRelu { slope } => {
                if x > 0.0 {
                    x
                } else {
                    slope * x
                }
            }
        }
    }

    pub fn apply_vec(&self, x: &[f64]) -> Vec<f64> {
        x.iter().map(|&v| self.apply(v)).collect()
    }

    /// Derivative at pre-activation `pre`, given `post = apply(pre)`.
    /// At the kink ReLU uses 0 and LeakyReLU uses its slope.
    pub fn derivative(&self, pre: f64, post: f64) -> f64 {
        match *self {
            Activation::Sigmoid => post * (1.0 - post),
            Activation::Tanh => 1.0 - post * post,
            Activation::Relu => {
                if pre > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::LeakyRelu { slope } => {
                if pre > 0.0 {
                    1.0
                } else {
                    slope
                }
            }
        }
    }

    pub fn is_piecewise_linear(&self) -> bool {
        matches!(self, Activation::Relu | Activation::LeakyRelu { .. })
    }

    pub fn name(&self) -> &'static str {
        match self {
            Activation::Sigmoid => "sigmoid",
            Activation::Tanh => "tanh",
            Activation::Relu => "relu",
            Activation::LeakyRelu { .. } => "leaky_relu",
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Activation::LeakyRelu { slope } if *slope != DEFAULT_LEAKY_SLOPE => write!(f, "leaky_relu:{slope}"),
            a => f.write_str(a.name()),
        }
    }
}

/// Accepts `sigmoid`, `tanh`, `relu`, `leaky_relu` or `leaky_relu:<slope>`
/// (case-insensitive, `-` or `_`).
impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.trim().to_ascii_lowercase().replace('-', "_");
        let (name, arg) = match lower.split_once(':') {
            Some((n, a)) => (n, Some(a)),
            None => (lower.as_str(), None),
        };
        let bad = || Error::InvalidConfig(alloc::format!("unknown activation {s:?}"));
        match (name, arg) {
            ("sigmoid", None) => Ok(Activation::Sigmoid),
            ("tanh", None) => Ok(Activation::Tanh),
            ("relu", None) => Ok(Activation::Relu),
            ("leaky_relu" | "leakyrelu", None) => Ok(Activation::LeakyRelu { slope: DEFAULT_LEAKY_SLOPE }),
            ("leaky_relu" | "leakyrelu", Some(a)) => Activation::leaky_relu(a.parse().map_err(|_| bad())?),
            _ => Err(bad()),
        }
    }
}
