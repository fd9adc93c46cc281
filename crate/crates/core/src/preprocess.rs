//! Log compression followed by min-max normalization onto `[0, 1]`.
//!
//! The log step is `log(1 + v)` so zero counts stay representable. The
//! statistics come from the training partition only.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::SparseTensor3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Preprocessor {
    pub log_applied: bool,
    /// Minimum of the (possibly log-transformed) training values.
    pub min: f64,
    pub max: f64,
}

impl Preprocessor {
    /// Linear map with `min = 0`, `max = 1`: transform and inverse are the identity.
    pub const fn identity() -> Self {
        Self { log_applied: false, min: 0.0, max: 1.0 }
    }

    pub fn fit(train: &SparseTensor3, use_log: bool) -> Result<Self> {
        Self::fit_values(train.values(), use_log)
    }

    pub fn fit_values(values: impl IntoIterator<Item = f64>, use_log: bool) -> Result<Self> {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for v in values {
            if use_log && v < 0.0 {
                return Err(Error::NegativeUnderLog(v));
            }
            let g = if use_log { libm::log1p(v) } else { v };
            lo = lo.min(g);
            hi = hi.max(g);
        }
        if !(hi > lo) {
            return Err(Error::ConstantValues);
        }
        Ok(Self { log_applied: use_log, min: lo, max: hi })
    }

    /// Not clipped: values outside the fitted range leave `[0, 1]`.
    pub fn transform(&self, v: f64) -> f64 {
        let g = if self.log_applied { libm::log1p(v) } else { v };
        (g - self.min) / (self.max - self.min)
    }

    pub fn inverse(&self, u: f64) -> f64 {
        let g = u * (self.max - self.min) + self.min;
        if self.log_applied {
            libm::expm1(g)
        } else {
            g
        }
    }

    pub fn transform_tensor(&self, t: &SparseTensor3) -> SparseTensor3 {
        t.map_values(|e| self.transform(e.value))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn log_mode_statistics() {
        let p = Preprocessor::fit_values([0.0, 99.0], true).unwrap();
        assert_eq!(p.min, 0.0);
        assert_eq!(p.max, libm::log(100.0));
        assert!((p.inverse(p.transform(42.0)) - 42.0).abs() < 1e-9 * 42.0);
    }

    #[test]
    fn linear_mode_midpoint_and_extrapolation() {
        let p = Preprocessor::fit_values([1.0, 9.0], false).unwrap();
        assert_eq!((p.min, p.max), (1.0, 9.0));
        assert_eq!(p.transform(5.0), 0.5);
        assert_eq!(p.transform(9.0), 1.0);
        // (13 - 1) / 8
        assert_eq!(p.transform(13.0), 1.5);
    }

    #[test]
    fn degenerate_inputs() {
        assert_eq!(Preprocessor::fit_values([2.0, 2.0], true), Err(Error::ConstantValues));
        assert_eq!(Preprocessor::fit_values([2.0, 2.0], false), Err(Error::ConstantValues));
        assert_eq!(Preprocessor::fit_values([], false), Err(Error::ConstantValues));
        assert_eq!(Preprocessor::fit_values([1.0, -1.0], true), Err(Error::NegativeUnderLog(-1.0)));
        assert!(Preprocessor::fit_values([1.0, -1.0], false).is_ok());
    }

    #[test]
    fn identity_is_identity() {
        let p = Preprocessor::identity();
        assert_eq!(p.transform(17.25), 17.25);
        assert_eq!(p.inverse(-3.5), -3.5);
    }
}
