//! Error metrics on the original measurement scale.
//!
//! MRE follows the aggregate convention `sum |pred - truth| / sum |truth|`,
//! not a mean of per-entry ratios. It is omitted when `sum |truth| = 0`.

use alloc::collections::BTreeMap;
use alloc::string::String;

use serde::{Deserialize, Serialize};

use crate::baselines::clip_unit;
use crate::error::{Error, Result};
use crate::preprocess::Preprocessor;
use crate::tensor::{Index3, SparseTensor3};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scale {
    Original,
    Normalized,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunMetadata {
    pub seed: u64,
    pub config_digest: String,
    pub epochs_trained: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub mae: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub mre: Option<f64>,
    pub rmse: f64,
    pub n: usize,
    pub scale: Scale,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub metadata: Option<RunMetadata>,
}

/// MAE, MRE and RMSE over `(prediction, truth)` pairs.
pub fn error_metrics(pairs: impl IntoIterator<Item = (f64, f64)>, scale: Scale) -> Result<EvalReport> {
    let (mut n, mut abs, mut sq, mut truth_abs) = (0usize, 0.0, 0.0, 0.0);
    for (pred, truth) in pairs {
        let e = pred - truth;
        n += 1;
        abs += e.abs();
        sq += e * e;
        truth_abs += truth.abs();
    }
    if n == 0 {
        return Err(Error::EmptyBatch);
    }
    let nf = n as f64;
    Ok(EvalReport {
        mae: abs / nf,
        mre: (truth_abs > 0.0).then(|| abs / truth_abs),
        rmse: libm::sqrt(sq / nf),
        n,
        scale,
        metadata: None,
    })
}

/// Scores normalized predictions against `truth` in original units:
/// optionally clip each prediction to `[0, 1]`, then invert `p`.
pub fn evaluate(predictions: &[(Index3, f64)], truth: &SparseTensor3, p: &Preprocessor, clip: bool) -> Result<EvalReport> {
    let lookup: BTreeMap<Index3, f64> = truth.entries().iter().map(|e| (e.index, e.value)).collect();
    let mut pairs = alloc::vec::Vec::with_capacity(predictions.len());
    for &(idx, y) in predictions {
        let t = *lookup.get(&idx).ok_or(Error::UnknownTriple(idx))?;
        let y = if clip { clip_unit(y) } else { y };
        pairs.push((p.inverse(y), t));
    }
    error_metrics(pairs, Scale::Original)
}

/// `(act - baseline) / baseline * 100`. Negative means the error shrank.
pub fn relative_change(metric_act: f64, metric_baseline: f64) -> Result<f64> {
    if metric_baseline == 0.0 {
        return Err(Error::ZeroBaseline);
    }
    Ok((metric_act - metric_baseline) / metric_baseline * 100.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{Dims, Entry};

    fn truth(values: &[f64]) -> SparseTensor3 {
        let entries = values.iter().enumerate().map(|(n, &v)| Entry::new(n, 0, 0, v)).collect();
        SparseTensor3::new(Dims::new(values.len(), 1, 1), entries).unwrap()
    }

    #[test]
    fn perfect_predictions() {
        let t = truth(&[3.0, 4.0]);
        let preds = [(Index3::new(0, 0, 0), 3.0), (Index3::new(1, 0, 0), 4.0)];
        let r = evaluate(&preds, &t, &Preprocessor::identity(), false).unwrap();
        assert_eq!((r.mae, r.mre, r.rmse, r.n), (0.0, Some(0.0), 0.0, 2));
    }

    #[test]
    fn two_entry_hand_arithmetic() {
        let t = truth(&[10.0, 20.0]);
        let preds = [(Index3::new(0, 0, 0), 11.0), (Index3::new(1, 0, 0), 18.0)];
        let r = evaluate(&preds, &t, &Preprocessor::identity(), false).unwrap();
        assert_eq!(r.mae, 1.5);
        assert!((r.rmse - libm::sqrt(2.5)).abs() < 1e-15);
        assert!((r.rmse - 1.5811).abs() < 1e-4);
        assert!((r.mre.unwrap() - 0.1).abs() < 1e-15);
    }

    #[test]
    fn single_entry() {
        let r = evaluate(&[(Index3::new(0, 0, 0), 7.0)], &truth(&[5.0]), &Preprocessor::identity(), false).unwrap();
        assert_eq!((r.mae, r.rmse, r.mre), (2.0, 2.0, Some(0.4)));
    }

    #[test]
    fn clipping_happens_before_inverse() {
        let p = Preprocessor { log_applied: false, min: 10.0, max: 20.0 };
        let r = evaluate(&[(Index3::new(0, 0, 0), 1.5)], &truth(&[20.0]), &p, true).unwrap();
        assert_eq!(r.mae, 0.0);
        let r = evaluate(&[(Index3::new(0, 0, 0), 1.5)], &truth(&[20.0]), &p, false).unwrap();
        assert_eq!(r.mae, 5.0);
    }

    #[test]
    fn error_paths() {
        let t = truth(&[0.0, 0.0]);
        assert_eq!(evaluate(&[], &t, &Preprocessor::identity(), false), Err(Error::EmptyBatch));
        let r = evaluate(&[(Index3::new(0, 0, 0), 1.0)], &t, &Preprocessor::identity(), false).unwrap();
        assert_eq!(r.mre, None);
        assert_eq!(
            evaluate(&[(Index3::new(1, 1, 0), 1.0)], &truth(&[1.0, 2.0]), &Preprocessor::identity(), false),
            Err(Error::UnknownTriple(Index3::new(1, 1, 0)))
        );
    }

    #[test]
    fn relative_change_examples() {
        assert_eq!(relative_change(9.0, 10.0).unwrap(), -10.0);
        assert_eq!(relative_change(10.0, 10.0).unwrap(), 0.0);
        let d = relative_change(7.53, 7.63).unwrap();
        assert!((d - (-1.31)).abs() < 5e-3, "{d}");
        assert_eq!(relative_change(1.0, 0.0), Err(Error::ZeroBaseline));
    }
}
