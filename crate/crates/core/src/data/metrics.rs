use std::collections::BTreeMap;

use crate::data::MaskedMatrix;
use crate::error::{Error, Result};

/// RMSE of `y_pred` divided by the RMSE of the constant mean predictor.
pub fn nrmse(y_true: &[f64], y_pred: &[f64]) -> Result<f64> {
    if y_true.len() != y_pred.len() {
        return Err(Error::Dimension(format!(
            "{} targets vs {} predictions",
            y_true.len(),
            y_pred.len()
        )));
    }
    if y_true.len() < 2 {
        return Err(Error::InvalidParameter("nrmse needs at least two points".into()));
    }
    let n = y_true.len() as f64;
    let mean = y_true.iter().sum::<f64>() / n;
    let denom: f64 = y_true.iter().map(|y| (y - mean).powi(2)).sum();
    if denom <= 0.0 {
        return Err(Error::ConstantTarget);
    }
    let num: f64 = y_true
        .iter()
        .zip(y_pred)
        .map(|(y, p)| (y - p).powi(2))
        .sum();
    Ok((num / denom).sqrt())
}

/// Fraction of matching labels.
pub fn accuracy(truth: &[u8], predicted: &[u8]) -> Result<f64> {
    if truth.len() != predicted.len() || truth.is_empty() {
        return Err(Error::Dimension(format!(
            "{} labels vs {} predictions",
            truth.len(),
            predicted.len()
        )));
    }
    let hits = truth.iter().zip(predicted).filter(|(a, b)| a == b).count();
    Ok(hits as f64 / truth.len() as f64)
}

/// Groups rows by their availability pattern. Keys are ordered, so iteration
/// order is deterministic.
pub fn pattern_groups(m: &MaskedMatrix) -> BTreeMap<Vec<bool>, Vec<usize>> {
    let mut groups: BTreeMap<Vec<bool>, Vec<usize>> = BTreeMap::new();
    for i in 0..m.nrows() {
        groups.entry(m.mask_row(i).to_vec()).or_default().push(i);
    }
    groups
}
