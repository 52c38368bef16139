//! Synthetic missingness: MCAR and value-dependent (MNAR) masking.

use rand::Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::data::MaskedMatrix;
use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum MissingnessKind {
    /// Every available cell is dropped independently with probability `p`.
    Mcar { p: f64 },
    /// Cell `i` of a column is dropped with probability `Phi(a |z_i| + b)`
    /// where `z_i` is the standardised value.
    Mnar { a: f64, b: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MissingnessSpec {
    #[serde(flatten)]
    pub kind: MissingnessKind,
    pub seed: u64,
}

impl MissingnessSpec {
    pub fn mcar(p: f64, seed: u64) -> Self {
        Self {
            kind: MissingnessKind::Mcar { p },
            seed,
        }
    }

    pub fn mnar(a: f64, b: f64, seed: u64) -> Self {
        Self {
            kind: MissingnessKind::Mnar { a, b },
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self.kind {
            MissingnessKind::Mcar { p } if !(0.0..=1.0).contains(&p) => Err(
                Error::InvalidParameter(format!("MCAR probability {p} outside [0, 1]")),
            ),
            MissingnessKind::Mnar { a, b } if !a.is_finite() || !b.is_finite() => Err(
                Error::InvalidParameter("MNAR slope and offset must be finite".into()),
            ),
            _ => Ok(()),
        }
    }

    pub fn apply(&self, m: &MaskedMatrix) -> Result<MaskedMatrix> {
        self.validate()?;
        match self.kind {
            MissingnessKind::Mcar { p } => apply_mcar(m, p, self.seed),
            MissingnessKind::Mnar { a, b } => apply_mnar(m, a, b, self.seed),
        }
    }
}

pub fn apply_mcar(m: &MaskedMatrix, p: f64, seed: u64) -> Result<MaskedMatrix> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::InvalidParameter(format!(
            "MCAR probability {p} outside [0, 1]"
        )));
    }
    let mut rng = rng::stream(seed, 0);
    // one draw per cell, missing or not, so the pattern does not depend on the input mask
    let mask = m
        .mask()
        .iter()
        .map(|&avail| {
            let drop = rng.random::<f64>() < p;
            avail && !drop
        })
        .collect();
    m.with_mask(mask)
}

/// Masks one column with probability `Phi(a |x'_i| + b)`, `x'` standardised
/// by the mean and population standard deviation of the available entries.
pub fn apply_mnar_column(col: &[Option<f64>], a: f64, b: f64, seed: u64) -> Result<Vec<Option<f64>>> {
    mnar_column(col, a, b, seed, 0)
}

fn mnar_column(
    col: &[Option<f64>],
    a: f64,
    b: f64,
    seed: u64,
    column: usize,
) -> Result<Vec<Option<f64>>> {
    let avail: Vec<f64> = col.iter().flatten().copied().collect();
    if avail.len() < 2 {
        return Err(Error::InvalidParameter(format!(
            "column {column} needs at least two available entries for MNAR masking"
        )));
    }
    let n = avail.len() as f64;
    let mean = avail.iter().sum::<f64>() / n;
    let var = avail.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    let sd = var.sqrt();
    if sd <= f64::EPSILON * mean.abs().max(1.0) {
        return Err(Error::DegenerateColumn { column });
    }
    let normal = Normal::standard();
    let mut rng = rng::stream(seed, column as u64);
    Ok(col
        .iter()
        .map(|cell| {
            let u = rng.random::<f64>();
            cell.and_then(|x| {
                let z = (x - mean) / sd;
                let p = normal.cdf(a * z.abs() + b);
                if u < p {
                    None
                } else {
                    Some(x)
                }
            })
        })
        .collect())
}

/// Applies the MNAR column generator to every column; column `j` uses stream `j`.
pub fn apply_mnar(m: &MaskedMatrix, a: f64, b: f64, seed: u64) -> Result<MaskedMatrix> {
    let mut mask = m.mask().to_vec();
    let d = m.ncols();
    for j in 0..d {
        let col = mnar_column(&m.column(j), a, b, seed, j)?;
        for (i, cell) in col.iter().enumerate() {
            mask[i * d + j] = cell.is_some();
        }
    }
    m.with_mask(mask)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(n: usize, d: usize) -> MaskedMatrix {
        let rows: Vec<Vec<Option<f64>>> = (0..n)
            .map(|i| (0..d).map(|j| Some((i * d + j) as f64)).collect())
            .collect();
        MaskedMatrix::from_rows(&rows).unwrap()
    }

    #[test]
    fn mcar_extremes() {
        let m = grid(20, 3);
        assert_eq!(apply_mcar(&m, 0.0, 1).unwrap().mask(), m.mask());
        assert!(apply_mcar(&m, 1.0, 1).unwrap().mask().iter().all(|&b| !b));
        assert!(apply_mcar(&m, 1.5, 1).is_err());
    }

    #[test]
    fn mcar_rate_concentrates() {
        let m = grid(10_000, 10);
        let out = apply_mcar(&m, 0.4, 11).unwrap();
        assert!((out.missing_fraction() - 0.4).abs() < 0.01);
    }

    #[test]
    fn mnar_mean_entry_is_a_coin_flip() {
        // a value at the mean has z = 0 so p = Phi(b); with b = 0 that is 1/2
        let col: Vec<Option<f64>> = (0..20_000)
            .map(|i| Some(if i % 2 == 0 { -1.0 } else { 1.0 }))
            .chain(std::iter::repeat_n(Some(0.0), 20_000))
            .collect();
        let out = apply_mnar_column(&col, 0.0, 0.0, 3).unwrap();
        let dropped = out[20_000..].iter().filter(|c| c.is_none()).count() as f64 / 20_000.0;
        assert!((dropped - 0.5).abs() < 0.02, "{dropped}");
    }

    #[test]
    fn mnar_zero_slope_is_constant_rate() {
        let col: Vec<Option<f64>> = (0..50_000).map(|i| Some((i % 97) as f64)).collect();
        let out = apply_mnar_column(&col, 0.0, -1.0, 5).unwrap();
        let rate = out.iter().filter(|c| c.is_none()).count() as f64 / col.len() as f64;
        let expected = Normal::standard().cdf(-1.0);
        assert!((rate - expected).abs() < 0.01);
    }

    #[test]
    fn mnar_constant_column_errors() {
        let col = vec![Some(2.0); 10];
        assert!(matches!(
            apply_mnar_column(&col, 1.0, 0.0, 1),
            Err(Error::DegenerateColumn { .. })
        ));
    }

    #[test]
    fn generators_never_unmask() {
        let m = apply_mcar(&grid(50, 4), 0.3, 2).unwrap();
        let out = apply_mnar(&m, 1.0, -0.5, 9).unwrap();
        for (before, after) in m.mask().iter().zip(out.mask()) {
            assert!(*before || !*after);
        }
    }
}
