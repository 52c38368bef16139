use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense real matrix paired with an availability mask.
///
/// Missing cells hold `NaN` in `values`, but the mask is authoritative: no
/// accessor ever hands out a value whose mask bit is `false`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskedMatrix {
    nrows: usize,
    ncols: usize,
    values: Vec<f64>,
    mask: Vec<bool>,
    column_names: Vec<String>,
}

impl MaskedMatrix {
    /// Build from row-major values and mask.
    pub fn new(
        nrows: usize,
        ncols: usize,
        mut values: Vec<f64>,
        mask: Vec<bool>,
        column_names: Vec<String>,
    ) -> Result<Self> {
        if values.len() != nrows * ncols || mask.len() != nrows * ncols {
            return Err(Error::Dimension(format!(
                "expected {} cells, got {} values and {} mask bits",
                nrows * ncols,
                values.len(),
                mask.len()
            )));
        }
        if column_names.len() != ncols {
            return Err(Error::Dimension(format!(
                "{} column names for {} columns",
                column_names.len(),
                ncols
            )));
        }
        for (v, &m) in values.iter_mut().zip(&mask) {
            if !m {
                *v = f64::NAN;
            } else if !v.is_finite() {
                return Err(Error::NonFinite("available cell holds a non-finite value".into()));
            }
        }
        Ok(Self {
            nrows,
            ncols,
            values,
            mask,
            column_names,
        })
    }

    /// Build from rows of optional cells with default column names `x0, x1, ...`.
    pub fn from_rows(rows: &[Vec<Option<f64>>]) -> Result<Self> {
        let ncols = rows.first().map_or(0, Vec::len);
        let names = (0..ncols).map(|j| format!("x{j}")).collect();
        Self::from_rows_named(rows, names)
    }

    pub fn from_rows_named(rows: &[Vec<Option<f64>>], column_names: Vec<String>) -> Result<Self> {
        let ncols = column_names.len();
        let mut values = Vec::with_capacity(rows.len() * ncols);
        let mut mask = Vec::with_capacity(rows.len() * ncols);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != ncols {
                return Err(Error::Dimension(format!(
                    "row {i} has {} cells, expected {ncols}",
                    row.len()
                )));
            }
            for cell in row {
                values.push(cell.unwrap_or(f64::NAN));
                mask.push(cell.is_some());
            }
        }
        Self::new(rows.len(), ncols, values, mask, column_names)
    }

    /// Fully observed matrix.
    pub fn complete(values: &DMatrix<f64>) -> Self {
        let (n, d) = values.shape();
        let mut data = Vec::with_capacity(n * d);
        for i in 0..n {
            for j in 0..d {
                data.push(values[(i, j)]);
            }
        }
        let names = (0..d).map(|j| format!("x{j}")).collect();
        Self {
            nrows: n,
            ncols: d,
            values: data,
            mask: vec![true; n * d],
            column_names: names,
        }
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn column_names(&self) -> &[String] {
        &self.column_names
    }

    pub fn with_column_names(mut self, names: Vec<String>) -> Result<Self> {
        if names.len() != self.ncols {
            return Err(Error::Dimension(format!(
                "{} column names for {} columns",
                names.len(),
                self.ncols
            )));
        }
        self.column_names = names;
        Ok(self)
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.column_names.iter().position(|c| c == name)
    }

    #[inline]
    pub fn is_available(&self, i: usize, j: usize) -> bool {
        self.mask[i * self.ncols + j]
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> Option<f64> {
        let k = i * self.ncols + j;
        if self.mask[k] {
            Some(self.values[k])
        } else {
            None
        }
    }

    pub fn row(&self, i: usize) -> Vec<Option<f64>> {
        (0..self.ncols).map(|j| self.get(i, j)).collect()
    }

    pub fn column(&self, j: usize) -> Vec<Option<f64>> {
        (0..self.nrows).map(|i| self.get(i, j)).collect()
    }

    pub fn mask_row(&self, i: usize) -> &[bool] {
        &self.mask[i * self.ncols..(i + 1) * self.ncols]
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    /// Raw row-major storage; missing cells are `NaN`.
    pub fn raw_values(&self) -> &[f64] {
        &self.values
    }

    pub fn available_count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    pub fn missing_fraction(&self) -> f64 {
        if self.mask.is_empty() {
            return 0.0;
        }
        1.0 - self.available_count() as f64 / self.mask.len() as f64
    }

    pub fn is_complete(&self) -> bool {
        self.mask.iter().all(|&m| m)
    }

    /// Same values, replacement mask. Cells newly marked available must already
    /// hold finite values.
    pub fn with_mask(&self, mask: Vec<bool>) -> Result<Self> {
        Self::new(
            self.nrows,
            self.ncols,
            self.values.clone(),
            mask,
            self.column_names.clone(),
        )
    }

    pub fn select_columns(&self, cols: &[usize]) -> Self {
        let mut values = Vec::with_capacity(self.nrows * cols.len());
        let mut mask = Vec::with_capacity(self.nrows * cols.len());
        for i in 0..self.nrows {
            for &j in cols {
                let k = i * self.ncols + j;
                values.push(self.values[k]);
                mask.push(self.mask[k]);
            }
        }
        Self {
            nrows: self.nrows,
            ncols: cols.len(),
            values,
            mask,
            column_names: cols.iter().map(|&j| self.column_names[j].clone()).collect(),
        }
    }

    pub fn select_rows(&self, rows: &[usize]) -> Self {
        let mut values = Vec::with_capacity(rows.len() * self.ncols);
        let mut mask = Vec::with_capacity(rows.len() * self.ncols);
        for &i in rows {
            let range = i * self.ncols..(i + 1) * self.ncols;
            values.extend_from_slice(&self.values[range.clone()]);
            mask.extend_from_slice(&self.mask[range]);
        }
        Self {
            nrows: rows.len(),
            ncols: self.ncols,
            values,
            mask,
            column_names: self.column_names.clone(),
        }
    }

    /// Splits off column `target`, returning (remaining features, target column).
    pub fn split_target(&self, target: usize) -> (Self, Vec<Option<f64>>) {
        let keep: Vec<usize> = (0..self.ncols).filter(|&j| j != target).collect();
        (self.select_columns(&keep), self.column(target))
    }

    /// Values with missing cells replaced by `fill`.
    pub fn to_dense(&self, fill: f64) -> DMatrix<f64> {
        DMatrix::from_fn(self.nrows, self.ncols, |i, j| self.get(i, j).unwrap_or(fill))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mask_is_authoritative() {
        let m = MaskedMatrix::new(1, 2, vec![1.0, 5.0], vec![true, false], vec!["a".into(), "b".into()])
            .unwrap();
        assert_eq!(m.get(0, 0), Some(1.0));
        assert_eq!(m.get(0, 1), None);
        assert!(m.raw_values()[1].is_nan());
    }

    #[test]
    fn rejects_shape_mismatch() {
        assert!(MaskedMatrix::new(2, 2, vec![0.0; 3], vec![true; 4], vec!["a".into(), "b".into()]).is_err());
        assert!(MaskedMatrix::from_rows(&[vec![Some(1.0)], vec![Some(1.0), None]]).is_err());
    }

    #[test]
    fn select_and_split() {
        let m = MaskedMatrix::from_rows(&[
            vec![Some(1.0), None, Some(3.0)],
            vec![Some(4.0), Some(5.0), None],
        ])
        .unwrap();
        let (x, y) = m.split_target(1);
        assert_eq!(x.ncols(), 2);
        assert_eq!(x.column_names(), &["x0".to_string(), "x2".to_string()]);
        assert_eq!(y, vec![None, Some(5.0)]);
        let r = m.select_rows(&[1]);
        assert_eq!(r.row(0), vec![Some(4.0), Some(5.0), None]);
    }
}
