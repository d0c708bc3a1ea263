//! Compressed sparse row matrices acting on images.

use ndarray::Array2;

use crate::error::{Error, Result};

/// CSR matrix whose columns index the pixels of a `input_shape` image and
/// whose rows index the entries of an `output_shape` array (both row-major).
#[derive(Debug, Clone, PartialEq)]
pub struct SparseOperator {
    input_shape: (usize, usize),
    output_shape: (usize, usize),
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl SparseOperator {
    /// Build from per-row `(column, value)` lists. Duplicate columns within a
    /// row are summed.
    pub fn from_rows(
        input_shape: (usize, usize),
        output_shape: (usize, usize),
        rows: Vec<Vec<(usize, f64)>>,
    ) -> Result<Self> {
        let n = input_shape.0 * input_shape.1;
        let m = output_shape.0 * output_shape.1;
        if rows.len() != m {
            return Err(Error::invalid(format!("expected {m} rows, got {}", rows.len())));
        }
        let mut row_ptr = Vec::with_capacity(m + 1);
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        row_ptr.push(0);
        for mut row in rows {
            row.sort_by_key(|&(c, _)| c);
            let mut last: Option<usize> = None;
            for (c, v) in row {
                if c >= n {
                    return Err(Error::invalid(format!("column {c} out of range for {n} pixels")));
                }
                if last == Some(c) {
                    *values.last_mut().expect("previous entry") += v;
                } else {
                    col_idx.push(c);
                    values.push(v);
                    last = Some(c);
                }
            }
            row_ptr.push(col_idx.len());
        }
        Ok(Self {
            input_shape,
            output_shape,
            row_ptr,
            col_idx,
            values,
        })
    }

    /// Dense matrix wrapped as an operator; for tests and small problems.
    pub fn from_dense(
        input_shape: (usize, usize),
        output_shape: (usize, usize),
        dense: &Array2<f64>,
    ) -> Result<Self> {
        let n = input_shape.0 * input_shape.1;
        let m = output_shape.0 * output_shape.1;
        if dense.dim() != (m, n) {
            return Err(Error::invalid(format!("dense matrix must be {m}x{n}, got {:?}", dense.dim())));
        }
        let rows = dense
            .rows()
            .into_iter()
            .map(|r| r.iter().enumerate().filter(|(_, v)| **v != 0.0).map(|(c, v)| (c, *v)).collect())
            .collect();
        Self::from_rows(input_shape, output_shape, rows)
    }

    pub fn input_shape(&self) -> (usize, usize) {
        self.input_shape
    }

    pub fn output_shape(&self) -> (usize, usize) {
        self.output_shape
    }

    pub fn nrows(&self) -> usize {
        self.row_ptr.len() - 1
    }

    pub fn ncols(&self) -> usize {
        self.input_shape.0 * self.input_shape.1
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.row_ptr[r]..self.row_ptr[r + 1];
        self.col_idx[span.clone()].iter().copied().zip(self.values[span].iter().copied())
    }

    /// `(row, col, value)` for every stored entry, rows ascending.
    pub fn triplets(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.nrows()).flat_map(move |r| self.row(r).map(move |(c, v)| (r, c, v)))
    }

    pub fn row_sum(&self, r: usize) -> f64 {
        self.row(r).map(|(_, v)| v).sum()
    }

    pub fn apply(&self, x: &Array2<f64>) -> Result<Array2<f64>> {
        if x.dim() != self.input_shape {
            return Err(Error::invalid(format!(
                "image shape {:?} does not match operator input {:?}",
                x.dim(),
                self.input_shape
            )));
        }
        let xs = x.as_standard_layout();
        let xs = xs.as_slice().expect("standard layout");
        let out: Vec<f64> = (0..self.nrows())
            .map(|r| {
                let span = self.row_ptr[r]..self.row_ptr[r + 1];
                self.col_idx[span.clone()]
                    .iter()
                    .zip(&self.values[span])
                    .map(|(&c, &v)| v * xs[c])
                    .sum()
            })
            .collect();
        Ok(Array2::from_shape_vec(self.output_shape, out).expect("row count matches output"))
    }

    pub fn apply_adjoint(&self, y: &Array2<f64>) -> Result<Array2<f64>> {
        if y.dim() != self.output_shape {
            return Err(Error::invalid(format!(
                "data shape {:?} does not match operator output {:?}",
                y.dim(),
                self.output_shape
            )));
        }
        let mut out = vec![0.0; self.ncols()];
        for (r, &yr) in y.iter().enumerate() {
            if yr == 0.0 {
                continue;
            }
            let span = self.row_ptr[r]..self.row_ptr[r + 1];
            for (&c, &v) in self.col_idx[span.clone()].iter().zip(&self.values[span]) {
                out[c] += v * yr;
            }
        }
        Ok(Array2::from_shape_vec(self.input_shape, out).expect("column count matches input"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn duplicates_are_summed() {
        let op = SparseOperator::from_rows((1, 3), (1, 2), vec![vec![(2, 1.0), (0, 2.0), (2, 0.5)], vec![]]).unwrap();
        assert_eq!(op.nnz(), 2);
        assert_eq!(op.triplets().collect::<Vec<_>>(), vec![(0, 0, 2.0), (0, 2, 1.5)]);
        let y = op.apply(&Array2::from_shape_vec((1, 3), vec![1.0, 1.0, 2.0]).unwrap()).unwrap();
        assert_eq!(y[[0, 0]], 5.0);
        assert_eq!(y[[0, 1]], 0.0);
    }

    #[test]
    fn out_of_range_column() {
        assert!(SparseOperator::from_rows((1, 2), (1, 1), vec![vec![(2, 1.0)]]).is_err());
    }
}
