//! Minimal sparse-matrix plumbing for assembly and norms.
//!
//! Assembly accumulates coordinate triplets; duplicate entries are summed
//! when converting to compressed rows. The saddle-point factorization itself
//! is delegated to a direct sparse solver, so this module only needs
//! products and bilinear forms.

use nalgebra::DVector;

/// Coordinate-format accumulator.
#[derive(Debug, Clone)]
pub struct Coo {
    pub nrows: usize,
    pub ncols: usize,
    entries: Vec<(usize, usize, f64)>,
}

impl Coo {
    pub fn new(nrows: usize, ncols: usize) -> Self {
        Coo { nrows, ncols, entries: Vec::new() }
    }

    pub fn push(&mut self, row: usize, col: usize, value: f64) {
        debug_assert!(row < self.nrows && col < self.ncols);
        if value != 0.0 {
            self.entries.push((row, col, value));
        }
    }

    /// Compresses to CSR, summing duplicates.
    pub fn to_csr(mut self) -> Csr {
        self.entries.sort_unstable_by_key(|&(r, c, _)| (r, c));
        let mut merged: Vec<(usize, usize, f64)> = Vec::with_capacity(self.entries.len());
        for &(r, c, v) in &self.entries {
            match merged.last_mut() {
                Some(last) if last.0 == r && last.1 == c => last.2 += v,
                _ => merged.push((r, c, v)),
            }
        }
        let mut row_ptr = vec![0usize; self.nrows + 1];
        for &(r, _, _) in &merged {
            row_ptr[r + 1] += 1;
        }
        for r in 0..self.nrows {
            row_ptr[r + 1] += row_ptr[r];
        }
        Csr {
            nrows: self.nrows,
            ncols: self.ncols,
            row_ptr,
            col_idx: merged.iter().map(|e| e.1).collect(),
            vals: merged.iter().map(|e| e.2).collect(),
        }
    }
}

/// Compressed sparse rows.
#[derive(Debug, Clone)]
pub struct Csr {
    pub nrows: usize,
    pub ncols: usize,
    pub row_ptr: Vec<usize>,
    pub col_idx: Vec<usize>,
    pub vals: Vec<f64>,
}

impl Csr {
    pub fn nnz(&self) -> usize {
        self.col_idx.len()
    }

    pub fn matvec(&self, x: &DVector<f64>) -> DVector<f64> {
        assert_eq!(x.len(), self.ncols);
        let mut out = DVector::zeros(self.nrows);
        for r in 0..self.nrows {
            let mut acc = 0.0;
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                acc += self.vals[k] * x[self.col_idx[k]];
            }
            out[r] = acc;
        }
        out
    }

    /// The bilinear form `x^T A y`.
    pub fn quadratic_form(&self, x: &DVector<f64>, y: &DVector<f64>) -> f64 {
        assert_eq!(x.len(), self.nrows);
        assert_eq!(y.len(), self.ncols);
        let mut acc = 0.0;
        for r in 0..self.nrows {
            let mut row = 0.0;
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                row += self.vals[k] * y[self.col_idx[k]];
            }
            acc += x[r] * row;
        }
        acc
    }

    /// Iterates stored entries as `(row, col, value)`.
    pub fn triplets(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.nrows).flat_map(move |r| {
            (self.row_ptr[r]..self.row_ptr[r + 1])
                .map(move |k| (r, self.col_idx[k], self.vals[k]))
        })
    }

    /// Dense copy, for tests and small spectral checks.
    pub fn to_dense(&self) -> nalgebra::DMatrix<f64> {
        let mut dense = nalgebra::DMatrix::zeros(self.nrows, self.ncols);
        for (r, c, v) in self.triplets() {
            dense[(r, c)] += v;
        }
        dense
    }

    /// Largest absolute deviation from symmetry, `max |a_ij - a_ji|`.
    pub fn max_asymmetry(&self) -> f64 {
        use std::collections::HashMap;
        let mut map: HashMap<(usize, usize), f64> = HashMap::new();
        for (r, c, v) in self.triplets() {
            *map.entry((r, c)).or_default() += v;
        }
        map.iter()
            .map(|(&(r, c), &v)| (v - map.get(&(c, r)).copied().unwrap_or(0.0)).abs())
            .fold(0.0, f64::max)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn duplicates_are_summed() {
        let mut coo = Coo::new(2, 2);
        coo.push(0, 0, 1.0);
        coo.push(0, 0, 2.5);
        coo.push(1, 0, -1.0);
        coo.push(0, 1, 4.0);
        let csr = coo.to_csr();
        assert_eq!(csr.nnz(), 3);
        let dense = csr.to_dense();
        assert_eq!(dense[(0, 0)], 3.5);
        assert_eq!(dense[(0, 1)], 4.0);
        assert_eq!(dense[(1, 0)], -1.0);
        assert_eq!(dense[(1, 1)], 0.0);
    }

    #[test]
    fn matvec_matches_dense() {
        let mut coo = Coo::new(3, 2);
        coo.push(0, 0, 2.0);
        coo.push(1, 1, 3.0);
        coo.push(2, 0, 1.0);
        coo.push(2, 1, -1.0);
        let csr = coo.to_csr();
        let x = DVector::from_vec(vec![1.0, 2.0]);
        let y = csr.matvec(&x);
        let dense = csr.to_dense();
        let want = dense * x;
        assert!((y - want).norm() < 1e-15);
    }

    #[test]
    fn quadratic_form_matches_dense() {
        let mut coo = Coo::new(2, 2);
        coo.push(0, 0, 2.0);
        coo.push(0, 1, 1.0);
        coo.push(1, 0, 1.0);
        coo.push(1, 1, 4.0);
        let csr = coo.to_csr();
        let x = DVector::from_vec(vec![1.0, -2.0]);
        let y = DVector::from_vec(vec![0.5, 3.0]);
        let dense = csr.to_dense();
        let want = (x.transpose() * dense * &y)[(0, 0)];
        assert!((csr.quadratic_form(&x, &y) - want).abs() < 1e-14);
        assert_eq!(csr.max_asymmetry(), 0.0);
    }

    #[test]
    fn empty_rows_are_handled() {
        let mut coo = Coo::new(4, 4);
        coo.push(3, 3, 1.0);
        coo.push(1, 2, 2.0);
        let csr = coo.to_csr();
        let x = DVector::from_vec(vec![1.0, 1.0, 1.0, 1.0]);
        let y = csr.matvec(&x);
        assert_eq!(y.as_slice(), &[0.0, 2.0, 0.0, 1.0]);
    }
}
