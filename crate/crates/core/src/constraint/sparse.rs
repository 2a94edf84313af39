use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Compressed sparse row matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix<T> {
    nrows: usize,
    ncols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<T>,
}

impl<T: Real> CsrMatrix<T> {
    /// Builds from per-row `(column, value)` lists. Duplicate columns within a
    /// row are summed; columns are sorted.
    pub fn from_rows(rows: Vec<Vec<(usize, T)>>, ncols: usize) -> Result<Self> {
        let mut indptr = Vec::with_capacity(rows.len() + 1);
        let mut indices = Vec::new();
        let mut values = Vec::new();
        indptr.push(0);
        for mut row in rows {
            row.sort_by_key(|e| e.0);
            let mut last: Option<usize> = None;
            for (c, v) in row {
                if c >= ncols {
                    return Err(Error::Index {
                        index: c.to_string(),
                        range: format!("0..{ncols}"),
                    });
                }
                if last == Some(c) {
                    *values.last_mut().expect("previous entry") += v;
                } else {
                    indices.push(c);
                    values.push(v);
                    last = Some(c);
                }
            }
            indptr.push(indices.len());
        }
        Ok(CsrMatrix {
            nrows: indptr.len() - 1,
            ncols,
            indptr,
            indices,
            values,
        })
    }

    pub fn empty(ncols: usize) -> Self {
        CsrMatrix {
            nrows: 0,
            ncols,
            indptr: vec![0],
            indices: Vec::new(),
            values: Vec::new(),
        }
    }

    #[inline]
    pub fn nrows(&self) -> usize {
        self.nrows
    }

    #[inline]
    pub fn ncols(&self) -> usize {
        self.ncols
    }

    #[inline]
    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, T)> + '_ {
        let span = self.indptr[r]..self.indptr[r + 1];
        self.indices[span.clone()]
            .iter()
            .copied()
            .zip(self.values[span].iter().copied())
    }

    pub fn row_nnz(&self, r: usize) -> usize {
        self.indptr[r + 1] - self.indptr[r]
    }

    /// `y = A x`.
    pub fn mul_vec(&self, x: &[T]) -> Vec<T> {
        assert_eq!(x.len(), self.ncols, "vector length");
        (0..self.nrows)
            .into_par_iter()
            .map(|r| self.row(r).fold(T::zero(), |acc, (c, v)| acc + v * x[c]))
            .collect()
    }

    pub fn transpose(&self) -> CsrMatrix<T> {
        let mut counts = vec![0usize; self.ncols + 1];
        for &c in &self.indices {
            counts[c + 1] += 1;
        }
        for i in 0..self.ncols {
            counts[i + 1] += counts[i];
        }
        let indptr = counts.clone();
        let mut next = counts;
        let mut indices = vec![0; self.nnz()];
        let mut values = vec![T::zero(); self.nnz()];
        for r in 0..self.nrows {
            for (c, v) in self.row(r) {
                let slot = next[c];
                indices[slot] = r;
                values[slot] = v;
                next[c] += 1;
            }
        }
        CsrMatrix {
            nrows: self.ncols,
            ncols: self.nrows,
            indptr,
            indices,
            values,
        }
    }

    /// Squared Euclidean norm of every row.
    pub fn row_norms_sq(&self) -> Vec<T> {
        (0..self.nrows)
            .map(|r| self.row(r).fold(T::zero(), |acc, (_, v)| acc + v * v))
            .collect()
    }

    pub fn triplets(&self) -> impl Iterator<Item = (usize, usize, T)> + '_ {
        (0..self.nrows).flat_map(move |r| self.row(r).map(move |(c, v)| (r, c, v)))
    }

    /// Dense row-major copy; small matrices only.
    pub fn to_dense(&self) -> Vec<Vec<T>> {
        let mut out = vec![vec![T::zero(); self.ncols]; self.nrows];
        for (r, c, v) in self.triplets() {
            out[r][c] = v;
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> CsrMatrix<f64> {
        CsrMatrix::from_rows(
            vec![
                vec![(2, 1.0), (0, -2.0), (2, 0.5)],
                vec![],
                vec![(1, 3.0)],
            ],
            4,
        )
        .unwrap()
    }

    #[test]
    fn duplicates_merge_and_columns_sort() {
        let m = sample();
        assert_eq!(m.nnz(), 3);
        assert_eq!(m.row(0).collect::<Vec<_>>(), vec![(0, -2.0), (2, 1.5)]);
        assert_eq!(m.row_nnz(1), 0);
    }

    #[test]
    fn products_match_dense() {
        let m = sample();
        let x = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(m.mul_vec(&x), vec![2.5, 0.0, 6.0]);
        let t = m.transpose();
        assert_eq!(t.nrows(), 4);
        assert_eq!(t.mul_vec(&[1.0, 5.0, -1.0]), vec![-2.0, -3.0, 1.5, 0.0]);
        let d = m.to_dense();
        let dt = t.to_dense();
        for r in 0..3 {
            for c in 0..4 {
                assert_eq!(d[r][c], dt[c][r]);
            }
        }
    }

    #[test]
    fn rejects_out_of_range_column() {
        assert!(CsrMatrix::<f64>::from_rows(vec![vec![(4, 1.0)]], 4).is_err());
    }
}
