use ndarray::Array2;
use rayon::prelude::*;

use super::MatrixOperator;

/// Compressed sparse row matrix, with a transposed copy kept alongside so
/// both products parallelize over output rows.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    nrows: usize,
    ncols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<f64>,
    transposed: Option<Box<CsrMatrix>>,
}

impl CsrMatrix {
    /// Build from per-row (column, value) lists. Columns within a row must be
    /// unique; they are sorted here.
    pub fn from_rows(ncols: usize, rows: Vec<Vec<(usize, f64)>>) -> Self {
        let mut m = Self::from_rows_plain(ncols, rows);
        m.transposed = Some(Box::new(m.transpose_plain()));
        m
    }

    fn from_rows_plain(ncols: usize, rows: Vec<Vec<(usize, f64)>>) -> Self {
        let nrows = rows.len();
        let mut indptr = Vec::with_capacity(nrows + 1);
        let mut indices = Vec::new();
        let mut values = Vec::new();
        indptr.push(0);
        for mut row in rows {
            row.sort_by_key(|&(c, _)| c);
            for (c, v) in row {
                debug_assert!(c < ncols);
                indices.push(c);
                values.push(v);
            }
            indptr.push(indices.len());
        }
        CsrMatrix {
            nrows,
            ncols,
            indptr,
            indices,
            values,
            transposed: None,
        }
    }

    fn transpose_plain(&self) -> CsrMatrix {
        let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); self.ncols];
        for r in 0..self.nrows {
            for (c, v) in self.row(r) {
                rows[c].push((r, v));
            }
        }
        Self::from_rows_plain(self.nrows, rows)
    }

    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.indptr[r]..self.indptr[r + 1];
        self.indices[span.clone()]
            .iter()
            .copied()
            .zip(self.values[span].iter().copied())
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn to_dense(&self) -> Array2<f64> {
        let mut out = Array2::zeros((self.nrows, self.ncols));
        for r in 0..self.nrows {
            for (c, v) in self.row(r) {
                out[[r, c]] = v;
            }
        }
        out
    }

    fn mul_dense(&self, rhs: &Array2<f64>) -> Array2<f64> {
        assert_eq!(rhs.nrows(), self.ncols);
        let l = rhs.ncols();
        let rows: Vec<Vec<f64>> = (0..self.nrows)
            .into_par_iter()
            .map(|r| {
                let mut acc = vec![0.0; l];
                for (c, v) in self.row(r) {
                    for (a, x) in acc.iter_mut().zip(rhs.row(c).iter()) {
                        *a += v * x;
                    }
                }
                acc
            })
            .collect();
        Array2::from_shape_vec((self.nrows, l), rows.concat()).expect("shape")
    }
}

impl MatrixOperator for CsrMatrix {
    fn nrows(&self) -> usize {
        self.nrows
    }

    fn ncols(&self) -> usize {
        self.ncols
    }

    fn matmul(&self, rhs: &Array2<f64>) -> Array2<f64> {
        self.mul_dense(rhs)
    }

    fn t_matmul(&self, rhs: &Array2<f64>) -> Array2<f64> {
        match &self.transposed {
            Some(t) => t.mul_dense(rhs),
            None => self.transpose_plain().mul_dense(rhs),
        }
    }

    fn all_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn products_match_dense() {
        let m = CsrMatrix::from_rows(3, vec![vec![(2, 1.5), (0, 2.0)], vec![], vec![(1, -1.0)]]);
        let d = m.to_dense();
        assert_eq!(d, array![[2.0, 0.0, 1.5], [0.0, 0.0, 0.0], [0.0, -1.0, 0.0]]);
        let x = array![[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]];
        assert_eq!(m.matmul(&x), d.dot(&x));
        let y = array![[1.0], [2.0], [3.0]];
        assert_eq!(m.t_matmul(&y), d.t().dot(&y));
        assert_eq!(m.nnz(), 3);
    }
}
