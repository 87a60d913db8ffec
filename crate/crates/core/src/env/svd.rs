//! Randomized truncated SVD of a sparse matrix.

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

/// Compressed sparse rows.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    rows: usize,
    cols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl SparseMatrix {
    /// Builds from `(row, col, value)` triples; duplicates are summed.
    pub fn from_triples(rows: usize, cols: usize, triples: &[(usize, usize, f64)]) -> Result<Self> {
        let mut sorted: Vec<(usize, usize, f64)> = triples.to_vec();
        if sorted.iter().any(|&(r, c, _)| r >= rows || c >= cols) {
            return Err(Error::InvalidParameter("triple outside matrix bounds".into()));
        }
        sorted.sort_by_key(|&(r, c, _)| (r, c));
        let mut row_ptr = vec![0; rows + 1];
        let mut col_idx = Vec::with_capacity(sorted.len());
        let mut values: Vec<f64> = Vec::with_capacity(sorted.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in sorted {
            if last == Some((r, c)) {
                *values.last_mut().unwrap() += v;
                continue;
            }
            row_ptr[r + 1] += 1;
            col_idx.push(c);
            values.push(v);
            last = Some((r, c));
        }
        for r in 0..rows {
            row_ptr[r + 1] += row_ptr[r];
        }
        Ok(Self {
            rows,
            cols,
            row_ptr,
            col_idx,
            values,
        })
    }

    pub fn from_dense(m: &DMatrix<f64>) -> Self {
        let mut triples = Vec::new();
        for r in 0..m.nrows() {
            for c in 0..m.ncols() {
                if m[(r, c)] != 0.0 {
                    triples.push((r, c, m[(r, c)]));
                }
            }
        }
        Self::from_triples(m.nrows(), m.ncols(), &triples).expect("indices in bounds")
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    fn row(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.row_ptr[r]..self.row_ptr[r + 1];
        self.col_idx[span.clone()]
            .iter()
            .copied()
            .zip(self.values[span].iter().copied())
    }

    /// `self * x` for a dense `x` with `cols` rows.
    fn mul_dense(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(self.rows, x.ncols());
        for r in 0..self.rows {
            for (c, v) in self.row(r) {
                for k in 0..x.ncols() {
                    out[(r, k)] += v * x[(c, k)];
                }
            }
        }
        out
    }

    /// `self^T * x` for a dense `x` with `rows` rows.
    fn tr_mul_dense(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(self.cols, x.ncols());
        for r in 0..self.rows {
            for (c, v) in self.row(r) {
                for k in 0..x.ncols() {
                    out[(c, k)] += v * x[(r, k)];
                }
            }
        }
        out
    }
}

/// Rank-`k` factors `A ~ U diag(s) V^T`.
#[derive(Debug, Clone)]
pub struct TruncatedSvd {
    pub u: DMatrix<f64>,
    pub singular_values: Vec<f64>,
    pub v: DMatrix<f64>,
}

impl TruncatedSvd {
    pub fn rank(&self) -> usize {
        self.singular_values.len()
    }

    pub fn reconstruct(&self, row: usize, col: usize) -> f64 {
        (0..self.rank())
            .map(|k| self.u[(row, k)] * self.singular_values[k] * self.v[(col, k)])
            .sum()
    }
}

fn orthonormal_basis(y: DMatrix<f64>) -> DMatrix<f64> {
    y.qr().q()
}

/// Randomized range finder with power iterations, then an exact SVD of the projection.
pub fn truncated_svd(a: &SparseMatrix, rank: usize, seed: u64) -> Result<TruncatedSvd> {
    let max_rank = a.rows.min(a.cols);
    if rank == 0 || rank > max_rank {
        return Err(Error::InvalidParameter(format!(
            "rank must lie in [1, {max_rank}], got {rank}"
        )));
    }
    let sketch = (rank + 10).min(max_rank);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let omega = DMatrix::from_fn(a.cols, sketch, |_, _| StandardNormal.sample(&mut rng));
    let mut q = orthonormal_basis(a.mul_dense(&omega));
    for _ in 0..4 {
        let z = orthonormal_basis(a.tr_mul_dense(&q));
        q = orthonormal_basis(a.mul_dense(&z));
    }
    // B^T = A^T Q has shape (cols, sketch)
    let bt = a.tr_mul_dense(&q);
    let svd = bt.svd(true, true);
    let (Some(ub), Some(vbt)) = (svd.u, svd.v_t) else {
        return Err(Error::NonFinite("svd"));
    };
    // B^T = Ub S Vb^T  =>  A ~ Q Vb S Ub^T
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&i, &j| svd.singular_values[j].total_cmp(&svd.singular_values[i]));
    order.truncate(rank);
    let left = &q * vbt.transpose();
    let u = DMatrix::from_fn(a.rows, rank, |r, k| left[(r, order[k])]);
    let v = DMatrix::from_fn(a.cols, rank, |c, k| ub[(c, order[k])]);
    let singular_values = order.iter().map(|&i| svd.singular_values[i]).collect();
    Ok(TruncatedSvd {
        u,
        singular_values,
        v,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rank_one_matrix_is_recovered() {
        let x = [1.0, -2.0, 0.5, 3.0, 0.0, 1.5];
        let y = [2.0, 1.0, -1.0, 0.25];
        let dense = DMatrix::from_fn(6, 4, |r, c| x[r] * y[c]);
        let svd = truncated_svd(&SparseMatrix::from_dense(&dense), 1, 0).unwrap();
        for r in 0..6 {
            for c in 0..4 {
                assert!((svd.reconstruct(r, c) - dense[(r, c)]).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn leading_singular_values_match_dense_svd() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let dense = DMatrix::from_fn(30, 20, |_, _| StandardNormal.sample(&mut rng));
        let svd = truncated_svd(&SparseMatrix::from_dense(&dense), 3, 1).unwrap();
        let mut exact: Vec<f64> = dense.svd(false, false).singular_values.iter().copied().collect();
        exact.sort_by(|a, b| b.total_cmp(a));
        for k in 0..3 {
            assert!((svd.singular_values[k] - exact[k]).abs() < 1e-6 * exact[0]);
        }
    }

    #[test]
    fn duplicates_are_summed_and_bounds_checked() {
        let m = SparseMatrix::from_triples(2, 2, &[(0, 1, 1.0), (0, 1, 2.0), (1, 0, 4.0)]).unwrap();
        assert_eq!(m.nnz(), 2);
        assert!(SparseMatrix::from_triples(2, 2, &[(2, 0, 1.0)]).is_err());
        assert!(truncated_svd(&m, 3, 0).is_err());
    }
}
