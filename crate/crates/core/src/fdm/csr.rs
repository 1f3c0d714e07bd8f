//! Compressed sparse row matrix for the 7-point conduction stencil.

use rayon::prelude::*;

/// Row count below which matrix-vector products stay single-threaded.
const PAR_ROW_THRESHOLD: usize = 4096;

#[derive(Debug, Clone)]
pub struct CsrMatrix {
    pub n: usize,
    pub row_ptr: Vec<usize>,
    pub col_idx: Vec<u32>,
    pub values: Vec<f64>,
}

impl CsrMatrix {
    /// Builds from per-row entry lists; each row's entries must have unique
    /// columns (they are sorted here).
    pub fn from_rows(rows: Vec<Vec<(u32, f64)>>) -> Self {
        let n = rows.len();
        let mut row_ptr = Vec::with_capacity(n + 1);
        row_ptr.push(0usize);
        let nnz: usize = rows.iter().map(Vec::len).sum();
        let mut col_idx = Vec::with_capacity(nnz);
        let mut values = Vec::with_capacity(nnz);
        for mut row in rows {
            row.sort_unstable_by_key(|&(c, _)| c);
            debug_assert!(
                row.windows(2).all(|w| w[0].0 < w[1].0),
                "duplicate column within a row"
            );
            for (c, v) in row {
                col_idx.push(c);
                values.push(v);
            }
            row_ptr.push(col_idx.len());
        }
        CsrMatrix { n, row_ptr, col_idx, values }
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    #[inline]
    fn row_dot(&self, r: usize, x: &[f64]) -> f64 {
        let mut acc = 0.0;
        for e in self.row_ptr[r]..self.row_ptr[r + 1] {
            acc += self.values[e] * x[self.col_idx[e] as usize];
        }
        acc
    }

    /// y = A·x. Row-sharded parallel, bit-deterministic for any thread count.
    pub fn spmv(&self, x: &[f64], y: &mut [f64]) {
        assert_eq!(x.len(), self.n, "spmv: x length mismatch");
        assert_eq!(y.len(), self.n, "spmv: y length mismatch");
        if self.n >= PAR_ROW_THRESHOLD {
            y.par_iter_mut().enumerate().for_each(|(r, out)| *out = self.row_dot(r, x));
        } else {
            for (r, out) in y.iter_mut().enumerate() {
                *out = self.row_dot(r, x);
            }
        }
    }

    pub fn diagonal(&self) -> Vec<f64> {
        let mut d = vec![0.0; self.n];
        for r in 0..self.n {
            for e in self.row_ptr[r]..self.row_ptr[r + 1] {
                if self.col_idx[e] as usize == r {
                    d[r] = self.values[e];
                }
            }
        }
        d
    }

    pub fn entry(&self, r: usize, c: usize) -> f64 {
        for e in self.row_ptr[r]..self.row_ptr[r + 1] {
            if self.col_idx[e] as usize == c {
                return self.values[e];
            }
        }
        0.0
    }

    /// Largest |a_ij − a_ji| relative to the largest |a_ij|; 0 for symmetric.
    pub fn max_relative_asymmetry(&self) -> f64 {
        let scale = self.values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if scale == 0.0 {
            return 0.0;
        }
        let mut worst = 0.0f64;
        for r in 0..self.n {
            for e in self.row_ptr[r]..self.row_ptr[r + 1] {
                let c = self.col_idx[e] as usize;
                worst = worst.max((self.values[e] - self.entry(c, r)).abs());
            }
        }
        worst / scale
    }
}
