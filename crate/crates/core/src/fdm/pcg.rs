//! Jacobi-preconditioned conjugate gradient for SPD systems.

use crate::error::{Error, Result};
use crate::fdm::csr::CsrMatrix;

pub const DEFAULT_TOL: f64 = 1e-10;
pub const DEFAULT_MAX_ITER: usize = 20_000;

#[derive(Debug, Clone)]
pub struct PcgSolution {
    pub x: Vec<f64>,
    pub iterations: usize,
    /// True relative residual ‖Ax − b‖ / ‖b‖, recomputed after convergence.
    pub rel_residual: f64,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    // Serial with a fixed order: PCG results stay bit-identical across
    // machines and thread counts.
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Solves A·x = b to relative residual ≤ `tol`. A must be SPD.
pub fn solve_pcg(a: &CsrMatrix, b: &[f64], tol: f64, max_iter: usize) -> Result<PcgSolution> {
    assert_eq!(b.len(), a.n, "rhs length must equal matrix size");
    let n = a.n;
    let diag = a.diagonal();
    if let Some(i) = diag.iter().position(|&d| !(d > 0.0)) {
        return Err(Error::Solver(format!(
            "matrix diagonal must be positive for PCG (row {i} has {})",
            diag[i]
        )));
    }
    let b_norm = norm(b);
    if b_norm == 0.0 {
        return Ok(PcgSolution { x: vec![0.0; n], iterations: 0, rel_residual: 0.0 });
    }

    let mut x = vec![0.0; n];
    let mut r = b.to_vec();
    let mut z: Vec<f64> = r.iter().zip(&diag).map(|(ri, di)| ri / di).collect();
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut ap = vec![0.0; n];

    for iter in 1..=max_iter {
        a.spmv(&p, &mut ap);
        let pap = dot(&p, &ap);
        if !(pap > 0.0) || !pap.is_finite() {
            return Err(Error::Solver(format!(
                "system is not positive definite (pᵀAp = {pap} at iteration {iter})"
            )));
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        if norm(&r) <= tol * b_norm {
            // The recurrence residual drifts from the true one; confirm.
            a.spmv(&x, &mut ap);
            let mut true_r = 0.0;
            for i in 0..n {
                let d = ap[i] - b[i];
                true_r += d * d;
            }
            let rel = true_r.sqrt() / b_norm;
            if rel <= tol * 10.0 {
                return Ok(PcgSolution { x, iterations: iter, rel_residual: rel });
            }
            // Keep iterating with the exact residual to re-sync.
            for i in 0..n {
                r[i] = b[i] - ap[i];
            }
        }
        for i in 0..n {
            z[i] = r[i] / diag[i];
        }
        let rz_next = dot(&r, &z);
        let beta = rz_next / rz;
        rz = rz_next;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    Err(Error::Solver(format!(
        "conjugate gradient did not reach tolerance {tol} within {max_iter} iterations \
         (residual {:.3e})",
        norm(&r) / b_norm
    )))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn identity(n: usize) -> CsrMatrix {
        CsrMatrix::from_rows((0..n).map(|i| vec![(i as u32, 1.0)]).collect())
    }

    /// Dense SPD reference solve by Gaussian elimination with partial
    /// pivoting — an independent oracle for small systems.
    fn dense_solve(a: &CsrMatrix, b: &[f64]) -> Vec<f64> {
        let n = a.n;
        let mut m = vec![vec![0.0; n + 1]; n];
        for r in 0..n {
            for e in a.row_ptr[r]..a.row_ptr[r + 1] {
                m[r][a.col_idx[e] as usize] = a.values[e];
            }
            m[r][n] = b[r];
        }
        for col in 0..n {
            let pivot = (col..n).max_by(|&i, &j| m[i][col].abs().total_cmp(&m[j][col].abs()));
            let pivot = pivot.unwrap();
            m.swap(col, pivot);
            assert!(m[col][col].abs() > 1e-14, "singular test matrix");
            for r in col + 1..n {
                let f = m[r][col] / m[col][col];
                for c in col..=n {
                    m[r][c] -= f * m[col][c];
                }
            }
        }
        let mut x = vec![0.0; n];
        for r in (0..n).rev() {
            let mut acc = m[r][n];
            for c in r + 1..n {
                acc -= m[r][c] * x[c];
            }
            x[r] = acc / m[r][r];
        }
        x
    }

    #[test]
    fn identity_system_returns_rhs() {
        let a = identity(5);
        let b = vec![3.0, -1.0, 0.5, 7.25, 0.0];
        let sol = solve_pcg(&a, &b, 1e-12, 100).unwrap();
        for (x, want) in sol.x.iter().zip(&b) {
            assert!((x - want).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_rhs_short_circuits() {
        let a = identity(4);
        let sol = solve_pcg(&a, &[0.0; 4], 1e-12, 100).unwrap();
        assert_eq!(sol.x, vec![0.0; 4]);
        assert_eq!(sol.iterations, 0);
    }

    #[test]
    fn matches_dense_elimination_on_random_spd() {
        // SPD by construction: diagonally dominant symmetric band matrix
        // with deterministic pseudo-random couplings.
        let n = 60;
        let mut rows: Vec<Vec<(u32, f64)>> = vec![Vec::new(); n];
        let coupling = |i: usize, j: usize| -> f64 {
            let h = (i * 31 + j * 17) % 97;
            -0.1 - (h as f64) / 97.0
        };
        for i in 0..n {
            let mut diag = 0.5;
            for j in [i.wrapping_sub(1), i + 1, i.wrapping_sub(7), i + 7] {
                if j < n && j != i {
                    let w = coupling(i.min(j), i.max(j));
                    rows[i].push((j as u32, w));
                    diag += w.abs();
                }
            }
            rows[i].push((i as u32, diag));
        }
        let a = CsrMatrix::from_rows(rows);
        assert_eq!(a.max_relative_asymmetry(), 0.0);
        let b: Vec<f64> = (0..n).map(|i| ((i * 13 % 11) as f64) - 5.0).collect();
        let want = dense_solve(&a, &b);
        let got = solve_pcg(&a, &b, 1e-12, 10_000).unwrap();
        for (x, y) in got.x.iter().zip(&want) {
            assert!((x - y).abs() < 1e-9, "pcg {x} vs dense {y}");
        }
        assert!(got.rel_residual <= 1e-11);
    }

    #[test]
    fn reports_failures() {
        let a = CsrMatrix::from_rows(vec![vec![(0, 1.0), (1, 0.0)], vec![(0, 0.0), (1, 0.0)]]);
        assert!(solve_pcg(&a, &[1.0, 1.0], 1e-10, 10).is_err(), "zero diagonal must fail");

        let indefinite = CsrMatrix::from_rows(vec![
            vec![(0, 1.0), (1, 3.0)],
            vec![(0, 3.0), (1, 1.0)],
        ]);
        assert!(
            solve_pcg(&indefinite, &[1.0, -1.0], 1e-10, 50).is_err(),
            "indefinite matrix must be detected"
        );
    }

    #[test]
    fn deterministic_across_runs() {
        let a = identity(1000);
        let b: Vec<f64> = (0..1000).map(|i| (i as f64).sin()).collect();
        let s1 = solve_pcg(&a, &b, 1e-12, 100).unwrap();
        let s2 = solve_pcg(&a, &b, 1e-12, 100).unwrap();
        assert_eq!(s1.x, s2.x, "identical inputs must give identical bits");
    }
}
