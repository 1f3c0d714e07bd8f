//! Gaussian-random-field sampler for synthetic power maps, plus the uniform
//! sampler for convection-coefficient pairs.
//!
//! Fields live on an m×m grid of nodes at positions i/(m−1) on the unit
//! square and use the squared-exponential covariance
//! `C(p, q) = exp(−|p−q|²/(2ℓ²))`. Samples are drawn by factoring the
//! covariance once (dense Cholesky with a small diagonal jitter) and pushing
//! standard normals through the factor, then min-max rescaled to a
//! non-negative power range.

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use rand::Rng;
use rand_distr::StandardNormal;

/// Diagonal jitter added before factoring: the squared-exponential kernel is
/// numerically rank-deficient at small spacing.
pub const CHOLESKY_JITTER: f64 = 1e-8;

/// Covariance matrix of the m² grid nodes (row-major by (row·m + col)).
pub fn covariance_matrix(m: usize, length_scale: f64) -> Result<Tensor> {
    if m < 2 {
        return Err(Error::Config(format!("grf: grid size must be ≥ 2, got {m}")));
    }
    if !(length_scale > 0.0) {
        return Err(Error::Config(format!(
            "grf: length scale must be positive, got {length_scale}"
        )));
    }
    let n = m * m;
    let step = 1.0 / (m - 1) as f64;
    let coord = |idx: usize| -> (f64, f64) {
        ((idx / m) as f64 * step, (idx % m) as f64 * step)
    };
    let inv = 1.0 / (2.0 * length_scale * length_scale);
    let mut c = Tensor::zeros(n, n);
    for a in 0..n {
        let (xa, ya) = coord(a);
        for b in a..n {
            let (xb, yb) = coord(b);
            let d2 = (xa - xb) * (xa - xb) + (ya - yb) * (ya - yb);
            let v = (-d2 * inv).exp();
            *c.at_mut(a, b) = v;
            *c.at_mut(b, a) = v;
        }
    }
    Ok(c)
}

/// Dense lower-triangular Cholesky factor of an SPD matrix. Fails when a
/// pivot is non-positive (matrix not positive definite at working
/// precision).
pub fn cholesky_lower(a: &Tensor) -> Result<Tensor> {
    assert_eq!(a.rows, a.cols, "cholesky needs a square matrix");
    let n = a.rows;
    let mut l = Tensor::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let mut sum = a.at(i, j);
            for k in 0..j {
                sum -= l.at(i, k) * l.at(j, k);
            }
            if i == j {
                if sum <= 0.0 {
                    return Err(Error::Solver(format!(
                        "cholesky: non-positive pivot {sum} at row {i}"
                    )));
                }
                *l.at_mut(i, j) = sum.sqrt();
            } else {
                *l.at_mut(i, j) = sum / l.at(j, j);
            }
        }
    }
    Ok(l)
}

/// Reusable sampler: factors the covariance once, draws any number of
/// fields.
#[derive(Debug, Clone)]
pub struct GrfSampler {
    m: usize,
    chol: Tensor,
}

impl GrfSampler {
    pub fn new(m: usize, length_scale: f64) -> Result<Self> {
        let mut c = covariance_matrix(m, length_scale)?;
        for i in 0..c.rows {
            *c.at_mut(i, i) += CHOLESKY_JITTER;
        }
        Ok(GrfSampler { m, chol: cholesky_lower(&c)? })
    }

    pub fn grid_size(&self) -> usize {
        self.m
    }

    /// One raw (unscaled) field sample as an m×m matrix.
    pub fn sample_raw<R: Rng + ?Sized>(&self, rng: &mut R) -> Tensor {
        let n = self.m * self.m;
        let z: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        let mut out = Tensor::zeros(self.m, self.m);
        for i in 0..n {
            let mut acc = 0.0;
            for k in 0..=i {
                acc += self.chol.at(i, k) * z[k];
            }
            out.data[i] = acc;
        }
        out
    }

    /// One power map: raw field min-max rescaled onto [0, p_max] unless
    /// `rescale` is off, in which case the raw field is returned as-is.
    pub fn sample_power_map<R: Rng + ?Sized>(
        &self,
        p_max: f64,
        rescale: bool,
        rng: &mut R,
    ) -> Tensor {
        let raw = self.sample_raw(rng);
        if rescale {
            rescale_to_range(&raw, p_max)
        } else {
            raw
        }
    }
}

/// Min-max rescale onto [0, p_max]; a constant field maps to the midpoint
/// p_max/2.
pub fn rescale_to_range(raw: &Tensor, p_max: f64) -> Tensor {
    assert!(p_max > 0.0, "power range must be positive");
    let lo = raw.data.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = raw.data.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi - lo <= 0.0 {
        return Tensor::filled(raw.rows, raw.cols, 0.5 * p_max);
    }
    let scale = p_max / (hi - lo);
    raw.map(|v| (v - lo) * scale)
}

/// Uniformly random convection-coefficient pairs (top, bottom) from
/// [lo, hi]².
pub fn sample_htc_pairs<R: Rng + ?Sized>(
    lo: f64,
    hi: f64,
    count: usize,
    rng: &mut R,
) -> Result<Vec<(f64, f64)>> {
    if !(lo > 0.0 && hi > lo) {
        return Err(Error::Config(format!(
            "htc range must satisfy 0 < lo < hi, got [{lo}, {hi}]"
        )));
    }
    Ok((0..count).map(|_| (rng.gen_range(lo..=hi), rng.gen_range(lo..=hi))).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn covariance_has_unit_diagonal_and_kernel_entries() {
        let m = 5;
        let ell = 0.3;
        let c = covariance_matrix(m, ell).unwrap();
        assert_eq!(c.rows, 25);
        for i in 0..25 {
            assert_eq!(c.at(i, i), 1.0);
        }
        // Horizontally adjacent nodes sit 0.25 apart.
        let want = (-(0.25f64 * 0.25) / (2.0 * ell * ell)).exp();
        assert!((c.at(0, 1) - want).abs() < 1e-15);
        // Opposite corners sit √2 apart.
        let want = (-2.0 / (2.0 * ell * ell)).exp();
        assert!((c.at(0, 24) - want).abs() < 1e-15);
        // Symmetry.
        for a in 0..25 {
            for b in 0..25 {
                assert_eq!(c.at(a, b), c.at(b, a));
            }
        }
    }

    #[test]
    fn cholesky_reconstructs_covariance() {
        let mut c = covariance_matrix(21, 0.2).unwrap();
        for i in 0..c.rows {
            *c.at_mut(i, i) += CHOLESKY_JITTER;
        }
        let l = cholesky_lower(&c).unwrap();
        let back = l.matmul_nt(&l);
        let mut worst = 0.0f64;
        for i in 0..c.rows * c.cols {
            worst = worst.max((back.data[i] - c.data[i]).abs());
        }
        assert!(worst < 1e-6, "‖LLᵀ − C‖∞ = {worst}");
    }

    #[test]
    fn cholesky_rejects_indefinite() {
        let a = Tensor::from_vec(2, 2, vec![1.0, 2.0, 2.0, 1.0]);
        assert!(cholesky_lower(&a).is_err());
    }

    #[test]
    fn sample_covariance_matches_kernel() {
        // Monte-Carlo check on a small grid: the empirical covariance of
        // 10k raw samples reproduces the kernel to sampling accuracy.
        let m = 5;
        let sampler = GrfSampler::new(m, 0.3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n_samples = 10_000;
        let n = m * m;
        let mut mean = vec![0.0; n];
        let mut cov = Tensor::zeros(n, n);
        let samples: Vec<Tensor> = (0..n_samples).map(|_| sampler.sample_raw(&mut rng)).collect();
        for s in &samples {
            for i in 0..n {
                mean[i] += s.data[i];
            }
        }
        for v in mean.iter_mut() {
            *v /= n_samples as f64;
        }
        for s in &samples {
            for i in 0..n {
                for j in 0..n {
                    *cov.at_mut(i, j) += (s.data[i] - mean[i]) * (s.data[j] - mean[j]);
                }
            }
        }
        let c = covariance_matrix(m, 0.3).unwrap();
        let mut worst = 0.0f64;
        for i in 0..n {
            for j in 0..n {
                worst = worst.max((cov.at(i, j) / (n_samples - 1) as f64 - c.at(i, j)).abs());
            }
        }
        assert!(worst < 0.05, "empirical covariance off by {worst}");
    }

    #[test]
    fn rescaled_maps_span_the_power_range() {
        let sampler = GrfSampler::new(11, 0.3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for _ in 0..8 {
            let map = sampler.sample_power_map(4.0, true, &mut rng);
            let lo = map.data.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = map.data.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            assert!(lo.abs() < 1e-12, "min must rescale to 0, got {lo}");
            assert!((hi - 4.0).abs() < 1e-12, "max must rescale to p_max, got {hi}");
            assert!(map.data.iter().all(|v| v.is_finite() && *v >= 0.0 && *v <= 4.0 + 1e-12));
        }
    }

    #[test]
    fn constant_field_rescales_to_midpoint() {
        let flat = Tensor::filled(4, 4, 2.75);
        let scaled = rescale_to_range(&flat, 4.0);
        assert!(scaled.data.iter().all(|&v| v == 2.0));
    }

    #[test]
    fn raw_mode_skips_rescaling() {
        let sampler = GrfSampler::new(7, 0.3).unwrap();
        let mut r1 = ChaCha8Rng::seed_from_u64(3);
        let mut r2 = ChaCha8Rng::seed_from_u64(3);
        let raw = sampler.sample_raw(&mut r1);
        let map = sampler.sample_power_map(4.0, false, &mut r2);
        assert_eq!(raw, map);
        assert!(map.data.iter().any(|&v| v < 0.0), "raw fields go negative");
    }

    #[test]
    fn sampling_is_deterministic_per_seed() {
        let sampler = GrfSampler::new(11, 0.3).unwrap();
        let a = sampler.sample_power_map(4.0, true, &mut ChaCha8Rng::seed_from_u64(9));
        let b = sampler.sample_power_map(4.0, true, &mut ChaCha8Rng::seed_from_u64(9));
        let c = sampler.sample_power_map(4.0, true, &mut ChaCha8Rng::seed_from_u64(10));
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn htc_pairs_stay_in_range() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let pairs = sample_htc_pairs(333.33, 1000.0, 64, &mut rng).unwrap();
        assert_eq!(pairs.len(), 64);
        for (t, b) in &pairs {
            assert!(*t >= 333.33 && *t <= 1000.0);
            assert!(*b >= 333.33 && *b <= 1000.0);
        }
        // Both coordinates actually vary.
        assert!(pairs.iter().map(|p| p.0).fold(f64::INFINITY, f64::min) < 500.0);
        assert!(pairs.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max) > 800.0);
        assert!(sample_htc_pairs(0.0, 10.0, 1, &mut rng).is_err());
        assert!(sample_htc_pairs(10.0, 10.0, 1, &mut rng).is_err());
    }
}
