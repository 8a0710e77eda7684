use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Separable space-time Gaussian noise.
///
/// The covariance between entry `(t, i)` and `(t', j)` is
/// `C_time[t][t'] · C_nodes[i][j]` with
/// `C_time[t][t'] = var_time · rho_time^|t − t'|` and
/// `C_nodes[i][j] = var_nodes` on the diagonal, `rho_nodes · var_nodes` off it.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSpec {
    pub var_time: f64,
    pub var_nodes: f64,
    pub rho_time: f64,
    pub rho_nodes: f64,
}

impl NoiseSpec {
    pub fn new(var_time: f64, var_nodes: f64, rho_time: f64, rho_nodes: f64) -> Result<Self> {
        let spec = Self {
            var_time,
            var_nodes,
            rho_time,
            rho_nodes,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub const fn zero() -> Self {
        Self {
            var_time: 0.0,
            var_nodes: 0.0,
            rho_time: 0.0,
            rho_nodes: 0.0,
        }
    }

    /// Variances 0.01 in time and across nodes, correlation factors 0.1.
    pub const fn synthetic_default() -> Self {
        Self {
            var_time: 0.01,
            var_nodes: 0.01,
            rho_time: 0.1,
            rho_nodes: 0.1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("var_time", self.var_time), ("var_nodes", self.var_nodes)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::invalid(format!("{name} = {v} must be a finite non-negative variance")));
            }
        }
        for (name, r) in [("rho_time", self.rho_time), ("rho_nodes", self.rho_nodes)] {
            if !(0.0..1.0).contains(&r) {
                return Err(Error::invalid(format!("{name} = {r} must lie in [0, 1)")));
            }
        }
        // both factors must admit a factorization at a representative size
        psd_factor(&self.time_covariance(3))?;
        psd_factor(&self.node_covariance(3))?;
        Ok(())
    }

    pub fn is_zero(&self) -> bool {
        self.var_time == 0.0 || self.var_nodes == 0.0
    }

    pub fn time_covariance(&self, t_len: usize) -> Vec<Vec<f64>> {
        (0..t_len)
            .map(|t| {
                (0..t_len)
                    .map(|s| self.var_time * self.rho_time.powi(t.abs_diff(s) as i32))
                    .collect()
            })
            .collect()
    }

    pub fn node_covariance(&self, n: usize) -> Vec<Vec<f64>> {
        (0..n)
            .map(|i| {
                (0..n)
                    .map(|j| if i == j { self.var_nodes } else { self.rho_nodes * self.var_nodes })
                    .collect()
            })
            .collect()
    }
}

/// Lower-triangular `L` with `L Lᵀ = C` for positive semidefinite `C`.
///
/// Pivots that vanish (within rounding) leave a zero column, so singular
/// covariances such as all-zero ones factor fine; a clearly negative pivot
/// rejects the matrix.
pub fn psd_factor(c: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    let n = c.len();
    let scale = c.iter().enumerate().map(|(i, r)| r[i].abs()).fold(0.0, f64::max);
    let tol = 1e-12 * scale.max(f64::MIN_POSITIVE);
    let mut l = vec![vec![0.0; n]; n];
    for j in 0..n {
        let pivot = c[j][j] - (0..j).map(|k| l[j][k] * l[j][k]).sum::<f64>();
        if pivot < -tol {
            return Err(Error::invalid("covariance is not positive semidefinite"));
        }
        if pivot <= tol {
            for i in j + 1..n {
                let off = c[i][j] - (0..j).map(|k| l[i][k] * l[j][k]).sum::<f64>();
                if off.abs() > 1e-9 * scale.max(f64::MIN_POSITIVE) {
                    return Err(Error::invalid("covariance is not positive semidefinite"));
                }
            }
            continue;
        }
        let d = pivot.sqrt();
        l[j][j] = d;
        for i in j + 1..n {
            let off = c[i][j] - (0..j).map(|k| l[i][k] * l[j][k]).sum::<f64>();
            l[i][j] = off / d;
        }
    }
    Ok(l)
}

/// Draws a `T × N` matrix `W = L_time Z L_nodesᵀ` with `Z` standard normal,
/// which has covariance `C_time ⊗ C_nodes`.
pub fn correlated_noise<T: Scalar>(t_len: usize, n: usize, spec: &NoiseSpec, seed: u64) -> Result<Tensor<T>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    correlated_noise_with(t_len, n, spec, &mut rng)
}

pub(crate) fn correlated_noise_with<T: Scalar>(
    t_len: usize,
    n: usize,
    spec: &NoiseSpec,
    rng: &mut ChaCha8Rng,
) -> Result<Tensor<T>> {
    spec.validate()?;
    if t_len == 0 || n == 0 {
        return Err(Error::invalid("noise dimensions must be positive"));
    }
    let lt = psd_factor(&spec.time_covariance(t_len))?;
    let ln = psd_factor(&spec.node_covariance(n))?;
    let z: Vec<f64> = (0..t_len * n).map(|_| StandardNormal.sample(rng)).collect();
    // Y = Z L_nodesᵀ
    let mut y = vec![0.0; t_len * n];
    for t in 0..t_len {
        for i in 0..n {
            y[t * n + i] = (0..=i).map(|k| z[t * n + k] * ln[i][k]).sum();
        }
    }
    let mut w = Vec::with_capacity(t_len * n);
    for t in 0..t_len {
        for i in 0..n {
            w.push(T::lit((0..=t).map(|s| lt[t][s] * y[s * n + i]).sum()));
        }
    }
    Tensor::from_vec(&[t_len, n], w)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn factor_reproduces_covariance() {
        let spec = NoiseSpec::new(0.3, 2.0, 0.6, 0.25).unwrap();
        for c in [spec.time_covariance(6), spec.node_covariance(5)] {
            let l = psd_factor(&c).unwrap();
            for i in 0..c.len() {
                for j in 0..c.len() {
                    let v: f64 = (0..c.len()).map(|k| l[i][k] * l[j][k]).sum();
                    assert!((v - c[i][j]).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn rejects_invalid_specs() {
        assert!(NoiseSpec::new(-0.1, 1.0, 0.0, 0.0).is_err());
        assert!(NoiseSpec::new(1.0, 1.0, 1.0, 0.0).is_err());
        assert!(NoiseSpec::new(1.0, 1.0, 0.0, -0.2).is_err());
        assert!(psd_factor(&[vec![1.0, 2.0], vec![2.0, 1.0]]).is_err());
    }

    #[test]
    fn zero_spec_gives_zero_noise() {
        let w = correlated_noise::<f64>(7, 4, &NoiseSpec::zero(), 3).unwrap();
        assert!(w.data().iter().all(|&v| v == 0.0));
        let half = NoiseSpec::new(0.0, 1.0, 0.5, 0.5).unwrap();
        assert!(correlated_noise::<f64>(5, 3, &half, 3).unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn deterministic_per_seed() {
        let spec = NoiseSpec::synthetic_default();
        let a = correlated_noise::<f64>(10, 20, &spec, 42).unwrap();
        assert_eq!(a, correlated_noise::<f64>(10, 20, &spec, 42).unwrap());
        assert_ne!(a, correlated_noise::<f64>(10, 20, &spec, 43).unwrap());
    }
}
