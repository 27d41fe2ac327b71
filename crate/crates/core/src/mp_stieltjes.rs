//! Marchenko–Pastur Stieltjes transform `m(λ; γ) = ∫ dμ(s) / (s + λ)` and
//! its negated derivative, plus a sampled-spectrum oracle.

use faer::Side;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::seeding::{stream_rng, Stream};

/// Dimension-to-sample ratio `d / n`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct AspectRatio(f64);

impl AspectRatio {
    pub fn new(gamma: f64) -> Result<Self> {
        if gamma.is_finite() && gamma > 0.0 {
            Ok(AspectRatio(gamma))
        } else {
            Err(Error::domain(format!(
                "aspect ratio must be positive and finite, got {gamma}"
            )))
        }
    }

    pub fn from_dims(d: usize, n: usize) -> Result<Self> {
        if d == 0 || n == 0 {
            return Err(Error::domain(format!(
                "dimensions must be positive, got d={d}, n={n}"
            )));
        }
        Self::new(d as f64 / n as f64)
    }

    #[inline]
    pub fn get(self) -> f64 {
        self.0
    }
}

impl TryFrom<f64> for AspectRatio {
    type Error = Error;
    fn try_from(value: f64) -> Result<Self> {
        Self::new(value)
    }
}

impl From<AspectRatio> for f64 {
    fn from(value: AspectRatio) -> f64 {
        value.0
    }
}

/// `m1 = m(λ; γ)` and `m2 = -∂m/∂λ` at one point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StieltjesPair {
    pub m1: f64,
    pub m2: f64,
}

/// `sqrt((1 + γ + λ)² − 4γ)`, factored as `sqrt((λ + (1+√γ)²)(λ + (1−√γ)²))`
/// so that it stays accurate near `γ = 1, λ = 0`.
#[inline]
pub(crate) fn radical(lambda: f64, gamma: f64) -> f64 {
    let up = 1.0 + gamma.sqrt();
    let down = (1.0 - gamma) / up;
    ((lambda + up * up) * (lambda + down * down)).sqrt()
}

fn check_lambda(lambda: f64) -> Result<()> {
    if !lambda.is_finite() {
        return Err(Error::domain(format!(
            "lambda must be finite, got {lambda}"
        )));
    }
    if lambda < 0.0 {
        return Err(Error::domain(format!(
            "lambda must be nonnegative, got {lambda}"
        )));
    }
    Ok(())
}

/// Unchecked evaluation; valid for `λ > 0`, or `λ = 0` with `γ < 1`.
#[inline]
pub(crate) fn m_raw(lambda: f64, gamma: f64) -> f64 {
    if lambda == 0.0 {
        return 1.0 / (1.0 - gamma);
    }
    let b = 1.0 - gamma + lambda;
    let root = radical(lambda, gamma);
    if b >= 0.0 {
        2.0 / (b + root)
    } else {
        (root - b) / (2.0 * gamma * lambda)
    }
}

/// Unchecked pair; same validity as [`m_raw`]. At `λ = 0, γ < 1` this gives
/// `m1 = 1/(1−γ)` and `m2 = 1/(1−γ)³`.
#[inline]
pub(crate) fn pair_raw(lambda: f64, gamma: f64) -> StieltjesPair {
    let m1 = m_raw(lambda, gamma);
    let m2 = (gamma * m1 * m1 + m1) / radical(lambda, gamma);
    StieltjesPair { m1, m2 }
}

/// Checked pair allowing the ridgeless point `λ = 0` when `γ < 1`.
pub(crate) fn pair_ridgeless_ok(lambda: f64, gamma: AspectRatio) -> Result<StieltjesPair> {
    check_lambda(lambda)?;
    if lambda == 0.0 && gamma.get() >= 1.0 {
        return Err(Error::domain(format!(
            "ridgeless limit requires gamma < 1, got gamma={}",
            gamma.get()
        )));
    }
    Ok(pair_raw(lambda, gamma.get()))
}

/// `m(λ; γ)`. At `λ = 0` returns the limit `1/(1−γ)` when `γ < 1`.
pub fn mp_m(lambda: f64, gamma: AspectRatio) -> Result<f64> {
    check_lambda(lambda)?;
    if lambda == 0.0 && gamma.get() >= 1.0 {
        return Err(Error::domain(format!(
            "m(0; gamma) diverges for gamma >= 1, got gamma={}",
            gamma.get()
        )));
    }
    Ok(m_raw(lambda, gamma.get()))
}

/// `-∂m/∂λ`, from implicit differentiation of
/// `γλm² + (1−γ+λ)m − 1 = 0`.
pub fn mp_m_derivative(lambda: f64, gamma: AspectRatio) -> Result<f64> {
    check_lambda(lambda)?;
    if lambda == 0.0 {
        return Err(Error::domain("derivative requires lambda > 0"));
    }
    Ok(pair_raw(lambda, gamma.get()).m2)
}

pub fn stieltjes_pair(lambda: f64, gamma: AspectRatio) -> Result<StieltjesPair> {
    mp_m_derivative(lambda, gamma)?;
    Ok(pair_raw(lambda, gamma.get()))
}

/// Residual of the quadratic `γλm² + (1−γ+λ)m − 1` at `m`.
pub fn self_consistency_residual(lambda: f64, gamma: AspectRatio, m: f64) -> f64 {
    let g = gamma.get();
    g * lambda * m * m + (1.0 - g + lambda) * m - 1.0
}

/// Limit of `λ m(λ; γ)` as `λ → 0⁺`: zero for `γ ≤ 1`, `(γ−1)/γ` above.
pub fn lambda_m_limit(gamma: AspectRatio) -> f64 {
    let g = gamma.get();
    if g > 1.0 {
        (g - 1.0) / g
    } else {
        0.0
    }
}

/// Eigenvalues of a sampled sample covariance `XᵀX/n`, `X` an `n × d`
/// standard Gaussian matrix with `n = round(d/γ)`.
#[derive(Debug, Clone)]
pub struct WishartSpectrum {
    pub d: usize,
    pub n: usize,
    pub eigenvalues: Vec<f64>,
}

impl WishartSpectrum {
    pub fn sample(d: usize, gamma: AspectRatio, seed: u64) -> Result<Self> {
        let n = (d as f64 / gamma.get()).round() as usize;
        if d < 2 || n < 2 {
            return Err(Error::domain(format!(
                "need d >= 2 and n >= 2, got d={d}, n={n}"
            )));
        }
        let x = linalg::gaussian_matrix(&mut stream_rng(seed, Stream::Features), n, d, 1.0);
        let cov = linalg::gram(x.as_ref());
        let eigenvalues = cov
            .self_adjoint_eigenvalues(Side::Lower)
            .map_err(|e| Error::SingularSystem(format!("eigenvalue solver failed: {e:?}")))?;
        Ok(WishartSpectrum { d, n, eigenvalues })
    }

    /// `(1/d) Σ 1/(sᵢ + λ)`.
    pub fn stieltjes(&self, lambda: f64) -> Result<f64> {
        check_lambda(lambda)?;
        if lambda == 0.0 {
            return Err(Error::domain("empirical transform requires lambda > 0"));
        }
        // Sample eigenvalues can be a hair below zero.
        let sum: f64 = self
            .eigenvalues
            .iter()
            .map(|&s| 1.0 / (s.max(0.0) + lambda))
            .sum();
        Ok(sum / self.d as f64)
    }
}

/// Stieltjes transform of one sampled spectrum.
pub fn empirical_stieltjes(d: usize, gamma: AspectRatio, lambda: f64, seed: u64) -> Result<f64> {
    check_lambda(lambda)?;
    if lambda == 0.0 {
        return Err(Error::domain("empirical transform requires lambda > 0"));
    }
    WishartSpectrum::sample(d, gamma, seed)?.stieltjes(lambda)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn g(x: f64) -> AspectRatio {
        AspectRatio::new(x).unwrap()
    }

    #[test]
    fn golden_ratio_at_unit_point() {
        let m = mp_m(1.0, g(1.0)).unwrap();
        assert!((m - (5f64.sqrt() - 1.0) / 2.0).abs() < 1e-15);
    }

    #[test]
    fn ridgeless_limit_under_parameterized() {
        assert_eq!(mp_m(0.0, g(0.5)).unwrap(), 2.0);
        let p = pair_ridgeless_ok(0.0, g(0.5)).unwrap();
        assert!((p.m2 - 8.0).abs() < 1e-12);
        assert!(mp_m(0.0, g(1.0)).is_err());
        assert!(mp_m(0.0, g(3.0)).is_err());
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(mp_m(-1e-3, g(0.5)).is_err());
        assert!(mp_m(f64::NAN, g(0.5)).is_err());
        assert!(mp_m_derivative(0.0, g(0.5)).is_err());
        assert!(AspectRatio::new(0.0).is_err());
        assert!(AspectRatio::new(f64::INFINITY).is_err());
    }

    #[test]
    fn large_lambda_asymptotics() {
        let lam = 1e6;
        let m = mp_m(lam, g(0.5)).unwrap();
        assert!((lam * m - 1.0).abs() < 1e-5);
        let m2 = mp_m_derivative(lam, g(0.5)).unwrap();
        assert!((lam * lam * m2 - 1.0).abs() < 1e-5);
    }

    #[test]
    fn both_branches_agree_on_stress_grid() {
        // The direct quotient and the conjugate form are algebraically equal;
        // compare where neither suffers cancellation badly.
        for &gamma in &[0.9, 0.99, 1.0, 1.01, 1.1, 2.0] {
            for &lam in &[1e-4, 1e-3, 1e-2, 0.1, 1.0] {
                let b: f64 = 1.0 - gamma + lam;
                let root = radical(lam, gamma);
                let conj = 2.0 / (b + root);
                let direct = (root - b) / (2.0 * gamma * lam);
                assert!(
                    ((conj - direct) / conj).abs() < 1e-10,
                    "gamma={gamma} lam={lam}"
                );
            }
        }
    }

    #[test]
    fn over_parameterized_small_lambda_limit() {
        let gamma = g(4.0);
        let lam = 1e-9;
        let lm = lam * mp_m(lam, gamma).unwrap();
        assert!((lm - lambda_m_limit(gamma)).abs() < 1e-8);
    }

    #[test]
    fn empirical_is_deterministic() {
        let a = empirical_stieltjes(50, g(0.5), 0.3, 11).unwrap();
        let b = empirical_stieltjes(50, g(0.5), 0.3, 11).unwrap();
        assert_eq!(a.to_bits(), b.to_bits());
    }
}
