//! Gauss–Hermite quadrature for the standard normal weight and
//! probabilist's Hermite coefficients.

use std::sync::{Arc, OnceLock};

use faer::{Mat, Side};

use crate::error::{Error, Result};

/// Nodes and weights with `Σ wᵢ f(xᵢ) ≈ E f(z)`, `z ~ N(0, 1)`.
#[derive(Debug, Clone)]
pub struct GaussHermite {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

/// Orthonormal Hermite values `p_0(x), …, p_{n}(x)` with
/// `E[p_j p_k] = δ_jk`, i.e. `p_k = He_k / sqrt(k!)`.
fn orthonormal_values(x: f64, n: usize) -> Vec<f64> {
    let mut p = Vec::with_capacity(n + 1);
    p.push(1.0);
    if n >= 1 {
        p.push(x);
    }
    for k in 1..n {
        let next = (x * p[k] - (k as f64).sqrt() * p[k - 1]) / ((k + 1) as f64).sqrt();
        p.push(next);
    }
    p
}

impl GaussHermite {
    /// `n`-point rule. Nodes from the Jacobi matrix, polished by Newton steps;
    /// weights from the Christoffel formula `wᵢ = 1 / Σ_k p_k(xᵢ)²`.
    pub fn new(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::Quadrature("rule needs at least one node".into()));
        }
        let jacobi = Mat::<f64>::from_fn(n, n, |i, j| {
            if i + 1 == j || j + 1 == i {
                (i.max(j) as f64).sqrt()
            } else {
                0.0
            }
        });
        let mut nodes = jacobi
            .self_adjoint_eigenvalues(Side::Lower)
            .map_err(|e| Error::Quadrature(format!("Jacobi eigenproblem failed: {e:?}")))?;
        for x in nodes.iter_mut() {
            for _ in 0..3 {
                let p = orthonormal_values(*x, n);
                let derivative = (n as f64).sqrt() * p[n - 1];
                if derivative == 0.0 {
                    break;
                }
                *x -= p[n] / derivative;
            }
        }
        let weights: Vec<f64> = nodes
            .iter()
            .map(|&x| {
                1.0 / orthonormal_values(x, n - 1)
                    .iter()
                    .map(|v| v * v)
                    .sum::<f64>()
            })
            .collect();
        Ok(GaussHermite { nodes, weights })
    }

    pub fn expect(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&x, &w)| w * f(x))
            .sum()
    }
}

/// Default order used for coefficients; the convergence check doubles it.
pub const DEFAULT_ORDER: usize = 120;
pub const CONVERGENCE_TOLERANCE: f64 = 1e-8;
pub const MAX_DEGREE: usize = 30;

fn cached_rule(n: usize) -> &'static GaussHermite {
    static LOW: OnceLock<GaussHermite> = OnceLock::new();
    static HIGH: OnceLock<GaussHermite> = OnceLock::new();
    let cell = match n {
        DEFAULT_ORDER => &LOW,
        _ => &HIGH,
    };
    cell.get_or_init(|| GaussHermite::new(n).expect("fixed-order rule"))
}

/// Probabilist's Hermite polynomial `He_k(x)`.
pub fn hermite_he(k: usize, x: f64) -> f64 {
    let (mut prev, mut cur) = (1.0, x);
    if k == 0 {
        return 1.0;
    }
    for j in 1..k {
        let next = x * cur - j as f64 * prev;
        prev = cur;
        cur = next;
    }
    cur
}

type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// A named scalar function, optionally with its derivative.
#[derive(Clone)]
pub struct LinkFunction {
    pub name: String,
    evaluator: ScalarFn,
    derivative: Option<ScalarFn>,
}

impl std::fmt::Debug for LinkFunction {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LinkFunction")
            .field("name", &self.name)
            .field("differentiable", &self.derivative.is_some())
            .finish()
    }
}

impl LinkFunction {
    pub fn new(name: impl Into<String>, f: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        LinkFunction {
            name: name.into(),
            evaluator: Arc::new(f),
            derivative: None,
        }
    }

    pub fn with_derivative(mut self, df: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        self.derivative = Some(Arc::new(df));
        self
    }

    #[inline]
    pub fn eval(&self, x: f64) -> f64 {
        (self.evaluator)(x)
    }

    pub fn derivative(&self) -> Option<&(dyn Fn(f64) -> f64 + Send + Sync)> {
        self.derivative.as_deref()
    }

    pub fn identity() -> Self {
        LinkFunction::new("identity", |x| x).with_derivative(|_| 1.0)
    }

    /// `He_k`.
    pub fn hermite(k: usize) -> Self {
        let df = move |x: f64| {
            if k == 0 {
                0.0
            } else {
                k as f64 * hermite_he(k - 1, x)
            }
        };
        LinkFunction::new(format!("he{k}"), move |x| hermite_he(k, x)).with_derivative(df)
    }

    pub fn tanh() -> Self {
        LinkFunction::new("tanh", f64::tanh).with_derivative(|x| {
            let t = x.tanh();
            1.0 - t * t
        })
    }

    pub fn zero() -> Self {
        LinkFunction::new("zero", |_| 0.0).with_derivative(|_| 0.0)
    }

    /// Looks up a built-in link by name: `identity`, `tanh`, `zero`, `heK`.
    pub fn by_name(name: &str) -> Result<Self> {
        match name {
            "identity" => Ok(Self::identity()),
            "tanh" => Ok(Self::tanh()),
            "zero" => Ok(Self::zero()),
            _ => match name.strip_prefix("he").and_then(|k| k.parse::<usize>().ok()) {
                Some(k) if k <= MAX_DEGREE => Ok(Self::hermite(k)),
                _ => Err(Error::Config(format!(
                    "unknown link {name:?}; expected identity, tanh, zero or he<k> with k <= {MAX_DEGREE}"
                ))),
            },
        }
    }

    /// `E f(z)²` under the standard normal; errors if not finite.
    pub fn second_moment(&self) -> Result<f64> {
        let v = cached_rule(2 * DEFAULT_ORDER).expect(|x| self.eval(x).powi(2));
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::Quadrature(format!(
                "{} is not square integrable",
                self.name
            )))
        }
    }

    /// `Var f(z)` under the standard normal.
    pub fn variance(&self) -> Result<f64> {
        let m2 = self.second_moment()?;
        let m1 = cached_rule(2 * DEFAULT_ORDER).expect(|x| self.eval(x));
        Ok(m2 - m1 * m1)
    }
}

fn coefficient_with(rule: &GaussHermite, f: &LinkFunction, k: usize) -> f64 {
    // c_k = E[f He_k] / k! = E[f p_k] / sqrt(k!).
    let sqrt_fact: f64 = (1..=k).map(|j| (j as f64).sqrt()).product();
    rule.expect(|x| f.eval(x) * orthonormal_values(x, k)[k]) / sqrt_fact
}

/// `c_k` in `f = Σ c_k He_k`, i.e. `E[f(z) He_k(z)] / k!`.
pub fn hermite_coefficient(f: &LinkFunction, k: usize) -> Result<f64> {
    if k > MAX_DEGREE {
        return Err(Error::domain(format!("degree {k} exceeds {MAX_DEGREE}")));
    }
    let low = coefficient_with(cached_rule(DEFAULT_ORDER), f, k);
    let high = coefficient_with(cached_rule(2 * DEFAULT_ORDER), f, k);
    if !(low.is_finite() && high.is_finite()) || (low - high).abs() > CONVERGENCE_TOLERANCE {
        return Err(Error::Quadrature(format!(
            "coefficient {k} of {} moved from {low:e} to {high:e} when doubling the order",
            f.name
        )));
    }
    Ok(high)
}

/// Smallest `k ≥ 1` with `|c_k| > tol`.
pub fn information_exponent(f: &LinkFunction, k_max: usize, tol: f64) -> Result<usize> {
    for k in 1..=k_max.min(MAX_DEGREE) {
        if hermite_coefficient(f, k)?.abs() > tol {
            return Ok(k);
        }
    }
    Err(Error::NotFound(format!(
        "all Hermite coefficients of {} up to degree {k_max} are within {tol:e} of zero",
        f.name
    )))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn low_order_rule_is_exact_on_moments() {
        let rule = GaussHermite::new(5).unwrap();
        assert!((rule.expect(|_| 1.0) - 1.0).abs() < 1e-14);
        assert!((rule.expect(|x| x * x) - 1.0).abs() < 1e-13);
        assert!((rule.expect(|x| x.powi(4)) - 3.0).abs() < 1e-12);
        assert!(rule.expect(|x| x.powi(3)).abs() < 1e-13);
    }

    #[test]
    fn recurrence_matches_explicit_polynomials() {
        let x: f64 = 0.7;
        assert_eq!(hermite_he(0, x), 1.0);
        assert_eq!(hermite_he(1, x), x);
        assert!((hermite_he(2, x) - (x * x - 1.0)).abs() < 1e-15);
        assert!((hermite_he(3, x) - (x.powi(3) - 3.0 * x)).abs() < 1e-15);
        assert!((hermite_he(4, x) - (x.powi(4) - 6.0 * x * x + 3.0)).abs() < 1e-14);
    }

    #[test]
    fn by_name_round_trips() {
        assert_eq!(LinkFunction::by_name("he3").unwrap().name, "he3");
        assert!(LinkFunction::by_name("relu6").is_err());
        assert!(LinkFunction::by_name("he31").is_err());
    }

    #[test]
    fn zero_link_has_no_exponent() {
        assert!(matches!(
            information_exponent(&LinkFunction::zero(), 30, 1e-8),
            Err(Error::NotFound(_))
        ));
    }
}
