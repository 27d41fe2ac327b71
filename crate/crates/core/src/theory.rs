//! Limiting risks of the teacher/student ridge pipeline and the phase
//! structure of the student-minus-teacher gap.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mp_stieltjes::{pair_ridgeless_ok, radical, AspectRatio, StieltjesPair};

/// One point of the linear problem.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearProblemParams {
    pub gamma_t: AspectRatio,
    pub gamma_s: AspectRatio,
    pub sigma_eps: f64,
    pub lambda_t: f64,
    pub lambda_s: f64,
    /// Correlation of the weighted-ridge spike with the target; 0 means plain ridge.
    pub zeta: f64,
}

impl LinearProblemParams {
    pub fn validate(&self) -> Result<()> {
        check_sigma(self.sigma_eps)?;
        for (name, v) in [("lambda_t", self.lambda_t), ("lambda_s", self.lambda_s)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::domain(format!(
                    "{name} must be finite and nonnegative, got {v}"
                )));
            }
        }
        if !(0.0..=1.0).contains(&self.zeta) {
            return Err(Error::domain(format!(
                "zeta must lie in [0, 1], got {}",
                self.zeta
            )));
        }
        Ok(())
    }
}

fn check_sigma(sigma: f64) -> Result<()> {
    if sigma.is_finite() && sigma >= 0.0 {
        Ok(())
    } else {
        Err(Error::domain(format!(
            "sigma_eps must be finite and nonnegative, got {sigma}"
        )))
    }
}

/// Limiting teacher risk, gap and student risk at one parameter point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TheoryPrediction {
    pub loss_teacher: f64,
    /// `Δ − ζ² Δ_Γ`.
    pub gap: f64,
    /// `Δ_Γ`; zero when `ζ = 0`.
    pub delta_gamma: f64,
    pub loss_student: f64,
}

struct Legs {
    t: StieltjesPair,
    s: StieltjesPair,
}

fn legs(p: &LinearProblemParams) -> Result<Legs> {
    p.validate()?;
    let t = pair_ridgeless_ok(p.lambda_t, p.gamma_t)
        .map_err(|e| Error::domain(format!("teacher leg: {e}")))?;
    let s = pair_ridgeless_ok(p.lambda_s, p.gamma_s)
        .map_err(|e| Error::domain(format!("student leg: {e}")))?;
    Ok(Legs { t, s })
}

/// `σ² + (λ_t − σ²γ_t) λ_t m_{t,2} + σ²γ_t m_{t,1}`; at `λ_t = 0` this is
/// `σ²/(1−γ_t)` and requires `γ_t < 1`.
pub fn teacher_risk(lambda_t: f64, gamma_t: AspectRatio, sigma_eps: f64) -> Result<f64> {
    check_sigma(sigma_eps)?;
    let t = pair_ridgeless_ok(lambda_t, gamma_t)?;
    let s2 = sigma_eps * sigma_eps;
    let g = gamma_t.get();
    Ok(s2 + (lambda_t - s2 * g) * lambda_t * t.m2 + s2 * g * t.m1)
}

fn gap_from_legs(p: &LinearProblemParams, l: &Legs) -> f64 {
    let s2g = p.sigma_eps * p.sigma_eps * p.gamma_t.get();
    let (lt, ls) = (p.lambda_t, p.lambda_s);
    (s2g - lt) * (l.t.m1 - lt * l.t.m2) * (ls * ls * l.s.m2 - 2.0 * ls * l.s.m1)
        + ls * ls * l.s.m2 * (1.0 - lt * l.t.m1)
}

fn delta_gamma_from_legs(p: &LinearProblemParams, l: &Legs) -> f64 {
    let (lt, ls) = (p.lambda_t, p.lambda_s);
    let u = -1.0 + lt * l.t.m1;
    ls * u * (-2.0 * lt * l.s.m1 * l.t.m1 + ls * l.s.m2 * u)
}

/// Limit of `𝓛_s − 𝓛_t` for a plain-ridge student. `zeta` is ignored.
pub fn risk_gap_ridge(params: &LinearProblemParams) -> Result<f64> {
    let l = legs(params)?;
    Ok(gap_from_legs(params, &l))
}

/// Nonnegative correction subtracted (times `ζ²`) for the spiked
/// weighted-ridge student.
pub fn delta_gamma(params: &LinearProblemParams) -> Result<f64> {
    let l = legs(params)?;
    Ok(delta_gamma_from_legs(params, &l))
}

/// `Δ − ζ² Δ_Γ`.
pub fn risk_gap_weighted(params: &LinearProblemParams) -> Result<f64> {
    let l = legs(params)?;
    let gap = gap_from_legs(params, &l);
    if params.zeta == 0.0 {
        return Ok(gap);
    }
    Ok(gap - params.zeta * params.zeta * delta_gamma_from_legs(params, &l))
}

pub fn predict(params: &LinearProblemParams) -> Result<TheoryPrediction> {
    let l = legs(params)?;
    let loss_teacher = teacher_risk(params.lambda_t, params.gamma_t, params.sigma_eps)?;
    let ridge_gap = gap_from_legs(params, &l);
    let delta_gamma = if params.zeta == 0.0 {
        0.0
    } else {
        delta_gamma_from_legs(params, &l)
    };
    let gap = ridge_gap - params.zeta * params.zeta * delta_gamma;
    Ok(TheoryPrediction {
        loss_teacher,
        gap,
        delta_gamma,
        loss_student: loss_teacher + gap,
    })
}

/// `λ_t* = σ² γ_t`, the minimizer of [`teacher_risk`].
pub fn optimal_teacher_lambda(sigma_eps: f64, gamma_t: AspectRatio) -> f64 {
    sigma_eps * sigma_eps * gamma_t.get()
}

/// `H₁(λ; γ) = λm₂ / (λm₂ − 2m₁)`, evaluated in the cancellation-free form
/// `−(R + γ − 1 + λ) / (3R + 1 − γ − λ)`. Takes values in `[−1, 0]`.
pub fn h1(lambda_s: f64, gamma_s: AspectRatio) -> Result<f64> {
    let g = gamma_s.get();
    if !(lambda_s.is_finite() && lambda_s >= 0.0) {
        return Err(Error::domain(format!(
            "lambda_s must be finite and nonnegative, got {lambda_s}"
        )));
    }
    if lambda_s == 0.0 && g >= 1.0 {
        return Err(Error::domain(format!(
            "h1 is indeterminate at lambda_s = 0 for gamma_s = {g} >= 1"
        )));
    }
    Ok(h1_raw(lambda_s, g))
}

fn h1_raw(lam: f64, g: f64) -> f64 {
    let r = radical(lam, g);
    // s = R + γ − 1, rewritten for γ ≤ 1 where the sum cancels.
    let s = if g > 1.0 {
        r + g - 1.0
    } else {
        lam * (lam + 2.0 + 2.0 * g) / (r + 1.0 - g)
    };
    -(s + lam) / (3.0 * r + 1.0 - g - lam)
}

/// `H₁` straight from the Stieltjes pair; used as a cross-check.
pub fn h1_from_stieltjes(lambda_s: f64, gamma_s: AspectRatio) -> Result<f64> {
    let p = crate::mp_stieltjes::stieltjes_pair(lambda_s, gamma_s)?;
    let a = lambda_s * p.m2;
    Ok(a / (a - 2.0 * p.m1))
}

/// `H₂ = (λ_t − σ²γ_t) / sqrt((1+γ_t+λ_t)² − 4γ_t)`. Nonpositive exactly when
/// the teacher is under-regularized.
pub fn h2(lambda_t: f64, gamma_t: AspectRatio, sigma_eps: f64) -> Result<f64> {
    check_sigma(sigma_eps)?;
    if !(lambda_t.is_finite() && lambda_t >= 0.0) {
        return Err(Error::domain(format!(
            "lambda_t must be finite and nonnegative, got {lambda_t}"
        )));
    }
    let r = radical(lambda_t, gamma_t.get());
    if r == 0.0 {
        return Err(Error::domain(
            "h2 is undefined at lambda_t = 0, gamma_t = 1",
        ));
    }
    Ok((lambda_t - optimal_teacher_lambda(sigma_eps, gamma_t)) / r)
}

/// `(σ²γ_t − λ_t)(m₁ − λ_t m₂) / (λ_t m₁ − 1)`; used as a cross-check.
pub fn h2_from_stieltjes(lambda_t: f64, gamma_t: AspectRatio, sigma_eps: f64) -> Result<f64> {
    let p = crate::mp_stieltjes::stieltjes_pair(lambda_t, gamma_t)?;
    let s2g = optimal_teacher_lambda(sigma_eps, gamma_t);
    Ok((s2g - lambda_t) * (p.m1 - lambda_t * p.m2) / (lambda_t * p.m1 - 1.0))
}

/// Acceptance tolerance for a candidate root of `H₁(λ) = c`.
pub const ROOT_TOLERANCE: f64 = 1e-8;

/// `(c − 1)² + 8c(1 + c)γ`. The quadratic for `H₁ = c` has real roots iff
/// this is nonnegative.
pub fn root_radicand(c: f64, gamma_s: AspectRatio) -> f64 {
    (c - 1.0).powi(2) + 8.0 * c * (1.0 + c) * gamma_s.get()
}

/// Nonnegative solutions of `H₁(λ; γ_s) = c`, sorted ascending.
///
/// Candidates come from the quadratic
/// `2c(1+c)λ² + [4c(1+c)(γ−1) + (1+3c)²]λ + 2c(1+c)(γ−1)² = 0`
/// and are kept only if `|H₁(λ) − c| < ROOT_TOLERANCE`, which discards the
/// spurious branch introduced by squaring.
pub fn lambda_s_roots(c: f64, gamma_s: AspectRatio) -> Result<Vec<f64>> {
    if !c.is_finite() || c > 0.0 {
        return Err(Error::domain(format!(
            "c must be finite and nonpositive, got {c}"
        )));
    }
    if c == 0.0 {
        return Err(Error::domain("c = 0 has no isolated roots"));
    }
    let g = gamma_s.get();
    let k = 2.0 * c * (1.0 + c);
    let b = 2.0 * k * (g - 1.0) + (1.0 + 3.0 * c).powi(2);
    let c0 = k * (g - 1.0).powi(2);

    let candidates: Vec<f64> = if k == 0.0 {
        // c = −1: the quadratic degenerates to 4λ = 0.
        vec![-c0 / b]
    } else {
        let disc = b * b - 4.0 * k * c0;
        if disc < 0.0 {
            return Ok(Vec::new());
        }
        let q = -0.5 * (b + b.signum() * disc.sqrt());
        if q == 0.0 {
            vec![0.0]
        } else {
            vec![q / k, c0 / q]
        }
    };

    let mut roots: Vec<f64> = candidates
        .into_iter()
        .filter(|r| r.is_finite() && *r >= 0.0)
        .filter(|&r| match h1(r, gamma_s) {
            Ok(v) => (v - c).abs() < ROOT_TOLERANCE,
            Err(_) => false,
        })
        .collect();
    roots.sort_by(f64::total_cmp);
    roots.dedup_by(|a, b| (*a - *b).abs() <= 1e-14 * b.abs().max(1.0));
    if g <= 1.0 {
        roots.truncate(1);
    }
    Ok(roots)
}

/// Supremum of `H₁(·; γ_s)` over `λ > 0` for `γ_s ≥ 1`:
/// `1 / (1 − 4γ_s + 4 sqrt(γ_s(γ_s − 1)))`. Two roots exist iff
/// `−1 < c <` this value.
pub fn two_root_bound(gamma_s: AspectRatio) -> Result<f64> {
    let g = gamma_s.get();
    if g < 1.0 {
        return Err(Error::domain(format!(
            "two_root_bound needs gamma_s >= 1, got {g}"
        )));
    }
    Ok(1.0 / (1.0 - 4.0 * g + 4.0 * (g * (g - 1.0)).sqrt()))
}

/// Diagnostic: the bound with an unscaled square-root term,
/// `1 / (1 − 4γ_s + sqrt(γ_s(γ_s − 1)))`. Not used for classification.
pub fn bound_unscaled_sqrt(gamma_s: AspectRatio) -> Result<f64> {
    let g = gamma_s.get();
    if g < 1.0 {
        return Err(Error::domain(format!("needs gamma_s >= 1, got {g}")));
    }
    Ok(1.0 / (1.0 - 4.0 * g + (g * (g - 1.0)).sqrt()))
}

/// Diagnostic: the other root of the radicand in `c`,
/// `1 / (1 − 4γ_s − 4 sqrt(γ_s² − γ_s))`. Not used for classification.
pub fn bound_conjugate_root(gamma_s: AspectRatio) -> Result<f64> {
    let g = gamma_s.get();
    if g < 1.0 {
        return Err(Error::domain(format!("needs gamma_s >= 1, got {g}")));
    }
    Ok(1.0 / (1.0 - 4.0 * g - 4.0 * (g * g - g).sqrt()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Regime {
    TeacherOverRegularized,
    UnderParamImproves,
    OverParamImproves,
    OverParamNeverImproves,
}

impl Regime {
    pub fn improves(self) -> bool {
        matches!(self, Regime::UnderParamImproves | Regime::OverParamImproves)
    }
}

/// Where a teacher point sits in the phase diagram, and for which `λ_s` a
/// ridge student beats it.
///
/// `UnderParamImproves`: the student wins for `0 < λ_s < lambda_bar`.
/// `OverParamImproves`: the student wins for `lambda_minus < λ_s < lambda_plus`.
/// Infinite endpoints are written as the string `"inf"`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhaseClassification {
    pub regime: Regime,
    #[serde(with = "opt_extended_f64", default)]
    pub lambda_bar: Option<f64>,
    #[serde(with = "opt_extended_f64", default)]
    pub lambda_minus: Option<f64>,
    #[serde(with = "opt_extended_f64", default)]
    pub lambda_plus: Option<f64>,
    pub c_value: f64,
}

impl PhaseClassification {
    /// Whether `λ_s` lies strictly inside the improvement set.
    pub fn contains(&self, lambda_s: f64) -> bool {
        match self.regime {
            Regime::UnderParamImproves => {
                lambda_s > 0.0 && lambda_s < self.lambda_bar.unwrap_or(0.0)
            }
            Regime::OverParamImproves => {
                lambda_s > self.lambda_minus.unwrap_or(f64::INFINITY)
                    && lambda_s < self.lambda_plus.unwrap_or(0.0)
            }
            _ => false,
        }
    }
}

pub(crate) mod opt_extended_f64 {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Text(String),
    }

    pub fn serialize<S: Serializer>(v: &Option<f64>, s: S) -> Result<S::Ok, S::Error> {
        match v {
            None => s.serialize_none(),
            Some(x) if *x == f64::INFINITY => s.serialize_some("inf"),
            Some(x) => s.serialize_some(x),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<f64>, D::Error> {
        match Option::<Repr>::deserialize(d)? {
            None => Ok(None),
            Some(Repr::Num(x)) => Ok(Some(x)),
            Some(Repr::Text(t)) if t == "inf" => Ok(Some(f64::INFINITY)),
            Some(Repr::Text(t)) => Err(serde::de::Error::custom(format!(
                "expected number or \"inf\", got {t:?}"
            ))),
        }
    }
}

/// Classifies a teacher point using `c = H₂(λ_t)`: the ridge student beats
/// the teacher exactly where `H₁(λ_s) > c`.
pub fn classify_phase(
    lambda_t: f64,
    gamma_t: AspectRatio,
    gamma_s: AspectRatio,
    sigma_eps: f64,
) -> Result<PhaseClassification> {
    if !(lambda_t.is_finite() && lambda_t > 0.0) {
        return Err(Error::domain(format!(
            "lambda_t must be positive and finite, got {lambda_t}"
        )));
    }
    let c = h2(lambda_t, gamma_t, sigma_eps)?;
    let under = gamma_s.get() < 1.0;
    let base = PhaseClassification {
        regime: Regime::TeacherOverRegularized,
        lambda_bar: None,
        lambda_minus: None,
        lambda_plus: None,
        c_value: c,
    };
    if c >= 0.0 {
        return Ok(base);
    }
    let improves_under = |bar: f64| PhaseClassification {
        regime: Regime::UnderParamImproves,
        lambda_bar: Some(bar),
        ..base
    };
    let improves_over = |lo: f64, hi: f64| PhaseClassification {
        regime: Regime::OverParamImproves,
        lambda_minus: Some(lo),
        lambda_plus: Some(hi),
        ..base
    };
    if c <= -1.0 {
        // H₁ > −1 on (0, ∞), so every positive λ_s improves.
        return Ok(if under {
            improves_under(f64::INFINITY)
        } else {
            improves_over(0.0, f64::INFINITY)
        });
    }
    let roots = lambda_s_roots(c, gamma_s)?;
    if under {
        return match roots.first() {
            Some(&r) => Ok(improves_under(r)),
            None => Err(Error::domain(format!(
                "no validated root of H1 = {c} for gamma_s = {}",
                gamma_s.get()
            ))),
        };
    }
    Ok(match roots.as_slice() {
        [lo, hi] => improves_over(*lo, *hi),
        [r] if gamma_s.get() == 1.0 => improves_over(0.0, *r),
        _ => PhaseClassification {
            regime: Regime::OverParamNeverImproves,
            ..base
        },
    })
}

/// `λ_s` values where `Δ − ζ²Δ_Γ` changes sign, for one `λ_t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Crossing {
    pub lambda_t: f64,
    pub lambda_s: Vec<f64>,
}

pub const CROSSING_SCAN_POINTS: usize = 400;
pub const CROSSING_SCAN_RANGE: (f64, f64) = (1e-6, 1e3);

/// Log-spaced grid of `points` values over `[lo, hi]`.
pub fn log_grid(lo: f64, hi: f64, points: usize) -> Vec<f64> {
    match points {
        0 => Vec::new(),
        1 => vec![lo],
        _ => {
            let (a, b) = (lo.ln(), hi.ln());
            (0..points)
                .map(|i| {
                    if i == 0 {
                        lo
                    } else if i + 1 == points {
                        hi
                    } else {
                        (a + (b - a) * i as f64 / (points - 1) as f64).exp()
                    }
                })
                .collect()
        }
    }
}

/// Bisection for a sign change of `f` on `[lo, hi]`.
pub(crate) fn bisect(mut lo: f64, mut hi: f64, f: impl Fn(f64) -> f64) -> f64 {
    let mut f_lo = f(lo);
    for _ in 0..300 {
        let mid = 0.5 * (lo + hi);
        if hi - lo <= 1e-8_f64.min(1e-12 * hi) || mid <= lo || mid >= hi {
            break;
        }
        let f_mid = f(mid);
        if f_mid == 0.0 {
            return mid;
        }
        if (f_mid < 0.0) == (f_lo < 0.0) {
            lo = mid;
            f_lo = f_mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Zero level set of the weighted gap in the `(λ_t, λ_s)` plane: for each
/// `λ_t`, sign changes on a 400-point log scan of `λ_s ∈ [1e-6, 1e3]`,
/// refined by bisection.
pub fn crossing_curve(
    lambda_t_grid: &[f64],
    gamma_t: AspectRatio,
    gamma_s: AspectRatio,
    sigma_eps: f64,
    zeta: f64,
) -> Result<Vec<Crossing>> {
    let scan = log_grid(
        CROSSING_SCAN_RANGE.0,
        CROSSING_SCAN_RANGE.1,
        CROSSING_SCAN_POINTS,
    );
    let mut out = Vec::with_capacity(lambda_t_grid.len());
    for &lambda_t in lambda_t_grid {
        if !(lambda_t.is_finite() && lambda_t > 0.0) {
            return Err(Error::domain(format!(
                "lambda_t must be positive, got {lambda_t}"
            )));
        }
        let gap = |lambda_s: f64| {
            risk_gap_weighted(&LinearProblemParams {
                gamma_t,
                gamma_s,
                sigma_eps,
                lambda_t,
                lambda_s,
                zeta,
            })
        };
        let values = scan.iter().map(|&l| gap(l)).collect::<Result<Vec<_>>>()?;
        let mut roots = Vec::new();
        for i in 0..scan.len() {
            if values[i] == 0.0 {
                roots.push(scan[i]);
                continue;
            }
            if i + 1 < scan.len()
                && values[i + 1] != 0.0
                && (values[i] < 0.0) != (values[i + 1] < 0.0)
            {
                roots.push(bisect(scan[i], scan[i + 1], |l| gap(l).unwrap_or(f64::NAN)));
            }
        }
        out.push(Crossing {
            lambda_t,
            lambda_s: roots,
        });
    }
    Ok(out)
}

/// How the teacher's `λ_t` is chosen along a `γ_t` sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum LambdaTRule {
    /// `λ_t = epsilon`, a stand-in for the ridgeless limit.
    Ridgeless {
        epsilon: f64,
    },
    /// `λ_t = σ²γ_t`.
    Optimal,
    /// `λ_t = κ σ²γ_t`.
    ScaledOptimal {
        kappa: f64,
    },
    Fixed {
        lambda_t: f64,
    },
}

impl LambdaTRule {
    pub fn lambda_t(&self, gamma_t: AspectRatio, sigma_eps: f64) -> f64 {
        match *self {
            LambdaTRule::Ridgeless { epsilon } => epsilon,
            LambdaTRule::Optimal => optimal_teacher_lambda(sigma_eps, gamma_t),
            LambdaTRule::ScaledOptimal { kappa } => {
                kappa * optimal_teacher_lambda(sigma_eps, gamma_t)
            }
            LambdaTRule::Fixed { lambda_t } => lambda_t,
        }
    }
}

/// `(γ_t, 𝓛_s)` along a sweep of the teacher's aspect ratio.
pub fn student_risk_curve(
    gamma_t_grid: &[f64],
    rule: LambdaTRule,
    lambda_s: f64,
    gamma_s: AspectRatio,
    sigma_eps: f64,
) -> Result<Vec<(f64, f64)>> {
    gamma_t_grid
        .iter()
        .map(|&g| {
            let gamma_t = AspectRatio::new(g)?;
            let params = LinearProblemParams {
                gamma_t,
                gamma_s,
                sigma_eps,
                lambda_t: rule.lambda_t(gamma_t, sigma_eps),
                lambda_s,
                zeta: 0.0,
            };
            Ok((g, predict(&params)?.loss_student))
        })
        .collect()
}
