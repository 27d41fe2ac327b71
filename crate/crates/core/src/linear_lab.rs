//! Finite-dimensional teacher/student ridge simulations.

use faer::{Col, Mat};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, SpdSystem};
use crate::seeding::{derive, stream_rng, Stream};

/// Design matrix (rows are samples) with its labels.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub features: Mat<f64>,
    pub labels: Col<f64>,
}

impl Dataset {
    pub fn new(features: Mat<f64>, labels: Col<f64>) -> Result<Self> {
        if features.nrows() != labels.nrows() {
            return Err(Error::DimensionMismatch {
                expected: features.nrows(),
                actual: labels.nrows(),
            });
        }
        Ok(Dataset { features, labels })
    }

    pub fn n(&self) -> usize {
        self.features.nrows()
    }

    pub fn d(&self) -> usize {
        self.features.ncols()
    }

    /// `Xᵀy / n`.
    pub fn moment(&self) -> Col<f64> {
        let mut v = linalg::mat_t_vec(self.features.as_ref(), self.labels.as_ref());
        let n = self.n() as f64;
        for i in 0..v.nrows() {
            v[i] /= n;
        }
        v
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    pub coefficients: Col<f64>,
}

impl LinearModel {
    pub fn new(coefficients: Col<f64>) -> Self {
        LinearModel { coefficients }
    }

    pub fn zeros(d: usize) -> Self {
        LinearModel::new(Col::zeros(d))
    }

    pub fn dim(&self) -> usize {
        self.coefficients.nrows()
    }

    pub fn norm(&self) -> f64 {
        linalg::norm(self.coefficients.as_ref())
    }
}

/// `β⋆` with i.i.d. `N(0, 1/d)` entries.
pub fn sample_target(d: usize, seed: u64) -> Result<LinearModel> {
    if d == 0 {
        return Err(Error::domain("d must be positive"));
    }
    let scale = 1.0 / (d as f64).sqrt();
    Ok(LinearModel::new(linalg::gaussian_col(
        &mut stream_rng(seed, Stream::Target),
        d,
        scale,
    )))
}

fn standard_features(n: usize, d: usize, seed: u64) -> Mat<f64> {
    linalg::gaussian_matrix(&mut stream_rng(seed, Stream::Features), n, d, 1.0)
}

/// `n` samples `x ~ N(0, I)`, `y = β⋆ᵀx + σε`.
pub fn sample_dataset(
    beta_star: &LinearModel,
    n: usize,
    sigma_eps: f64,
    seed: u64,
) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::domain("n must be positive"));
    }
    if !(sigma_eps.is_finite() && sigma_eps >= 0.0) {
        return Err(Error::domain(format!(
            "sigma_eps must be nonnegative, got {sigma_eps}"
        )));
    }
    let features = standard_features(n, beta_star.dim(), seed);
    let mut labels = linalg::mat_vec(features.as_ref(), beta_star.coefficients.as_ref());
    if sigma_eps > 0.0 {
        let noise = linalg::gaussian_col(&mut stream_rng(seed, Stream::Noise), n, sigma_eps);
        labels += noise;
    }
    Dataset::new(features, labels)
}

/// Noiseless labels `ỹ = Xβ̂`.
pub fn label_with(model: &LinearModel, features: Mat<f64>) -> Result<Dataset> {
    if features.ncols() != model.dim() {
        return Err(Error::DimensionMismatch {
            expected: model.dim(),
            actual: features.ncols(),
        });
    }
    let labels = linalg::mat_vec(features.as_ref(), model.coefficients.as_ref());
    Dataset::new(features, labels)
}

fn check_lambda(lambda: f64, allow_zero: bool) -> Result<()> {
    let ok = lambda.is_finite() && (lambda > 0.0 || (allow_zero && lambda == 0.0));
    if ok {
        Ok(())
    } else {
        Err(Error::domain(format!("invalid regularization {lambda}")))
    }
}

/// Ridge estimate `(XᵀX/n + λI)⁻¹ Xᵀy/n`. `λ = 0` needs `XᵀX` of full rank.
pub fn fit_ridge(data: &Dataset, lambda: f64) -> Result<LinearModel> {
    check_lambda(lambda, true)?;
    if lambda == 0.0 && data.n() < data.d() {
        return Err(Error::SingularSystem(format!(
            "unregularized fit with n={} < d={}",
            data.n(),
            data.d()
        )));
    }
    let cov = linalg::gram(data.features.as_ref());
    let system = SpdSystem::new(linalg::shifted(cov.as_ref(), lambda))?;
    Ok(LinearModel::new(system.solve_col(data.moment().as_ref())?))
}

/// Spike of a weighted-ridge penalty `Γ = I + scale · bbᵀ`, `‖b‖ = 1`.
#[derive(Debug, Clone)]
pub struct SpikedGamma {
    pub spike_direction: Col<f64>,
    pub achieved_zeta: f64,
    /// Coefficient of the rank-one term; `d` unless overridden.
    pub scale: f64,
}

impl SpikedGamma {
    /// Same direction with a different spike coefficient (`0` gives `Γ = I`).
    pub fn with_scale(mut self, scale: f64) -> Self {
        self.scale = scale;
        self
    }
}

/// Spike `b = ζu + sqrt(1−ζ²)v`, `u = β⋆/‖β⋆‖`, `v` a random unit vector
/// orthogonal to `u`.
pub fn make_spiked_gamma(beta_star: &LinearModel, zeta: f64, seed: u64) -> Result<SpikedGamma> {
    if !(0.0..=1.0).contains(&zeta) {
        return Err(Error::domain(format!(
            "zeta must lie in [0, 1], got {zeta}"
        )));
    }
    let d = beta_star.dim();
    let norm = beta_star.norm();
    if norm == 0.0 {
        return Err(Error::domain("cannot build a spike against a zero target"));
    }
    let u = Col::<f64>::from_fn(d, |i| beta_star.coefficients[i] / norm);
    let mut v = linalg::gaussian_col(&mut stream_rng(seed, Stream::SpikeComplement), d, 1.0);
    if d > 1 {
        for _ in 0..2 {
            let proj = linalg::dot(u.as_ref(), v.as_ref());
            for i in 0..d {
                v[i] -= proj * u[i];
            }
        }
        let vn = linalg::norm(v.as_ref());
        for i in 0..d {
            v[i] /= vn;
        }
    } else if zeta < 1.0 {
        return Err(Error::domain("a spike with zeta < 1 needs d >= 2"));
    }
    let w = (1.0 - zeta * zeta).sqrt();
    let mut b = Col::<f64>::from_fn(d, |i| zeta * u[i] + if d > 1 { w * v[i] } else { 0.0 });
    let bn = linalg::norm(b.as_ref());
    for i in 0..d {
        b[i] /= bn;
    }
    let achieved_zeta = linalg::dot(b.as_ref(), u.as_ref()).abs();
    Ok(SpikedGamma {
        spike_direction: b,
        achieved_zeta,
        scale: d as f64,
    })
}

/// Which matrix multiplies `λ` in the weighted-ridge normal equations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PenaltyForm {
    /// `Σ̃ + λΓ⁻¹`.
    #[default]
    Resolvent,
    /// `Σ̃ + λΓ⁻²`, the stationarity condition of `‖y − Xβ‖²/n + λ‖Γ⁻¹β‖²`.
    SquaredInverse,
}

impl PenaltyForm {
    /// `c` in `Γ^{-k} = I − c bbᵀ`.
    fn rank_one_coefficient(self, scale: f64) -> f64 {
        match self {
            PenaltyForm::Resolvent => scale / (1.0 + scale),
            PenaltyForm::SquaredInverse => 1.0 - 1.0 / (1.0 + scale).powi(2),
        }
    }
}

/// `cov + λ(I − c bbᵀ)`.
fn penalized(cov: &Mat<f64>, lambda: f64, spike: Option<(&SpikedGamma, PenaltyForm)>) -> Mat<f64> {
    let mut m = linalg::shifted(cov.as_ref(), lambda);
    if let Some((g, form)) = spike {
        let c = lambda * form.rank_one_coefficient(g.scale);
        let b = &g.spike_direction;
        for j in 0..m.ncols() {
            for i in 0..m.nrows() {
                m[(i, j)] -= c * b[i] * b[j];
            }
        }
    }
    m
}

/// Weighted ridge `(Σ̃ + λΓ⁻¹)⁻¹ X̃ᵀỹ/n`.
pub fn fit_weighted_ridge(
    data: &Dataset,
    lambda: f64,
    gamma_spec: &SpikedGamma,
) -> Result<LinearModel> {
    fit_weighted_ridge_with(data, lambda, gamma_spec, PenaltyForm::Resolvent)
}

pub fn fit_weighted_ridge_with(
    data: &Dataset,
    lambda: f64,
    gamma_spec: &SpikedGamma,
    form: PenaltyForm,
) -> Result<LinearModel> {
    check_lambda(lambda, false)?;
    if gamma_spec.spike_direction.nrows() != data.d() {
        return Err(Error::DimensionMismatch {
            expected: data.d(),
            actual: gamma_spec.spike_direction.nrows(),
        });
    }
    let cov = linalg::gram(data.features.as_ref());
    let system = SpdSystem::new(penalized(&cov, lambda, Some((gamma_spec, form))))?;
    Ok(LinearModel::new(system.solve_col(data.moment().as_ref())?))
}

/// `σ² + ‖β̂ − β⋆‖²`, the population squared error of a linear predictor.
pub fn test_risk(model: &LinearModel, beta_star: &LinearModel, sigma_eps: f64) -> Result<f64> {
    if model.dim() != beta_star.dim() {
        return Err(Error::DimensionMismatch {
            expected: beta_star.dim(),
            actual: model.dim(),
        });
    }
    Ok(sigma_eps * sigma_eps
        + linalg::distance_squared(model.coefficients.as_ref(), beta_star.coefficients.as_ref()))
}

/// Sizes and noise of one teacher/student pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrialDesign {
    pub d: usize,
    pub n_t: usize,
    pub n_s: usize,
    pub sigma_eps: f64,
}

impl TrialDesign {
    pub fn validate(&self) -> Result<()> {
        if self.d == 0 || self.n_t == 0 || self.n_s == 0 {
            return Err(Error::domain(format!(
                "dimensions must be positive, got d={}, n_t={}, n_s={}",
                self.d, self.n_t, self.n_s
            )));
        }
        if !(self.sigma_eps.is_finite() && self.sigma_eps >= 0.0) {
            return Err(Error::domain(format!(
                "sigma_eps must be nonnegative, got {}",
                self.sigma_eps
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearTrialResult {
    pub loss_teacher_emp: f64,
    pub loss_student_emp: f64,
    pub seed: u64,
    pub dims: (usize, usize, usize),
}

/// Risks of one trial over a whole grid, sharing the trial's data.
#[derive(Debug, Clone, PartialEq)]
pub struct GridTrial {
    /// Indexed by `λ_t`.
    pub teacher: Vec<f64>,
    /// Indexed by `[student variant][λ_t][λ_s]`.
    pub student: Vec<Vec<Vec<f64>>>,
}

/// Runs the pipeline for every `(λ_t, λ_s, variant)` on one draw of
/// `(β⋆, X, ε, X̃, v)`.
///
/// A variant is `None` for a plain ridge student or `Some(ζ)` for a
/// weighted-ridge student whose spike has correlation `ζ` with `β⋆`.
/// Since `X̃ᵀỹ/n = Σ̃β̂_t`, each `λ_s` needs one factorization solved against
/// all teachers at once.
pub fn run_w2s_grid_trial(
    design: &TrialDesign,
    lambda_t: &[f64],
    lambda_s: &[f64],
    variants: &[Option<f64>],
    form: PenaltyForm,
    seed: u64,
) -> Result<GridTrial> {
    design.validate()?;
    for &l in lambda_t {
        check_lambda(l, true)?;
    }
    for &l in lambda_s {
        check_lambda(l, true)?;
    }
    let d = design.d;
    let beta_star = sample_target(d, derive(seed, Stream::Target))?;
    let teacher_data = sample_dataset(
        &beta_star,
        design.n_t,
        design.sigma_eps,
        derive(seed, Stream::TeacherData),
    )?;
    let cov_t = linalg::gram(teacher_data.features.as_ref());
    let moment_t = teacher_data.moment();
    drop(teacher_data);

    let mut teachers = Vec::with_capacity(lambda_t.len());
    let mut teacher_losses = Vec::with_capacity(lambda_t.len());
    for &lt in lambda_t {
        if lt == 0.0 && design.n_t < d {
            return Err(Error::SingularSystem(format!(
                "unregularized teacher with n_t={} < d={d}",
                design.n_t
            )));
        }
        let system = SpdSystem::new(linalg::shifted(cov_t.as_ref(), lt))?;
        let model = LinearModel::new(system.solve_col(moment_t.as_ref())?);
        teacher_losses.push(test_risk(&model, &beta_star, design.sigma_eps)?);
        teachers.push(model);
    }
    if variants.is_empty() || lambda_s.is_empty() {
        return Ok(GridTrial {
            teacher: teacher_losses,
            student: vec![vec![Vec::new(); lambda_t.len()]; variants.len()],
        });
    }

    let student_x = standard_features(design.n_s, d, derive(seed, Stream::StudentData));
    let cov_s = linalg::gram(student_x.as_ref());
    drop(student_x);
    let betas_t = Mat::<f64>::from_fn(d, teachers.len(), |i, j| teachers[j].coefficients[i]);
    let rhs = linalg::product(cov_s.as_ref(), betas_t.as_ref(), 1.0);

    let spike_seed = derive(seed, Stream::SpikeComplement);
    let mut student = Vec::with_capacity(variants.len());
    for variant in variants {
        let spike = match variant {
            Some(zeta) => Some(make_spiked_gamma(&beta_star, *zeta, spike_seed)?),
            None => None,
        };
        let mut by_teacher = vec![Vec::with_capacity(lambda_s.len()); teachers.len()];
        for &ls in lambda_s {
            if ls == 0.0 && (design.n_s < d || spike.is_some()) {
                return Err(Error::SingularSystem(format!(
                    "unregularized student needs n_s >= d and no spike (n_s={}, d={d})",
                    design.n_s
                )));
            }
            let system = SpdSystem::new(penalized(&cov_s, ls, spike.as_ref().map(|g| (g, form))))?;
            let solved = system.solve(rhs.as_ref())?;
            for (j, slot) in by_teacher.iter_mut().enumerate() {
                let err = linalg::distance_squared(solved.col(j), beta_star.coefficients.as_ref());
                slot.push(design.sigma_eps * design.sigma_eps + err);
            }
        }
        student.push(by_teacher);
    }
    Ok(GridTrial {
        teacher: teacher_losses,
        student,
    })
}

/// One teacher → synthetic labels → student pipeline. Plain ridge student
/// when `zeta` is `None`, spiked weighted ridge otherwise.
#[allow(clippy::too_many_arguments)]
pub fn run_w2s_trial(
    d: usize,
    n_t: usize,
    n_s: usize,
    lambda_t: f64,
    lambda_s: f64,
    sigma_eps: f64,
    zeta: Option<f64>,
    seed: u64,
) -> Result<LinearTrialResult> {
    let design = TrialDesign {
        d,
        n_t,
        n_s,
        sigma_eps,
    };
    let grid = run_w2s_grid_trial(
        &design,
        &[lambda_t],
        &[lambda_s],
        &[zeta],
        PenaltyForm::Resolvent,
        seed,
    )?;
    Ok(LinearTrialResult {
        loss_teacher_emp: grid.teacher[0],
        loss_student_emp: grid.student[0][0][0],
        seed,
        dims: (d, n_t, n_s),
    })
}

/// The same pipeline written out leg by leg with the public building blocks.
/// Slower than [`run_w2s_trial`]; kept as a reference implementation.
#[allow(clippy::too_many_arguments)]
pub fn run_w2s_trial_reference(
    d: usize,
    n_t: usize,
    n_s: usize,
    lambda_t: f64,
    lambda_s: f64,
    sigma_eps: f64,
    zeta: Option<f64>,
    seed: u64,
) -> Result<LinearTrialResult> {
    let beta_star = sample_target(d, derive(seed, Stream::Target))?;
    let teacher_data = sample_dataset(
        &beta_star,
        n_t,
        sigma_eps,
        derive(seed, Stream::TeacherData),
    )?;
    let teacher = fit_ridge(&teacher_data, lambda_t)?;
    let x_tilde = standard_features(n_s, d, derive(seed, Stream::StudentData));
    let synthetic = label_with(&teacher, x_tilde)?;
    let student = match zeta {
        None => fit_ridge(&synthetic, lambda_s)?,
        Some(z) => {
            let spike = make_spiked_gamma(&beta_star, z, derive(seed, Stream::SpikeComplement))?;
            fit_weighted_ridge(&synthetic, lambda_s, &spike)?
        }
    };
    Ok(LinearTrialResult {
        loss_teacher_emp: test_risk(&teacher, &beta_star, sigma_eps)?,
        loss_student_emp: test_risk(&student, &beta_star, sigma_eps)?,
        seed,
        dims: (d, n_t, n_s),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_computed_ridge() {
        let x = Mat::from_fn(2, 2, |i, j| if i == j { 1.0 } else { 0.0 });
        let y = Col::from_fn(2, |i| (i + 1) as f64);
        let model = fit_ridge(&Dataset::new(x, y).unwrap(), 0.5).unwrap();
        assert!((model.coefficients[0] - 0.5).abs() < 1e-15);
        assert!((model.coefficients[1] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn hand_computed_weighted_ridge() {
        // Σ̃ = I/2, Xᵀy/n = [0.5, 1], b = e₁, d = 2: Γ⁻¹ = diag(1/3, 1).
        let x = Mat::from_fn(2, 2, |i, j| if i == j { 1.0 } else { 0.0 });
        let y = Col::from_fn(2, |i| (i + 1) as f64);
        let data = Dataset::new(x, y).unwrap();
        let spike = SpikedGamma {
            spike_direction: Col::from_fn(2, |i| if i == 0 { 1.0 } else { 0.0 }),
            achieved_zeta: 1.0,
            scale: 2.0,
        };
        let model = fit_weighted_ridge(&data, 0.5, &spike).unwrap();
        assert!((model.coefficients[0] - 0.5 / (0.5 + 0.5 / 3.0)).abs() < 1e-14);
        assert!((model.coefficients[1] - 1.0).abs() < 1e-14);
        // Γ⁻² = diag(1/9, 1).
        let model =
            fit_weighted_ridge_with(&data, 0.5, &spike, PenaltyForm::SquaredInverse).unwrap();
        assert!((model.coefficients[0] - 0.5 / (0.5 + 0.5 / 9.0)).abs() < 1e-14);
    }

    #[test]
    fn rank_deficient_unregularized_fit_fails() {
        let beta = sample_target(10, 1).unwrap();
        let data = sample_dataset(&beta, 5, 0.1, 2).unwrap();
        assert!(matches!(
            fit_ridge(&data, 0.0),
            Err(Error::SingularSystem(_))
        ));
    }

    #[test]
    fn label_with_checks_dimensions() {
        let model = LinearModel::zeros(3);
        assert!(label_with(&model, Mat::zeros(4, 2)).is_err());
        let data = label_with(&model, Mat::from_fn(4, 3, |i, j| (i + j) as f64)).unwrap();
        assert!((0..4).all(|i| data.labels[i] == 0.0));
    }

    #[test]
    fn test_risk_closed_form_cases() {
        let beta = sample_target(20, 4).unwrap();
        assert_eq!(test_risk(&beta, &beta, 0.7).unwrap(), 0.7 * 0.7);
        let zero = LinearModel::zeros(20);
        let want = 0.49 + beta.norm().powi(2);
        assert!((test_risk(&zero, &beta, 0.7).unwrap() - want).abs() < 1e-14);
    }

    #[test]
    fn grid_path_matches_reference_pipeline() {
        for zeta in [None, Some(0.7)] {
            let fast = run_w2s_trial(30, 80, 50, 0.2, 0.3, 0.5, zeta, 9).unwrap();
            let slow = run_w2s_trial_reference(30, 80, 50, 0.2, 0.3, 0.5, zeta, 9).unwrap();
            assert!((fast.loss_teacher_emp - slow.loss_teacher_emp).abs() < 1e-12);
            assert!((fast.loss_student_emp - slow.loss_student_emp).abs() < 1e-10);
        }
    }
}
