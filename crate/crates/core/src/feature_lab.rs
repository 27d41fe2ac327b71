//! One-step gradient feature learning in two-layer networks on a two-index
//! target, for a teacher and for a student trained on the teacher's labels.

use faer::{Col, ColRef, Mat, MatRef};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hermite::{information_exponent, LinkFunction};
use crate::linalg;
use crate::linear_lab::Dataset;
use crate::seeding::{derive, stream_rng, Stream};

/// Unit-norm tolerance for direction vectors passed to [`alignment`].
pub const DIRECTION_TOLERANCE: f64 = 1e-9;
const ORTHONORMAL_TOLERANCE: f64 = 1e-12;
const EXPONENT_TOLERANCE: f64 = 1e-8;
const EXPONENT_MAX_DEGREE: usize = 30;

/// `y = σ_e(xᵀβ_e) + σ_h(xᵀβ_h)` with orthonormal `β_e, β_h`.
#[derive(Debug, Clone)]
pub struct MultiIndexTarget {
    pub beta_e: Col<f64>,
    pub beta_h: Col<f64>,
    pub link_e: LinkFunction,
    pub link_h: LinkFunction,
}

impl MultiIndexTarget {
    /// Checks orthonormality and that the easy link has information exponent
    /// one and the hard link a larger one.
    pub fn new(
        beta_e: Col<f64>,
        beta_h: Col<f64>,
        link_e: LinkFunction,
        link_h: LinkFunction,
    ) -> Result<Self> {
        let target = Self::new_unchecked_links(beta_e, beta_h, link_e, link_h)?;
        let ke = information_exponent(&target.link_e, EXPONENT_MAX_DEGREE, EXPONENT_TOLERANCE)?;
        if ke != 1 {
            return Err(Error::domain(format!(
                "easy link {} has information exponent {ke}, expected 1",
                target.link_e.name
            )));
        }
        let kh = information_exponent(&target.link_h, EXPONENT_MAX_DEGREE, EXPONENT_TOLERANCE)?;
        if kh <= 1 {
            return Err(Error::domain(format!(
                "hard link {} has information exponent {kh}, expected > 1",
                target.link_h.name
            )));
        }
        Ok(target)
    }

    /// Orthonormality checks only; any links.
    pub fn new_unchecked_links(
        beta_e: Col<f64>,
        beta_h: Col<f64>,
        link_e: LinkFunction,
        link_h: LinkFunction,
    ) -> Result<Self> {
        if beta_e.nrows() != beta_h.nrows() {
            return Err(Error::DimensionMismatch {
                expected: beta_e.nrows(),
                actual: beta_h.nrows(),
            });
        }
        let ne = linalg::norm(beta_e.as_ref());
        let nh = linalg::norm(beta_h.as_ref());
        let cross = linalg::dot(beta_e.as_ref(), beta_h.as_ref());
        if (ne - 1.0).abs() > ORTHONORMAL_TOLERANCE
            || (nh - 1.0).abs() > ORTHONORMAL_TOLERANCE
            || cross.abs() > ORTHONORMAL_TOLERANCE
        {
            return Err(Error::domain(format!(
                "directions must be orthonormal: |b_e|={ne}, |b_h|={nh}, b_e.b_h={cross:e}"
            )));
        }
        Ok(MultiIndexTarget {
            beta_e,
            beta_h,
            link_e,
            link_h,
        })
    }

    /// Random orthonormal directions in `R^d`.
    pub fn random(d: usize, link_e: LinkFunction, link_h: LinkFunction, seed: u64) -> Result<Self> {
        let (beta_e, beta_h) = random_orthonormal_pair(d, seed)?;
        Self::new(beta_e, beta_h, link_e, link_h)
    }

    pub fn dim(&self) -> usize {
        self.beta_e.nrows()
    }
}

fn unit(mut v: Col<f64>) -> Col<f64> {
    let n = linalg::norm(v.as_ref());
    for i in 0..v.nrows() {
        v[i] /= n;
    }
    v
}

fn random_orthonormal_pair(d: usize, seed: u64) -> Result<(Col<f64>, Col<f64>)> {
    if d < 2 {
        return Err(Error::domain("two orthonormal directions need d >= 2"));
    }
    let mut rng = stream_rng(seed, Stream::Directions);
    let e = unit(linalg::gaussian_col(&mut rng, d, 1.0));
    let mut h = linalg::gaussian_col(&mut rng, d, 1.0);
    for _ in 0..2 {
        let proj = linalg::dot(e.as_ref(), h.as_ref());
        for i in 0..d {
            h[i] -= proj * e[i];
        }
    }
    Ok((e, unit(h)))
}

/// Samples `x ~ N(0, I_d)` and the target's labels.
pub fn sample_multi_index(target: &MultiIndexTarget, n: usize, seed: u64) -> Result<Dataset> {
    let features = linalg::gaussian_matrix(
        &mut stream_rng(seed, Stream::Features),
        n,
        target.dim(),
        1.0,
    );
    let pe = linalg::mat_vec(features.as_ref(), target.beta_e.as_ref());
    let ph = linalg::mat_vec(features.as_ref(), target.beta_h.as_ref());
    let labels = Col::from_fn(n, |i| target.link_e.eval(pe[i]) + target.link_h.eval(ph[i]));
    Dataset::new(features, labels)
}

/// `f(x) = aᵀσ(Wx)` with `W` of shape `p × d`.
#[derive(Debug, Clone)]
pub struct TwoLayerNet {
    pub first_layer: Mat<f64>,
    pub second_layer: Col<f64>,
    pub activation: LinkFunction,
}

/// Admissible range of `‖a‖₂` at construction.
pub const SECOND_LAYER_NORM_RANGE: (f64, f64) = (0.1, 10.0);

impl TwoLayerNet {
    pub fn new(
        first_layer: Mat<f64>,
        second_layer: Col<f64>,
        activation: LinkFunction,
    ) -> Result<Self> {
        let net = Self::new_unchecked(first_layer, second_layer, activation)?;
        let a = linalg::norm(net.second_layer.as_ref());
        let (lo, hi) = SECOND_LAYER_NORM_RANGE;
        if !(lo..=hi).contains(&a) {
            return Err(Error::domain(format!(
                "second-layer norm {a} outside [{lo}, {hi}]"
            )));
        }
        Ok(net)
    }

    /// Shape and finiteness checks only.
    pub fn new_unchecked(
        first_layer: Mat<f64>,
        second_layer: Col<f64>,
        activation: LinkFunction,
    ) -> Result<Self> {
        if first_layer.nrows() != second_layer.nrows() {
            return Err(Error::DimensionMismatch {
                expected: first_layer.nrows(),
                actual: second_layer.nrows(),
            });
        }
        let finite = (0..first_layer.ncols())
            .all(|j| (0..first_layer.nrows()).all(|i| first_layer[(i, j)].is_finite()))
            && (0..second_layer.nrows()).all(|i| second_layer[i].is_finite());
        if !finite {
            return Err(Error::domain("network weights must be finite"));
        }
        Ok(TwoLayerNet {
            first_layer,
            second_layer,
            activation,
        })
    }

    pub fn width(&self) -> usize {
        self.first_layer.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.first_layer.ncols()
    }

    fn check_input(&self, features: MatRef<'_, f64>) -> Result<()> {
        if features.ncols() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim(),
                actual: features.ncols(),
            });
        }
        Ok(())
    }

    /// `X Wᵀ`, shape `n × p`.
    fn preactivations(&self, features: MatRef<'_, f64>) -> Mat<f64> {
        linalg::product(features, self.first_layer.transpose(), 1.0)
    }

    /// Outputs on every row of `features`.
    pub fn predict(&self, features: MatRef<'_, f64>) -> Result<Col<f64>> {
        self.check_input(features)?;
        let pre = self.preactivations(features);
        let a = &self.second_layer;
        Ok(Col::from_fn(pre.nrows(), |i| {
            (0..pre.ncols())
                .map(|j| a[j] * self.activation.eval(pre[(i, j)]))
                .sum()
        }))
    }
}

/// `−(1/n) Σ yᵢ f(xᵢ)`.
pub fn correlation_loss(net: &TwoLayerNet, data: &Dataset) -> Result<f64> {
    let out = net.predict(data.features.as_ref())?;
    let n = data.n() as f64;
    Ok(-linalg::dot(out.as_ref(), data.labels.as_ref()) / n)
}

/// `∇_W = −(1/n) [(a yᵀ) ⊙ σ′(W Xᵀ)] X`, shape `p × d`.
pub fn correlation_loss_gradient(net: &TwoLayerNet, data: &Dataset) -> Result<Mat<f64>> {
    net.check_input(data.features.as_ref())?;
    let dsigma = net.activation.derivative().ok_or_else(|| {
        Error::domain(format!(
            "activation {} has no derivative",
            net.activation.name
        ))
    })?;
    let pre = net.preactivations(data.features.as_ref());
    let a = &net.second_layer;
    let y = &data.labels;
    // Weighted σ′ in n × p layout: M_ij = y_i a_j σ′(w_j·x_i).
    let m = Mat::<f64>::from_fn(pre.nrows(), pre.ncols(), |i, j| {
        y[i] * a[j] * dsigma(pre[(i, j)])
    });
    let n = data.n() as f64;
    Ok(linalg::product(
        m.transpose(),
        data.features.as_ref(),
        -1.0 / n,
    ))
}

/// `W ← W − η∇_W`; the second layer is unchanged.
pub fn one_step_update(net: &TwoLayerNet, data: &Dataset, eta: f64) -> Result<TwoLayerNet> {
    if !eta.is_finite() {
        return Err(Error::domain(format!("eta must be finite, got {eta}")));
    }
    let grad = correlation_loss_gradient(net, data)?;
    let w = &net.first_layer;
    let updated = Mat::from_fn(w.nrows(), w.ncols(), |i, j| w[(i, j)] - eta * grad[(i, j)]);
    Ok(TwoLayerNet {
        first_layer: updated,
        second_layer: net.second_layer.clone(),
        activation: net.activation.clone(),
    })
}

fn bulk_first_layer(p: usize, d: usize, seed: u64) -> Mat<f64> {
    linalg::gaussian_matrix(
        &mut stream_rng(seed, Stream::FirstLayer),
        p,
        d,
        1.0 / (d as f64).sqrt(),
    )
}

fn sign_second_layer(p: usize, seed: u64, norm: f64) -> Col<f64> {
    let mut rng = stream_rng(seed, Stream::SecondLayer);
    let mag = norm / (p as f64).sqrt();
    Col::from_fn(p, |_| if rng.random::<bool>() { mag } else { -mag })
}

fn check_shape(p: usize, d: usize) -> Result<()> {
    if p == 0 || d == 0 {
        return Err(Error::domain(format!(
            "network shape must be positive, got p={p}, d={d}"
        )));
    }
    Ok(())
}

/// `W` with i.i.d. `N(0, 1/d)` entries and `a` of random signs with
/// `‖a‖₂ = a_scale`; tanh activation.
pub fn init_teacher(p: usize, d: usize, a_scale: f64, seed: u64) -> Result<TwoLayerNet> {
    check_shape(p, d)?;
    TwoLayerNet::new(
        bulk_first_layer(p, d, seed),
        sign_second_layer(p, seed, a_scale),
        LinkFunction::tanh(),
    )
}

/// `W = W̄ + τ ā β_hᵀ` with `W̄` drawn exactly as in [`init_teacher`], `ā` a
/// random unit vector and `a` of random signs `±1/√p`.
pub fn init_student(
    p: usize,
    d: usize,
    tau: f64,
    beta_h: ColRef<'_, f64>,
    seed: u64,
) -> Result<TwoLayerNet> {
    check_shape(p, d)?;
    if !(tau.is_finite() && tau >= 0.0) {
        return Err(Error::domain(format!("tau must be nonnegative, got {tau}")));
    }
    if beta_h.nrows() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            actual: beta_h.nrows(),
        });
    }
    let mut w = bulk_first_layer(p, d, seed);
    if tau > 0.0 {
        let a_bar = unit(linalg::gaussian_col(
            &mut stream_rng(seed, Stream::SpikeVector),
            p,
            1.0,
        ));
        for j in 0..d {
            for i in 0..p {
                w[(i, j)] += tau * a_bar[i] * beta_h[j];
            }
        }
    }
    TwoLayerNet::new(w, sign_second_layer(p, seed, 1.0), LinkFunction::tanh())
}

/// `‖W b‖₂` for a unit vector `b`.
pub fn alignment(first_layer: MatRef<'_, f64>, direction: ColRef<'_, f64>) -> Result<f64> {
    if direction.nrows() != first_layer.ncols() {
        return Err(Error::DimensionMismatch {
            expected: first_layer.ncols(),
            actual: direction.nrows(),
        });
    }
    let norm = linalg::norm(direction);
    if (norm - 1.0).abs() > DIRECTION_TOLERANCE {
        return Err(Error::domain(format!(
            "direction must be unit norm, got norm {norm}"
        )));
    }
    Ok(linalg::norm(
        linalg::mat_vec(first_layer, direction).as_ref(),
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlignmentReport {
    pub align_e_before: f64,
    pub align_e_after: f64,
    pub align_h_before: f64,
    pub align_h_after: f64,
    /// `(d, p, n)`.
    pub dims: (usize, usize, usize),
    pub eta: f64,
    pub tau: f64,
}

impl AlignmentReport {
    pub fn easy_gain(&self) -> f64 {
        self.align_e_after - self.align_e_before
    }

    pub fn hard_gain(&self) -> f64 {
        self.align_h_after - self.align_h_before
    }

    fn measure(
        before: &TwoLayerNet,
        after: &TwoLayerNet,
        target: &MultiIndexTarget,
        n: usize,
        eta: f64,
        tau: f64,
    ) -> Result<Self> {
        Ok(AlignmentReport {
            align_e_before: alignment(before.first_layer.as_ref(), target.beta_e.as_ref())?,
            align_e_after: alignment(after.first_layer.as_ref(), target.beta_e.as_ref())?,
            align_h_before: alignment(before.first_layer.as_ref(), target.beta_h.as_ref())?,
            align_h_after: alignment(after.first_layer.as_ref(), target.beta_h.as_ref())?,
            dims: (target.dim(), before.width(), n),
            eta,
            tau,
        })
    }
}

/// Parameters of one teacher → student feature-transfer run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureTransferConfig {
    pub d: usize,
    pub p_t: usize,
    pub p_s: usize,
    pub n_t: usize,
    pub n_s: usize,
    pub eta_t: f64,
    pub eta_s: f64,
    pub tau: f64,
    /// `‖a_t‖₂`.
    pub teacher_a_scale: f64,
    pub link_e: String,
    pub link_h: String,
}

impl FeatureTransferConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("d", self.d),
            ("p_t", self.p_t),
            ("p_s", self.p_s),
            ("n_t", self.n_t),
            ("n_s", self.n_s),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if self.d < 2 {
            return Err(Error::Config("d must be at least 2".into()));
        }
        for (name, v) in [("eta_t", self.eta_t), ("eta_s", self.eta_s)] {
            if !v.is_finite() {
                return Err(Error::Config(format!("{name} must be finite")));
            }
        }
        let tau_max = (self.d as f64).sqrt() / 4.0;
        if !(self.tau.is_finite() && self.tau >= 0.0 && self.tau <= tau_max) {
            return Err(Error::Config(format!(
                "tau must lie in [0, sqrt(d)/4] = [0, {tau_max}], got {}",
                self.tau
            )));
        }
        let (lo, hi) = SECOND_LAYER_NORM_RANGE;
        if !(lo..=hi).contains(&self.teacher_a_scale) {
            return Err(Error::Config(format!(
                "teacher_a_scale must lie in [{lo}, {hi}], got {}",
                self.teacher_a_scale
            )));
        }
        Ok(())
    }
}

/// Everything produced by one feature-transfer run.
#[derive(Debug, Clone)]
pub struct FeatureTransferTrace {
    pub target: MultiIndexTarget,
    pub teacher_initial: TwoLayerNet,
    pub teacher_updated: TwoLayerNet,
    /// The network whose outputs became the student's labels.
    pub labeler: TwoLayerNet,
    pub student_initial: TwoLayerNet,
    pub student_updated: TwoLayerNet,
    pub teacher: AlignmentReport,
    pub student: AlignmentReport,
}

/// Teacher: one step on true labels. Student: spiked initialization, one
/// step on the updated teacher's outputs at fresh inputs.
pub fn run_feature_transfer_traced(
    config: &FeatureTransferConfig,
    seed: u64,
) -> Result<FeatureTransferTrace> {
    config.validate()?;
    let link_e = LinkFunction::by_name(&config.link_e)?;
    let link_h = LinkFunction::by_name(&config.link_h)?;
    let target =
        MultiIndexTarget::random(config.d, link_e, link_h, derive(seed, Stream::Directions))?;

    let teacher_data = sample_multi_index(&target, config.n_t, derive(seed, Stream::TeacherData))?;
    let teacher_initial = init_teacher(
        config.p_t,
        config.d,
        config.teacher_a_scale,
        derive(seed, Stream::TeacherNet),
    )?;
    let teacher_updated = one_step_update(&teacher_initial, &teacher_data, config.eta_t)?;
    drop(teacher_data);

    let labeler = teacher_updated.clone();
    let x_tilde = linalg::gaussian_matrix(
        &mut stream_rng(derive(seed, Stream::StudentData), Stream::Features),
        config.n_s,
        config.d,
        1.0,
    );
    let y_tilde = labeler.predict(x_tilde.as_ref())?;
    let student_data = Dataset::new(x_tilde, y_tilde)?;
    let student_initial = init_student(
        config.p_s,
        config.d,
        config.tau,
        target.beta_h.as_ref(),
        derive(seed, Stream::StudentNet),
    )?;
    let student_updated = one_step_update(&student_initial, &student_data, config.eta_s)?;

    let teacher = AlignmentReport::measure(
        &teacher_initial,
        &teacher_updated,
        &target,
        config.n_t,
        config.eta_t,
        0.0,
    )?;
    let student = AlignmentReport::measure(
        &student_initial,
        &student_updated,
        &target,
        config.n_s,
        config.eta_s,
        config.tau,
    )?;
    Ok(FeatureTransferTrace {
        target,
        teacher_initial,
        teacher_updated,
        labeler,
        student_initial,
        student_updated,
        teacher,
        student,
    })
}

/// Alignment reports `(teacher, student)` of one run.
pub fn run_feature_transfer(
    config: &FeatureTransferConfig,
    seed: u64,
) -> Result<(AlignmentReport, AlignmentReport)> {
    let trace = run_feature_transfer_traced(config, seed)?;
    Ok((trace.teacher, trace.student))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn alignment_rejects_non_unit_direction() {
        let w = Mat::<f64>::zeros(3, 4);
        let b = Col::from_fn(4, |i| if i == 0 { 1.1 } else { 0.0 });
        assert!(alignment(w.as_ref(), b.as_ref()).is_err());
        let b = Col::from_fn(4, |i| if i == 0 { 1.0 } else { 0.0 });
        assert_eq!(alignment(w.as_ref(), b.as_ref()).unwrap(), 0.0);
    }

    #[test]
    fn rank_one_alignment_is_norm_of_left_factor() {
        let a_bar = Col::from_fn(3, |i| (i + 1) as f64);
        let b = unit(Col::from_fn(4, |i| (i as f64) - 1.5));
        let w = Mat::from_fn(3, 4, |i, j| a_bar[i] * b[j]);
        let got = alignment(w.as_ref(), b.as_ref()).unwrap();
        assert!((got - 14f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn construction_bounds_second_layer() {
        let w = Mat::<f64>::zeros(4, 2);
        assert!(TwoLayerNet::new(w.clone(), Col::zeros(4), LinkFunction::tanh()).is_err());
        assert!(TwoLayerNet::new_unchecked(w, Col::zeros(4), LinkFunction::tanh()).is_ok());
    }

    #[test]
    fn tau_guard() {
        let cfg = FeatureTransferConfig {
            d: 64,
            p_t: 8,
            p_s: 8,
            n_t: 16,
            n_s: 16,
            eta_t: 1.0,
            eta_s: 1.0,
            tau: 2.01,
            teacher_a_scale: 1.0,
            link_e: "identity".into(),
            link_h: "he2".into(),
        };
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
        assert!(FeatureTransferConfig { tau: 2.0, ..cfg }.validate().is_ok());
    }
}
