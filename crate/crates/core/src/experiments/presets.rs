use crate::error::{Error, Result};
use crate::feature_lab::FeatureTransferConfig;
use crate::linear_lab::PenaltyForm;
use crate::theory::{log_grid, LambdaTRule};

use super::config::{ExperimentConfig, ExperimentKind};

/// Bumped whenever any preset's parameters change.
pub const PRESET_VERSION: u32 = 1;

pub const PRESET_NAMES: &[&str] = &[
    "fig1_left",
    "fig1_right",
    "fig2_left",
    "fig2_right",
    "fig3",
    "appD_ridgeless",
    "appD_optimal",
    "appD_scaled015",
    "feature_default",
];

/// `λ` range and resolution of the contour presets.
pub const CONTOUR_RANGE: (f64, f64) = (1e-3, 1e1);
pub const CONTOUR_POINTS: usize = 30;
pub const DEFAULT_TRIALS: usize = 10;

/// `γ_t` sweep of the double-descent presets.
pub const DOUBLE_DESCENT_GAMMA_T: (f64, f64, usize) = (0.1, 10.0, 201);
pub const DOUBLE_DESCENT_LAMBDA_S: &[f64] = &[0.001, 0.01, 0.1, 1.0];
pub const RIDGELESS_EPSILON: f64 = 1e-6;

/// Second-layer norm of the feature-transfer teacher.
pub const FEATURE_TEACHER_A_SCALE: f64 = 2.0;

fn contour(name: &str, n_s: usize, sigma_eps: f64, zeta: Option<f64>) -> ExperimentConfig {
    let grid = log_grid(CONTOUR_RANGE.0, CONTOUR_RANGE.1, CONTOUR_POINTS);
    ExperimentConfig {
        name: name.into(),
        kind: ExperimentKind::ContourGrid,
        d: Some(500),
        n_t: Some(2000),
        n_s: Some(n_s),
        gamma_s: None,
        sigma_eps,
        lambda_t: grid.clone(),
        lambda_s: grid,
        zeta: zeta.into_iter().collect(),
        gamma_t: Vec::new(),
        lambda_t_rule: None,
        trials: DEFAULT_TRIALS,
        base_seed: 0,
        weighted: zeta.is_some(),
        penalty_form: PenaltyForm::Resolvent,
        feature: None,
        grid_ranges_inferred: true,
    }
}

fn double_descent(name: &str, rule: LambdaTRule) -> ExperimentConfig {
    let (lo, hi, points) = DOUBLE_DESCENT_GAMMA_T;
    ExperimentConfig {
        name: name.into(),
        kind: ExperimentKind::DoubleDescent,
        d: None,
        n_t: None,
        n_s: None,
        gamma_s: Some(0.1),
        sigma_eps: 1.0,
        lambda_t: Vec::new(),
        lambda_s: DOUBLE_DESCENT_LAMBDA_S.to_vec(),
        zeta: Vec::new(),
        gamma_t: log_grid(lo, hi, points),
        lambda_t_rule: Some(rule),
        trials: 1,
        base_seed: 0,
        weighted: false,
        penalty_form: PenaltyForm::Resolvent,
        feature: None,
        grid_ranges_inferred: true,
    }
}

/// The named configuration, with the default base seed 0.
pub fn preset(name: &str) -> Result<ExperimentConfig> {
    let config = match name {
        "fig1_left" => contour(name, 2000, 1.0, None),
        "fig1_right" => contour(name, 416, 2.0, None),
        "fig2_left" => contour(name, 2000, 1.0, Some(0.8)),
        "fig2_right" => contour(name, 416, 1.0, Some(0.88)),
        "fig3" => ExperimentConfig {
            name: name.into(),
            kind: ExperimentKind::ZetaSweep,
            lambda_t: vec![0.25],
            zeta: vec![0.0, 0.68, 0.89, 0.98],
            weighted: true,
            trials: 1,
            ..contour(name, 2000, 1.0, None)
        },
        "appD_ridgeless" => double_descent(
            name,
            LambdaTRule::Ridgeless {
                epsilon: RIDGELESS_EPSILON,
            },
        ),
        "appD_optimal" => double_descent(name, LambdaTRule::Optimal),
        "appD_scaled015" => double_descent(name, LambdaTRule::ScaledOptimal { kappa: 0.15 }),
        "feature_default" => ExperimentConfig {
            name: name.into(),
            kind: ExperimentKind::FeatureTransfer,
            d: None,
            n_t: None,
            n_s: None,
            gamma_s: None,
            sigma_eps: 0.0,
            lambda_t: Vec::new(),
            lambda_s: Vec::new(),
            zeta: Vec::new(),
            gamma_t: Vec::new(),
            lambda_t_rule: None,
            trials: DEFAULT_TRIALS,
            base_seed: 0,
            weighted: false,
            penalty_form: PenaltyForm::Resolvent,
            feature: Some(FeatureTransferConfig {
                d: 512,
                p_t: 512,
                p_s: 512,
                n_t: 4096,
                n_s: 4096,
                eta_t: 1.0,
                eta_s: 1.0,
                tau: 2.0,
                teacher_a_scale: FEATURE_TEACHER_A_SCALE,
                link_e: "identity".into(),
                link_h: "he2".into(),
            }),
            grid_ranges_inferred: false,
        },
        other => {
            return Err(Error::Config(format!(
                "unknown preset {other:?}; valid presets: {}",
                PRESET_NAMES.join(", ")
            )))
        }
    };
    Ok(config)
}
