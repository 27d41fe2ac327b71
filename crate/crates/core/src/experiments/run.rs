use std::sync::atomic::{AtomicUsize, Ordering};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::feature_lab::run_feature_transfer;
use crate::linear_lab::{run_w2s_grid_trial, GridTrial, TrialDesign};
use crate::mp_stieltjes::AspectRatio;
use crate::seeding::trial_seed;
use crate::theory::{predict, LinearProblemParams, TheoryPrediction};

use super::config::{ExperimentConfig, ExperimentKind};
use super::presets::{PRESET_NAMES, PRESET_VERSION};
use super::records::{moments, FeatureRecord, Manifest, ResultRecord, ResultsDocument};

/// Called with `(completed, total)` as trials finish.
pub type Progress<'a> = &'a (dyn Fn(usize, usize) + Sync);

fn no_progress(_: usize, _: usize) {}

fn base_record(
    config: &ExperimentConfig,
    gamma_t: f64,
    gamma_s: f64,
    lambda_t: f64,
    lambda_s: f64,
) -> ResultRecord {
    ResultRecord {
        experiment: config.name.clone(),
        kind: config.kind,
        d: config.d,
        n_t: config.n_t,
        n_s: config.n_s,
        gamma_t,
        gamma_s,
        sigma_eps: config.sigma_eps,
        lambda_t,
        lambda_s,
        zeta: None,
        tau: None,
        eta_t: None,
        eta_s: None,
        trials: 0,
        loss_teacher_trials: Vec::new(),
        loss_student_trials: Vec::new(),
        loss_teacher_emp_mean: None,
        loss_teacher_emp_std: None,
        loss_student_emp_mean: None,
        loss_student_emp_std: None,
        loss_teacher_theory: None,
        loss_student_theory: None,
        gap_theory: None,
        domain_error: None,
    }
}

fn join_theory(record: &mut ResultRecord, prediction: Result<TheoryPrediction>) {
    match prediction {
        Ok(p) => {
            record.loss_teacher_theory = Some(p.loss_teacher);
            record.loss_student_theory = Some(p.loss_student);
            record.gap_theory = Some(p.gap);
        }
        Err(e) => record.domain_error = Some(e.to_string()),
    }
}

fn theory_at(
    gamma_t: AspectRatio,
    gamma_s: AspectRatio,
    sigma_eps: f64,
    lambda_t: f64,
    lambda_s: f64,
    zeta: f64,
) -> Result<TheoryPrediction> {
    predict(&LinearProblemParams {
        gamma_t,
        gamma_s,
        sigma_eps,
        lambda_t,
        lambda_s,
        zeta,
    })
}

fn simulate_grid(config: &ExperimentConfig, progress: Progress<'_>) -> Result<Vec<ResultRecord>> {
    let (d, n_t, n_s) = config
        .dims()
        .ok_or_else(|| Error::Config("missing dimensions".into()))?;
    let design = TrialDesign {
        d,
        n_t,
        n_s,
        sigma_eps: config.sigma_eps,
    };
    let variants = config.student_variants();
    let done = AtomicUsize::new(0);
    let trials: Vec<GridTrial> = (0..config.trials)
        .into_par_iter()
        .map(|k| {
            let out = run_w2s_grid_trial(
                &design,
                &config.lambda_t,
                &config.lambda_s,
                &variants,
                config.penalty_form,
                trial_seed(config.base_seed, k as u64),
            );
            progress(done.fetch_add(1, Ordering::Relaxed) + 1, config.trials);
            out
        })
        .collect::<Result<_>>()?;

    let (gamma_t, gamma_s) = config.aspect_ratios()?;
    let mut records =
        Vec::with_capacity(variants.len() * config.lambda_t.len() * config.lambda_s.len());
    for (v, variant) in variants.iter().enumerate() {
        for (i, &lt) in config.lambda_t.iter().enumerate() {
            for (j, &ls) in config.lambda_s.iter().enumerate() {
                let mut r = base_record(config, gamma_t.get(), gamma_s.get(), lt, ls);
                r.zeta = *variant;
                r.trials = config.trials;
                r.loss_teacher_trials = trials.iter().map(|t| t.teacher[i]).collect();
                r.loss_student_trials = trials.iter().map(|t| t.student[v][i][j]).collect();
                let mt = moments(&r.loss_teacher_trials).expect("trials >= 1");
                let ms = moments(&r.loss_student_trials).expect("trials >= 1");
                r.loss_teacher_emp_mean = Some(mt.mean);
                r.loss_teacher_emp_std = Some(mt.std);
                r.loss_student_emp_mean = Some(ms.mean);
                r.loss_student_emp_std = Some(ms.std);
                join_theory(
                    &mut r,
                    theory_at(
                        gamma_t,
                        gamma_s,
                        config.sigma_eps,
                        lt,
                        ls,
                        variant.unwrap_or(0.0),
                    ),
                );
                records.push(r);
            }
        }
    }
    Ok(records)
}

fn phase_map(config: &ExperimentConfig) -> Result<Vec<ResultRecord>> {
    let (gamma_t, gamma_s) = config.aspect_ratios()?;
    let zeta = config.zeta.first().copied();
    let mut records = Vec::new();
    for &lt in &config.lambda_t {
        for &ls in &config.lambda_s {
            let mut r = base_record(config, gamma_t.get(), gamma_s.get(), lt, ls);
            r.zeta = zeta;
            join_theory(
                &mut r,
                theory_at(
                    gamma_t,
                    gamma_s,
                    config.sigma_eps,
                    lt,
                    ls,
                    zeta.unwrap_or(0.0),
                ),
            );
            records.push(r);
        }
    }
    Ok(records)
}

fn double_descent(config: &ExperimentConfig) -> Result<Vec<ResultRecord>> {
    let rule = config
        .lambda_t_rule
        .ok_or_else(|| Error::Config("lambda_t_rule: missing".into()))?;
    let gamma_s_value = config
        .gamma_s
        .ok_or_else(|| Error::Config("gamma_s: missing".into()))?;
    let gamma_s = AspectRatio::new(gamma_s_value)?;
    let mut records = Vec::new();
    for &ls in &config.lambda_s {
        for &g in &config.gamma_t {
            let gamma_t = AspectRatio::new(g)?;
            let lt = rule.lambda_t(gamma_t, config.sigma_eps);
            let mut r = base_record(config, g, gamma_s_value, lt, ls);
            join_theory(
                &mut r,
                theory_at(gamma_t, gamma_s, config.sigma_eps, lt, ls, 0.0),
            );
            records.push(r);
        }
    }
    Ok(records)
}

/// Runs a linear or theory-only experiment: one record per grid point, each
/// aggregating `trials` seeded runs. Trial `k` uses
/// `trial_seed(base_seed, k)`, so the output does not depend on scheduling.
pub fn run_experiment(config: &ExperimentConfig) -> Result<Vec<ResultRecord>> {
    run_experiment_with_progress(config, &no_progress)
}

pub fn run_experiment_with_progress(
    config: &ExperimentConfig,
    progress: Progress<'_>,
) -> Result<Vec<ResultRecord>> {
    config.validate()?;
    match config.kind {
        ExperimentKind::ContourGrid | ExperimentKind::ZetaSweep => simulate_grid(config, progress),
        ExperimentKind::PhaseMap => phase_map(config),
        ExperimentKind::DoubleDescent => double_descent(config),
        ExperimentKind::FeatureTransfer => Err(Error::Config(
            "FeatureTransfer produces alignment records; use run_feature_experiment".into(),
        )),
    }
}

/// One feature-transfer run per trial, seeded as in [`run_experiment`].
pub fn run_feature_experiment(
    config: &ExperimentConfig,
    progress: Progress<'_>,
) -> Result<Vec<FeatureRecord>> {
    config.validate()?;
    let feature = config
        .feature
        .as_ref()
        .filter(|_| config.kind == ExperimentKind::FeatureTransfer)
        .ok_or_else(|| {
            Error::Config("kind: FeatureTransfer with a feature block required".into())
        })?;
    let done = AtomicUsize::new(0);
    (0..config.trials)
        .into_par_iter()
        .map(|k| {
            let seed = trial_seed(config.base_seed, k as u64);
            let (teacher, student) = run_feature_transfer(feature, seed)?;
            progress(done.fetch_add(1, Ordering::Relaxed) + 1, config.trials);
            Ok(FeatureRecord {
                experiment: config.name.clone(),
                trial: k,
                seed,
                teacher,
                student,
            })
        })
        .collect()
}

/// Manifest label of a config: `name/vN` when it carries a preset's name.
pub fn preset_label(config: &ExperimentConfig) -> String {
    if PRESET_NAMES.contains(&config.name.as_str()) {
        format!("{}/v{PRESET_VERSION}", config.name)
    } else {
        config.name.clone()
    }
}

/// Runs any kind and packages the output with its manifest.
pub fn run_document(config: &ExperimentConfig, progress: Progress<'_>) -> Result<ResultsDocument> {
    let manifest = Manifest::new(
        config.base_seed,
        preset_label(config),
        config.grid_ranges_inferred,
    );
    if config.kind == ExperimentKind::FeatureTransfer {
        Ok(ResultsDocument {
            manifest,
            records: Vec::new(),
            feature_records: run_feature_experiment(config, progress)?,
        })
    } else {
        Ok(ResultsDocument {
            manifest,
            records: run_experiment_with_progress(config, progress)?,
            feature_records: Vec::new(),
        })
    }
}
