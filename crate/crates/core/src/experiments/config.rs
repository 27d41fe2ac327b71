use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::feature_lab::FeatureTransferConfig;
use crate::linear_lab::PenaltyForm;
use crate::mp_stieltjes::AspectRatio;
use crate::theory::LambdaTRule;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ExperimentKind {
    /// Simulated and predicted gap over a `(λ_t, λ_s)` grid.
    ContourGrid,
    /// Weighted-ridge student curves over `λ_s` for several `ζ`.
    ZetaSweep,
    /// Predicted student risk along a `γ_t` sweep; no simulation.
    DoubleDescent,
    FeatureTransfer,
    /// Predicted gap over a `(λ_t, λ_s)` grid; no simulation.
    PhaseMap,
}

impl ExperimentKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ExperimentKind::ContourGrid => "ContourGrid",
            ExperimentKind::ZetaSweep => "ZetaSweep",
            ExperimentKind::DoubleDescent => "DoubleDescent",
            ExperimentKind::FeatureTransfer => "FeatureTransfer",
            ExperimentKind::PhaseMap => "PhaseMap",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "ContourGrid" => Ok(ExperimentKind::ContourGrid),
            "ZetaSweep" => Ok(ExperimentKind::ZetaSweep),
            "DoubleDescent" => Ok(ExperimentKind::DoubleDescent),
            "FeatureTransfer" => Ok(ExperimentKind::FeatureTransfer),
            "PhaseMap" => Ok(ExperimentKind::PhaseMap),
            other => Err(Error::Schema(format!("unknown experiment kind {other:?}"))),
        }
    }

    /// Whether the kind draws random data.
    pub fn simulates(self) -> bool {
        matches!(
            self,
            ExperimentKind::ContourGrid
                | ExperimentKind::ZetaSweep
                | ExperimentKind::FeatureTransfer
        )
    }
}

/// A complete experiment description. Linear kinds take their sizes either
/// from `(d, n_t, n_s)` or, for theory-only kinds, from `gamma_t`/`gamma_s`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub kind: ExperimentKind,
    #[serde(default)]
    pub d: Option<usize>,
    #[serde(default)]
    pub n_t: Option<usize>,
    #[serde(default)]
    pub n_s: Option<usize>,
    #[serde(default)]
    pub gamma_s: Option<f64>,
    #[serde(default = "unit_sigma")]
    pub sigma_eps: f64,
    #[serde(default)]
    pub lambda_t: Vec<f64>,
    #[serde(default)]
    pub lambda_s: Vec<f64>,
    #[serde(default)]
    pub zeta: Vec<f64>,
    #[serde(default)]
    pub gamma_t: Vec<f64>,
    #[serde(default)]
    pub lambda_t_rule: Option<LambdaTRule>,
    pub trials: usize,
    #[serde(default)]
    pub base_seed: u64,
    /// Weighted-ridge student; one student per entry of `zeta`.
    #[serde(default)]
    pub weighted: bool,
    #[serde(default)]
    pub penalty_form: PenaltyForm,
    #[serde(default)]
    pub feature: Option<FeatureTransferConfig>,
    /// The λ ranges are not printed with the reference figures and were chosen here.
    #[serde(default)]
    pub grid_ranges_inferred: bool,
}

fn unit_sigma() -> f64 {
    1.0
}

fn config_err(field: &str, msg: impl std::fmt::Display) -> Error {
    Error::Config(format!("{field}: {msg}"))
}

fn check_grid(field: &str, values: &[f64], allow_zero: bool) -> Result<()> {
    if values.is_empty() {
        return Err(config_err(field, "must be nonempty"));
    }
    for (i, &v) in values.iter().enumerate() {
        let ok = v.is_finite() && (v > 0.0 || (allow_zero && v == 0.0));
        if !ok {
            return Err(config_err(
                &format!("{field}[{i}]"),
                format!("invalid value {v}"),
            ));
        }
    }
    Ok(())
}

impl ExperimentConfig {
    pub fn dims(&self) -> Option<(usize, usize, usize)> {
        Some((self.d?, self.n_t?, self.n_s?))
    }

    fn require_dims(&self) -> Result<(usize, usize, usize)> {
        let (d, n_t, n_s) = self.dims().ok_or_else(|| {
            config_err(
                "d/n_t/n_s",
                format!("{} needs d, n_t and n_s", self.kind.as_str()),
            )
        })?;
        for (name, v) in [("d", d), ("n_t", n_t), ("n_s", n_s)] {
            if v == 0 {
                return Err(config_err(name, "must be positive"));
            }
        }
        Ok((d, n_t, n_s))
    }

    /// Student variants passed to the grid runner.
    pub fn student_variants(&self) -> Vec<Option<f64>> {
        if self.kind == ExperimentKind::ZetaSweep || self.weighted {
            self.zeta.iter().map(|&z| Some(z)).collect()
        } else {
            vec![None]
        }
    }

    /// `(γ_t, γ_s)` for kinds with a single aspect-ratio pair.
    pub fn aspect_ratios(&self) -> Result<(AspectRatio, AspectRatio)> {
        if let Some((d, n_t, n_s)) = self.dims() {
            return Ok((
                AspectRatio::from_dims(d, n_t)?,
                AspectRatio::from_dims(d, n_s)?,
            ));
        }
        let gamma_t = match self.gamma_t.as_slice() {
            [g] => *g,
            _ => {
                return Err(config_err(
                    "gamma_t",
                    "needs exactly one value when d/n_t/n_s are absent",
                ))
            }
        };
        let gamma_s = self
            .gamma_s
            .ok_or_else(|| config_err("gamma_s", "missing"))?;
        Ok((
            AspectRatio::new(gamma_t).map_err(|e| config_err("gamma_t", e))?,
            AspectRatio::new(gamma_s).map_err(|e| config_err("gamma_s", e))?,
        ))
    }

    pub fn validate(&self) -> Result<()> {
        if self.name.trim().is_empty() {
            return Err(config_err("name", "must be nonempty"));
        }
        if self.trials == 0 {
            return Err(config_err("trials", "must be at least 1"));
        }
        if !(self.sigma_eps.is_finite() && self.sigma_eps >= 0.0) {
            return Err(config_err(
                "sigma_eps",
                format!("must be finite and nonnegative, got {}", self.sigma_eps),
            ));
        }
        for (i, &z) in self.zeta.iter().enumerate() {
            if !(0.0..=1.0).contains(&z) {
                return Err(config_err(
                    &format!("zeta[{i}]"),
                    format!("must lie in [0, 1], got {z}"),
                ));
            }
        }
        match self.kind {
            ExperimentKind::ContourGrid | ExperimentKind::ZetaSweep => {
                let (d, n_t, n_s) = self.require_dims()?;
                check_grid("lambda_t", &self.lambda_t, n_t >= d)?;
                let weighted = self.kind == ExperimentKind::ZetaSweep || self.weighted;
                check_grid("lambda_s", &self.lambda_s, n_s >= d && !weighted)?;
                if weighted && self.zeta.is_empty() {
                    return Err(config_err(
                        "zeta",
                        "weighted students need at least one value",
                    ));
                }
                if !weighted && !self.zeta.is_empty() {
                    return Err(config_err("zeta", "given without weighted = true"));
                }
            }
            ExperimentKind::PhaseMap => {
                self.aspect_ratios()?;
                check_grid("lambda_t", &self.lambda_t, true)?;
                check_grid("lambda_s", &self.lambda_s, true)?;
                if self.zeta.len() > 1 {
                    return Err(config_err("zeta", "PhaseMap takes at most one value"));
                }
            }
            ExperimentKind::DoubleDescent => {
                check_grid("gamma_t", &self.gamma_t, false)?;
                check_grid("lambda_s", &self.lambda_s, true)?;
                let gamma_s = self
                    .gamma_s
                    .ok_or_else(|| config_err("gamma_s", "missing"))?;
                AspectRatio::new(gamma_s).map_err(|e| config_err("gamma_s", e))?;
                let rule = self
                    .lambda_t_rule
                    .ok_or_else(|| config_err("lambda_t_rule", "missing"))?;
                let probe = match rule {
                    LambdaTRule::Ridgeless { epsilon } => epsilon,
                    LambdaTRule::ScaledOptimal { kappa } => kappa,
                    LambdaTRule::Fixed { lambda_t } => lambda_t,
                    LambdaTRule::Optimal => 1.0,
                };
                if !(probe.is_finite() && probe > 0.0) {
                    return Err(config_err(
                        "lambda_t_rule",
                        format!("parameter must be positive, got {probe}"),
                    ));
                }
            }
            ExperimentKind::FeatureTransfer => {
                let f = self
                    .feature
                    .as_ref()
                    .ok_or_else(|| config_err("feature", "missing"))?;
                f.validate().map_err(|e| config_err("feature", e))?;
            }
        }
        Ok(())
    }

    /// Rescales sizes to dimension `d`, keeping the aspect ratios.
    pub fn with_dimension(mut self, d: usize) -> Result<Self> {
        if d == 0 {
            return Err(config_err("d", "must be positive"));
        }
        let rescale = |n: usize, old: usize| {
            ((n as f64) * (d as f64) / (old as f64)).round().max(1.0) as usize
        };
        if let Some(old) = self.d {
            self.n_t = self.n_t.map(|n| rescale(n, old));
            self.n_s = self.n_s.map(|n| rescale(n, old));
            self.d = Some(d);
        }
        if let Some(f) = self.feature.as_mut() {
            let old = f.d;
            f.p_t = rescale(f.p_t, old);
            f.p_s = rescale(f.p_s, old);
            f.n_t = rescale(f.n_t, old);
            f.n_s = rescale(f.n_s, old);
            f.d = d;
            f.tau = f.tau.min((d as f64).sqrt() / 4.0);
        }
        Ok(self)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let config: ExperimentConfig = serde_json::from_str(text)
            .map_err(|e| Error::Config(format!("line {}, column {}: {e}", e.line(), e.column())))?;
        config.validate()?;
        Ok(config)
    }
}
