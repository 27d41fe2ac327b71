use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use w2s_core::experiments::records::{encode, write_atomic};
use w2s_core::experiments::validation::{run_level, Level};
use w2s_core::experiments::{
    preset, read_results, run_document, ExperimentConfig, ExperimentKind, ResultFormat,
};
use w2s_core::mp_stieltjes::AspectRatio;
use w2s_core::theory::{classify_phase, predict, LinearProblemParams, Regime};
use w2s_core::Error;

mod plot;

#[derive(Parser)]
#[command(
    name = "w2s",
    version,
    about = "Teacher/student ridge and feature-learning lab"
)]
struct Cli {
    /// Worker threads; defaults to the number of logical cores.
    #[arg(long, global = true, env = "W2S_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Limiting risks and gap at one point.
    Theory(TheoryArgs),
    /// Phase of a teacher point and the improving student range.
    Phase(PhaseArgs),
    /// Run any config or preset; with explicit sizes, a single simulated point.
    Simulate(SimulateArgs),
    /// Run a ContourGrid or PhaseMap config.
    Grid(RunArgs),
    /// Run a ZetaSweep or DoubleDescent config.
    Sweep(RunArgs),
    /// Run a FeatureTransfer config.
    Feature(RunArgs),
    /// Render a results file as SVG.
    Plot(PlotArgs),
    /// Run the acceptance checks.
    Validate(ValidateArgs),
}

#[derive(Args)]
struct TheoryArgs {
    #[arg(long, default_value_t = 0.25)]
    lambda_t: f64,
    #[arg(long, default_value_t = 1.0)]
    lambda_s: f64,
    #[arg(long, default_value_t = 0.25)]
    gamma_t: f64,
    #[arg(long, default_value_t = 0.25)]
    gamma_s: f64,
    #[arg(long, default_value_t = 1.0)]
    sigma: f64,
    #[arg(long, default_value_t = 0.0)]
    zeta: f64,
}

#[derive(Args)]
struct PhaseArgs {
    #[arg(long)]
    lambda_t: f64,
    #[arg(long, default_value_t = 0.25)]
    gamma_t: f64,
    #[arg(long, default_value_t = 0.25)]
    gamma_s: f64,
    #[arg(long, default_value_t = 1.0)]
    sigma: f64,
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Csv,
    Json,
}

#[derive(Args)]
struct RunArgs {
    /// Compiled-in configuration name.
    #[arg(long, conflicts_with = "config")]
    preset: Option<String>,
    /// JSON config file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    trials: Option<usize>,
    /// Override the dimension, keeping aspect ratios.
    #[arg(long)]
    d: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Defaults to the output extension, then CSV.
    #[arg(long, value_enum)]
    format: Option<FormatArg>,
    /// Print the resolved config as JSON and exit.
    #[arg(long)]
    show_config: bool,
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Teacher sample size of a single simulated point (with --d and --n-s).
    #[arg(long, conflicts_with_all = ["preset", "config"])]
    n_t: Option<usize>,
    #[arg(long, conflicts_with_all = ["preset", "config"])]
    n_s: Option<usize>,
    #[arg(long, default_value_t = 0.25)]
    lambda_t: f64,
    #[arg(long, default_value_t = 1.0)]
    lambda_s: f64,
    #[arg(long, default_value_t = 1.0)]
    sigma: f64,
    /// Weighted-ridge student with this spike correlation.
    #[arg(long)]
    zeta: Option<f64>,
}

#[derive(Clone, Copy, ValueEnum)]
enum PlotKind {
    Contour,
    Curve,
}

#[derive(Args)]
struct PlotArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long, value_enum)]
    kind: PlotKind,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum LevelArg {
    Quick,
    Full,
}

#[derive(Args)]
struct ValidateArgs {
    #[arg(long, value_enum, default_value = "quick")]
    level: LevelArg,
}

/// Failure with its exit code.
struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure {
            code: if e.is_usage() { 2 } else { 1 },
            message: e.to_string(),
        }
    }
}

fn usage(message: impl Into<String>) -> Failure {
    Failure {
        code: 2,
        message: message.into(),
    }
}

type CliResult<T = ()> = Result<T, Failure>;

fn print_json<T: Serialize>(value: &T) -> CliResult {
    let text = serde_json::to_string_pretty(value).map_err(|e| Failure {
        code: 1,
        message: e.to_string(),
    })?;
    println!("{text}");
    Ok(())
}

fn aspect(name: &str, v: f64) -> CliResult<AspectRatio> {
    AspectRatio::new(v).map_err(|e| usage(format!("--{name}: {e}")))
}

#[derive(Serialize)]
struct TheoryOutput {
    loss_teacher: f64,
    loss_student: f64,
    gap: f64,
    delta_gamma: f64,
    /// Phase of the teacher point for a ridge student; absent when `λ_t = 0`.
    regime: Option<Regime>,
}

fn cmd_theory(a: &TheoryArgs) -> CliResult {
    let params = LinearProblemParams {
        gamma_t: aspect("gamma-t", a.gamma_t)?,
        gamma_s: aspect("gamma-s", a.gamma_s)?,
        sigma_eps: a.sigma,
        lambda_t: a.lambda_t,
        lambda_s: a.lambda_s,
        zeta: a.zeta,
    };
    let p = predict(&params)?;
    let regime = if a.lambda_t > 0.0 {
        Some(classify_phase(a.lambda_t, params.gamma_t, params.gamma_s, a.sigma)?.regime)
    } else {
        None
    };
    print_json(&TheoryOutput {
        loss_teacher: p.loss_teacher,
        loss_student: p.loss_student,
        gap: p.gap,
        delta_gamma: p.delta_gamma,
        regime,
    })
}

fn cmd_phase(a: &PhaseArgs) -> CliResult {
    let phase = classify_phase(
        a.lambda_t,
        aspect("gamma-t", a.gamma_t)?,
        aspect("gamma-s", a.gamma_s)?,
        a.sigma,
    )?;
    print_json(&phase)
}

fn load_config(run: &RunArgs) -> CliResult<ExperimentConfig> {
    let mut config = match (&run.preset, &run.config) {
        (Some(name), None) => preset(name)?,
        (None, Some(path)) => {
            let text = std::fs::read_to_string(path).map_err(|e| Failure {
                code: 1,
                message: format!("{}: {e}", path.display()),
            })?;
            ExperimentConfig::from_json(&text)
                .map_err(|e| usage(format!("{}: {e}", path.display())))?
        }
        _ => return Err(usage("give exactly one of --preset or --config")),
    };
    apply_overrides(&mut config, run)?;
    Ok(config)
}

fn apply_overrides(config: &mut ExperimentConfig, run: &RunArgs) -> CliResult {
    if let Some(seed) = run.seed {
        config.base_seed = seed;
    }
    if let Some(trials) = run.trials {
        config.trials = trials;
    }
    if let Some(d) = run.d {
        *config = config.clone().with_dimension(d)?;
    }
    config.validate()?;
    Ok(())
}

fn resolve_format(run: &RunArgs, kind: ExperimentKind) -> CliResult<ResultFormat> {
    let format = match run.format {
        Some(FormatArg::Csv) => ResultFormat::Csv,
        Some(FormatArg::Json) => ResultFormat::Json,
        None => run
            .out
            .as_deref()
            .and_then(ResultFormat::from_path)
            .unwrap_or(if kind == ExperimentKind::FeatureTransfer {
                ResultFormat::Json
            } else {
                ResultFormat::Csv
            }),
    };
    if kind == ExperimentKind::FeatureTransfer && format == ResultFormat::Csv {
        return Err(usage(
            "feature-transfer results have no CSV layout; use --format json",
        ));
    }
    Ok(format)
}

fn execute(
    config: &ExperimentConfig,
    run: &RunArgs,
    allowed: &[ExperimentKind],
    command: &str,
) -> CliResult {
    if !allowed.contains(&config.kind) {
        let names: Vec<&str> = allowed.iter().map(|k| k.as_str()).collect();
        return Err(usage(format!(
            "`{command}` runs {} configs, got {}",
            names.join(" or "),
            config.kind.as_str()
        )));
    }
    if run.show_config {
        return print_json(config);
    }
    let format = resolve_format(run, config.kind)?;
    let progress = |done: usize, total: usize| eprintln!("progress: {done}/{total} trials");
    let doc = run_document(config, &progress)?;
    let bytes = encode(&doc, format)?;
    match &run.out {
        Some(path) => {
            write_atomic(path, &bytes)?;
            eprintln!("wrote {}", path.display());
        }
        None => {
            use std::io::Write;
            std::io::stdout().write_all(&bytes).map_err(|e| Failure {
                code: 1,
                message: e.to_string(),
            })?;
        }
    }
    Ok(())
}

const ALL_KINDS: &[ExperimentKind] = &[
    ExperimentKind::ContourGrid,
    ExperimentKind::ZetaSweep,
    ExperimentKind::DoubleDescent,
    ExperimentKind::FeatureTransfer,
    ExperimentKind::PhaseMap,
];

fn cmd_simulate(a: &SimulateArgs) -> CliResult {
    let config = if a.run.preset.is_none() && a.run.config.is_none() {
        let (Some(d), Some(n_t), Some(n_s)) = (a.run.d, a.n_t, a.n_s) else {
            return Err(usage(
                "give --preset, --config, or all of --d, --n-t and --n-s",
            ));
        };
        let mut config = ExperimentConfig {
            name: "simulate".into(),
            d: Some(d),
            n_t: Some(n_t),
            n_s: Some(n_s),
            sigma_eps: a.sigma,
            lambda_t: vec![a.lambda_t],
            lambda_s: vec![a.lambda_s],
            zeta: a.zeta.into_iter().collect(),
            weighted: a.zeta.is_some(),
            grid_ranges_inferred: false,
            ..preset("fig1_left")?
        };
        if let Some(seed) = a.run.seed {
            config.base_seed = seed;
        }
        if let Some(trials) = a.run.trials {
            config.trials = trials;
        }
        config.validate()?;
        config
    } else {
        load_config(&a.run)?
    };
    execute(&config, &a.run, ALL_KINDS, "simulate")
}

fn cmd_plot(a: &PlotArgs) -> CliResult {
    let doc = read_results(&a.input)?;
    let svg = match a.kind {
        PlotKind::Contour => plot::contour(&doc.records),
        PlotKind::Curve => plot::curve(&doc.records),
    }
    .map_err(usage)?;
    write_atomic(&a.out, svg.as_bytes())?;
    eprintln!("wrote {}", a.out.display());
    Ok(())
}

fn cmd_validate(a: &ValidateArgs) -> CliResult {
    let level = match a.level {
        LevelArg::Quick => Level::Quick,
        LevelArg::Full => Level::Full,
    };
    let outcomes = run_level(level, &mut |o| println!("{o}"));
    let failed = outcomes.iter().filter(|o| !o.passed).count();
    println!("{} passed, {failed} failed", outcomes.len() - failed);
    if failed > 0 {
        return Err(Failure {
            code: 1,
            message: format!("{failed} acceptance check(s) failed"),
        });
    }
    Ok(())
}

fn configure_threads(threads: Option<usize>) -> CliResult {
    if let Some(n) = threads {
        if n == 0 {
            return Err(usage("--threads must be positive"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure {
                code: 1,
                message: e.to_string(),
            })?;
    }
    Ok(())
}

fn run(cli: Cli) -> CliResult {
    configure_threads(cli.threads)?;
    match &cli.command {
        Command::Theory(a) => cmd_theory(a),
        Command::Phase(a) => cmd_phase(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Grid(a) => execute(
            &load_config(a)?,
            a,
            &[ExperimentKind::ContourGrid, ExperimentKind::PhaseMap],
            "grid",
        ),
        Command::Sweep(a) => execute(
            &load_config(a)?,
            a,
            &[ExperimentKind::ZetaSweep, ExperimentKind::DoubleDescent],
            "sweep",
        ),
        Command::Feature(a) => execute(
            &load_config(a)?,
            a,
            &[ExperimentKind::FeatureTransfer],
            "feature",
        ),
        Command::Plot(a) => cmd_plot(a),
        Command::Validate(a) => cmd_validate(a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
