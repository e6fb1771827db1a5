//! `ssgd`: fit, simulate and tune the sieve SGD estimators from the shell.
//!
//! Exit codes: 0 success, 2 unreadable input, 3 invalid data or settings,
//! 4 numerical failure.

mod ingest;
mod report;

use std::fs::File;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use ssgd_core::config::validate_gamma;
use ssgd_core::estimator::logit_start;
use ssgd_core::inference::normalized_intervals;
use ssgd_core::sim::{
    run_monte_carlo, table, DgpSpec, ErrorDist, InferenceSpec, McOptions, Preset, RegressorLaw, PAPER_SAMPLE_SIZES,
};
use ssgd_core::{
    confidence_intervals, default_tuning, run_sgd_known_g, run_ssgd_average, run_ssgd_group, sandwich_for_result, Beta,
    EstimatorKind, InitStrategy, LinkFunction, LinkKind, SandwichOptions, SsgdConfig, SsgdError,
};

use report::{FitReport, InferenceReport, SimulationReport, SCHEMA};

#[derive(Debug, Parser)]
#[command(
    name = "ssgd",
    version,
    about = "Sieve SGD estimators for binary-choice index models"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Fit a dataset read from CSV.
    Fit(FitArgs),
    /// Run a Monte Carlo study on a simulated design.
    Simulate(SimulateArgs),
    /// Print the default tuning for a problem size.
    Tune(TuneArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Csv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum EstimatorArg {
    Average,
    Group,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum LinkArg {
    Logistic,
    Probit,
    Cauchy,
}

impl From<LinkArg> for LinkKind {
    fn from(l: LinkArg) -> Self {
        match l {
            LinkArg::Logistic => LinkKind::Logistic,
            LinkArg::Probit => LinkKind::Probit,
            LinkArg::Cauchy => LinkKind::Cauchy,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum InitArg {
    Logit,
    Zero,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum PresetArg {
    PaperNormal,
    PaperCauchy,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ErrorsArg {
    Normal,
    Cauchy,
    Logistic,
}

/// Estimator settings shared by `fit` and `simulate`. Unset flags keep the
/// defaults of the chosen design.
#[derive(Debug, Args)]
struct EstimatorArgs {
    /// Output file; standard output when omitted.
    #[arg(long)]
    output: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "json")]
    format: Format,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Learning-rate scale γ₁.
    #[arg(long)]
    gamma1: Option<f64>,
    /// Learning-rate exponent γ.
    #[arg(long)]
    gamma: Option<f64>,
    /// Number of iterations K (default n).
    #[arg(long)]
    iterations: Option<usize>,
    /// Number of polynomial powers in the sieve.
    #[arg(long)]
    sieve_powers: Option<usize>,
    /// Iterates dropped from the end of the average.
    #[arg(long)]
    trim: Option<usize>,
    /// Refit the sieve every this many steps.
    #[arg(long)]
    refit_every: Option<usize>,
    /// Coefficient used to normalize the scale.
    #[arg(long)]
    normalize_index: Option<usize>,
    #[arg(long, value_enum)]
    init: Option<InitArg>,
    #[arg(long, value_enum, default_value = "average")]
    estimator: EstimatorArg,
    /// Use per-observation SGD with the link given by `--link`.
    #[arg(long)]
    known_g: bool,
    #[arg(long, value_enum, default_value = "logistic")]
    link: LinkArg,
    /// Subtract the first-stage correction in the sandwich bread.
    #[arg(long, default_value_t = true, action = clap::ArgAction::Set)]
    include_f: bool,
    /// Use the whitened sandwich variant.
    #[arg(long)]
    whitened: bool,
    /// Confidence level of the reported intervals.
    #[arg(long, default_value_t = 0.95)]
    level: f64,
    /// Suppress warnings on standard error.
    #[arg(short, long)]
    quiet: bool,
}

impl EstimatorArgs {
    fn apply(&self, base: SsgdConfig) -> SsgdConfig {
        SsgdConfig {
            gamma1: self.gamma1.unwrap_or(base.gamma1),
            gamma: self.gamma.unwrap_or(base.gamma),
            iterations: self.iterations.or(base.iterations),
            sieve_powers: self.sieve_powers.or(base.sieve_powers),
            trim: self.trim.unwrap_or(base.trim),
            refit_every: self.refit_every.unwrap_or(base.refit_every),
            numeraire: self.normalize_index.unwrap_or(base.numeraire),
            init: match self.init {
                Some(InitArg::Logit) => InitStrategy::Logit,
                Some(InitArg::Zero) => InitStrategy::Zero,
                None => base.init,
            },
            seed: self.seed,
            ..base
        }
    }

    fn estimator(&self) -> EstimatorKind {
        match (self.known_g, self.estimator) {
            (true, _) => EstimatorKind::KnownG { link: self.link.into() },
            (false, EstimatorArg::Average) => EstimatorKind::Average,
            (false, EstimatorArg::Group) => EstimatorKind::Group,
        }
    }

    fn sandwich(&self) -> SandwichOptions {
        SandwichOptions {
            include_f: self.include_f,
            whitened: self.whitened,
        }
    }
}

#[derive(Debug, Args)]
struct FitArgs {
    /// CSV file with a header, a 0/1 column named `y` and numeric regressors.
    #[arg(long)]
    input: PathBuf,
    /// Skip the sandwich covariance.
    #[arg(long)]
    no_inference: bool,
    #[command(flatten)]
    est: EstimatorArgs,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    /// Built-in design; overrides `--beta0` and `--errors`.
    #[arg(long, value_enum)]
    preset: Option<PresetArg>,
    /// Replications per sample size (at least 2).
    #[arg(long, default_value_t = 100)]
    reps: usize,
    /// Sample sizes, comma separated.
    #[arg(long, value_delimiter = ',')]
    n: Vec<usize>,
    /// True coefficients, comma separated.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    beta0: Vec<f64>,
    #[arg(long, value_enum, default_value = "normal")]
    errors: ErrorsArg,
    /// Record sandwich interval coverage for each replication.
    #[arg(long)]
    coverage: bool,
    #[command(flatten)]
    est: EstimatorArgs,
}

#[derive(Debug, Args)]
struct TuneArgs {
    #[arg(long)]
    n: usize,
    #[arg(long, default_value_t = 1)]
    p: usize,
    #[arg(long, default_value_t = 0.8)]
    gamma: f64,
    #[arg(long, default_value_t = 2.0)]
    gamma1: f64,
    #[arg(long, value_enum, default_value = "text")]
    format: TuneFormat,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum TuneFormat {
    Text,
    Json,
}

#[derive(Debug)]
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn usage(message: impl Into<String>) -> Self {
        Self {
            code: 3,
            message: message.into(),
        }
    }

    fn io(path: &Path, e: io::Error) -> Self {
        Self {
            code: 2,
            message: format!("{}: {e}", path.display()),
        }
    }
}

impl From<SsgdError> for Failure {
    fn from(e: SsgdError) -> Self {
        if e.is_validation() {
            return Self::usage(e.to_string());
        }
        // Estimator-loop failures already name their iteration.
        Self {
            code: 4,
            message: e.to_string(),
        }
    }
}

impl From<ingest::IngestError> for Failure {
    fn from(e: ingest::IngestError) -> Self {
        let code = match e {
            ingest::IngestError::Parse { .. } => 2,
            ingest::IngestError::Invalid(_) => 3,
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

fn emit(output: Option<&Path>, body: &str) -> Result<(), Failure> {
    match output {
        Some(path) => std::fs::write(path, body).map_err(|e| Failure::io(path, e)),
        None => io::stdout()
            .write_all(body.as_bytes())
            .map_err(|e| Failure::io(Path::new("<stdout>"), e)),
    }
}

fn to_json<T: serde::Serialize>(value: &T) -> Result<String, Failure> {
    serde_json::to_string_pretty(value)
        .map(|s| s + "\n")
        .map_err(|e| Failure {
            code: 4,
            message: format!("cannot serialize output: {e}"),
        })
}

fn to_csv(header: &[String], rows: &[Vec<String>]) -> Result<String, Failure> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let fail = |e: csv::Error| Failure {
        code: 4,
        message: format!("cannot write CSV: {e}"),
    };
    w.write_record(header).map_err(fail)?;
    for row in rows {
        w.write_record(row).map_err(fail)?;
    }
    let bytes = w.into_inner().map_err(|e| Failure {
        code: 4,
        message: e.to_string(),
    })?;
    Ok(String::from_utf8(bytes).expect("CSV of UTF-8 fields"))
}

fn warn(quiet: bool, warnings: &[String]) {
    if !quiet {
        for w in warnings {
            eprintln!("warning: {w}");
        }
    }
}

fn cmd_fit(args: &FitArgs) -> Result<(), Failure> {
    let file = File::open(&args.input).map_err(|e| Failure::io(&args.input, e))?;
    let table = ingest::read_table(file)?;
    let est = &args.est;
    let config = est.apply(SsgdConfig::default());
    let data = &table.data;

    let mut result = match est.estimator() {
        EstimatorKind::KnownG { link } => {
            let start = match config.init {
                InitStrategy::Logit => logit_start(data)?,
                InitStrategy::Zero => Beta::zeros(data.p()),
            };
            run_sgd_known_g(data, &LinkFunction::from_kind(link)?, &config, &start)?
        }
        EstimatorKind::Group => run_ssgd_group(data, &config, None)?,
        EstimatorKind::Average => run_ssgd_average(data, &config, None)?,
    };

    let inference = if args.no_inference || result.sieve.is_none() {
        None
    } else {
        let (sieve, vcov) = sandwich_for_result(data, &result, est.sandwich())?;
        let intervals = confidence_intervals(&result, &vcov, est.level)?;
        let normalized = normalized_intervals(&result.beta_avg, &vcov, result.numeraire, est.level)?;
        result.vcov = Some(vcov.vcov.clone());
        Some(InferenceReport {
            level: est.level,
            options: est.sandwich(),
            sieve_at_average: sieve,
            sandwich: vcov,
            intervals,
            normalized,
        })
    };
    warn(est.quiet, &result.warnings);

    let report = FitReport {
        schema: SCHEMA,
        input: args.input.display().to_string(),
        columns: table.columns,
        n: data.n(),
        p: data.p(),
        result,
        inference,
    };
    let body = match est.format {
        Format::Json => to_json(&report)?,
        Format::Csv => {
            let (header, rows) = report.coefficient_table();
            to_csv(&header, &rows)?
        }
    };
    emit(est.output.as_deref(), &body)
}

fn cmd_simulate(args: &SimulateArgs) -> Result<(), Failure> {
    let est = &args.est;
    let (design, base) = match args.preset {
        Some(p) => {
            let preset = match p {
                PresetArg::PaperNormal => Preset::PaperNormal,
                PresetArg::PaperCauchy => Preset::PaperCauchy,
            };
            (preset.spec(0, est.seed), preset.config())
        }
        None => {
            if args.beta0.is_empty() {
                return Err(Failure::usage("simulate needs --preset or --beta0"));
            }
            let error_dist = match args.errors {
                ErrorsArg::Normal => ErrorDist::Normal,
                ErrorsArg::Cauchy => ErrorDist::Cauchy,
                ErrorsArg::Logistic => ErrorDist::Logistic,
            };
            let spec = DgpSpec {
                beta0: Beta::new(args.beta0.clone())?,
                error_dist,
                x_dist: RegressorLaw::IndependentNormal,
                n: 0,
                seed: est.seed,
            };
            (spec, SsgdConfig::default())
        }
    };
    let sizes = match (&args.n[..], args.preset) {
        ([], Some(_)) => PAPER_SAMPLE_SIZES.to_vec(),
        ([], None) => return Err(Failure::usage("simulate needs --n")),
        (n, _) => n.to_vec(),
    };
    let config = est.apply(base);
    let options = McOptions {
        replications: args.reps,
        estimator: est.estimator(),
        inference: args.coverage.then(|| InferenceSpec {
            level: est.level,
            sandwich: est.sandwich(),
        }),
    };

    let mut reports = Vec::with_capacity(sizes.len());
    for &n in &sizes {
        let spec = DgpSpec { n, ..design.clone() };
        let report = run_monte_carlo(&spec, &config, &options)?;
        if !est.quiet && report.failures > 0 {
            eprintln!(
                "warning: n = {n}: {} of {} replications failed",
                report.failures, report.replications
            );
        }
        reports.push(report);
    }

    let body = match est.format {
        Format::Json => to_json(&SimulationReport {
            schema: SCHEMA,
            reports,
        })?,
        Format::Csv => {
            let (header, rows) = table(&reports);
            to_csv(&header, &rows)?
        }
    };
    emit(est.output.as_deref(), &body)
}

fn cmd_tune(args: &TuneArgs) -> Result<(), Failure> {
    validate_gamma(args.gamma1, args.gamma)?;
    if args.n == 0 || args.p == 0 {
        return Err(Failure::usage("n and p must be positive"));
    }
    let t = default_tuning(args.n, args.p, args.gamma);
    let body = match args.format {
        TuneFormat::Json => to_json(&report::TuneReport {
            schema: SCHEMA,
            n: args.n,
            p: args.p,
            gamma: args.gamma,
            iterations: t.iterations,
            sieve_powers: t.sieve_powers,
            window: t.window,
            warnings: t.warnings,
        })?,
        TuneFormat::Text => {
            let mut s = format!(
                "n = {}, p = {}, gamma = {}\nK = {}\nq = {}\nwindow = [{}, {}]\n",
                args.n, args.p, args.gamma, t.iterations, t.sieve_powers, t.window.0, t.window.1
            );
            for w in &t.warnings {
                s.push_str(&format!("warning: {w}\n"));
            }
            s
        }
    };
    emit(None, &body)
}

fn configure_threads() -> Result<(), Failure> {
    let Ok(raw) = std::env::var("SSGD_THREADS") else {
        return Ok(());
    };
    let threads: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&t| t > 0)
        .ok_or_else(|| Failure::usage(format!("SSGD_THREADS must be a positive integer, got '{raw}'")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| Failure::usage(e.to_string()))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let outcome = configure_threads().and_then(|()| match &cli.command {
        Command::Fit(a) => cmd_fit(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Tune(a) => cmd_tune(a),
    });
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
