use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use robust_es::{EsMethod, GammaRule, SolverControl};
use robust_es_cli::fit::{parse_gamma, run_fit, FitRequest};
use robust_es_cli::input::{read_csv_file, Column};
use robust_es_cli::output::{emit, to_json, write_atomic};
use robust_es_cli::simulate::{run_settings, write_study, SimFile};
use robust_es_cli::tables::{is_smoke, render, Status, TableId};
use robust_es_cli::{CliError, CliResult, EXIT_BAND, EXIT_INPUT};

/// Two-step expected shortfall regression with robust and non-crossing variants.
#[derive(Parser)]
#[command(name = "robust-es", version)]
struct Cli {
    /// Worker threads for replications (default: all cores).
    #[arg(long, global = true, env = "ESREG_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit quantile and ES regressions to a CSV file and print a JSON report.
    Fit(FitArgs),
    /// Run a Monte Carlo study and write report.json and summary.csv.
    Simulate(SimArgs),
    /// Rerun a published table and compare against its reference values.
    Replicate(ReplicateArgs),
}

#[derive(Args)]
struct FitArgs {
    /// Input CSV with a header row.
    input: PathBuf,
    /// Response column, by header name or zero-based index.
    #[arg(long, short = 'y', default_value = "y")]
    response: Column,
    #[arg(long, default_value_t = 0.1)]
    alpha: f64,
    /// ls, huber, nc-ls or nc-huber.
    #[arg(long, default_value = "huber")]
    method: EsMethod,
    #[arg(long, default_value_t = 0.95)]
    level: f64,
    /// Covariance truncation: default, plain, scaled:C or a number.
    #[arg(long, value_parser = parse_gamma)]
    gamma: Option<GammaRule>,
    /// First-stage smoothing bandwidth (default: max(0.05, ((p + ln n)/n)^0.4)).
    #[arg(long)]
    bandwidth: Option<f64>,
    /// Accepted for interface symmetry; fitting is deterministic.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = SolverControl::default().tol)]
    tol: f64,
    #[arg(long, default_value_t = SolverControl::default().max_iter)]
    max_iter: usize,
    /// Output file; stdout when omitted or `-`.
    #[arg(long, short)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct SimArgs {
    /// TOML or JSON configuration; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Run the settings of a table preset instead.
    #[arg(long)]
    table: Option<TableId>,
    /// location-scale or noncross.
    #[arg(long)]
    design: Option<String>,
    #[arg(long)]
    radius: Option<f64>,
    #[arg(long)]
    p: Option<usize>,
    /// normal or t<df>, e.g. t2.5.
    #[arg(long)]
    dist: Option<String>,
    /// One or more quantile levels, comma separated.
    #[arg(long, value_delimiter = ',')]
    alpha: Option<Vec<f64>>,
    /// Sample size (default: ceil(50p/alpha)).
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    reps: Option<usize>,
    /// Comma-separated methods: ls, huber, nc-ls, nc-huber, oracle.
    #[arg(long, value_delimiter = ',')]
    methods: Option<Vec<String>>,
    #[arg(long)]
    seed: Option<u64>,
    /// Confidence level; 0 disables inference.
    #[arg(long)]
    level: Option<f64>,
    #[arg(long)]
    gamma: Option<String>,
    /// near-exact, default, or a bandwidth.
    #[arg(long)]
    first_stage: Option<String>,
    /// Redraw the slope coefficients in every replication.
    #[arg(long)]
    redraw: bool,
    /// Count the intercept in the relative error.
    #[arg(long)]
    rel_error_intercept: bool,
    /// Record per-fit wall time (makes reports run-dependent).
    #[arg(long)]
    timings: bool,
    /// Scale factor for preset sample sizes.
    #[arg(long, default_value_t = 1.0)]
    scale: f64,
    #[arg(long, short = 'o', default_value = ".")]
    out_dir: PathBuf,
}

#[derive(Args)]
struct ReplicateArgs {
    /// t-relerr, normal-relerr, t-coverage, normal-coverage, noncross-fig or noncross-fig-t.
    table: TableId,
    /// Replications (default: 200 for error tables, 500 otherwise).
    #[arg(long)]
    reps: Option<usize>,
    /// Scale factor for the sample sizes.
    #[arg(long, default_value_t = 1.0)]
    scale: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Also write report.json, summary.csv and checks.json here.
    #[arg(long, short = 'o')]
    out_dir: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_INPUT as u8 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("robust-es: {e}");
            ExitCode::from(e.code as u8)
        }
    }
}

fn run(cli: Cli) -> CliResult<()> {
    if let Some(t) = cli.threads {
        if t == 0 {
            return Err(CliError::input("--threads must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .map_err(|e| CliError::input(format!("thread pool: {e}")))?;
    }
    match cli.command {
        Command::Fit(a) => fit(a),
        Command::Simulate(a) => simulate(a),
        Command::Replicate(a) => replicate(a),
    }
}

fn fit(a: FitArgs) -> CliResult<()> {
    let table = read_csv_file(&a.input, &a.response)?;
    let mut req = FitRequest::new(a.alpha, a.method);
    req.level = a.level;
    req.gamma = a.gamma;
    req.bandwidth = a.bandwidth;
    req.control = SolverControl { tol: a.tol, max_iter: a.max_iter, ..SolverControl::default() };
    req.control.validate().map_err(|e| CliError::from_lib("solver control", e))?;
    let mut columns = vec!["(intercept)".to_string()];
    columns.extend(table.covariates);
    let report = run_fit(&table.data, columns, &req)?;
    emit(a.output.as_deref(), &to_json(&report)?)
}

fn simulate(a: SimArgs) -> CliResult<()> {
    let settings = if let Some(t) = a.table {
        let reps = a.reps.unwrap_or(t.default_reps());
        t.settings(reps, a.scale, a.seed.unwrap_or(0))
    } else {
        let file = match &a.config {
            Some(p) => SimFile::load(p)?,
            None => SimFile::default(),
        };
        let (alpha, alphas) = match a.alpha {
            Some(v) if v.len() == 1 => (Some(v[0]), None),
            Some(v) => (None, Some(v)),
            None => (None, None),
        };
        let flags = SimFile {
            design: a.design,
            radius: a.radius,
            p: a.p,
            dist: a.dist,
            alpha,
            alphas,
            n: a.n,
            reps: a.reps,
            methods: a.methods,
            seed: a.seed,
            level: a.level,
            gamma: a.gamma,
            first_stage: a.first_stage,
            redraw: a.redraw.then_some(true),
            rel_error_intercept: a.rel_error_intercept.then_some(true),
            timings: a.timings.then_some(true),
            tol: None,
            max_iter: None,
        };
        let mut merged = file.clone().merge(flags);
        // A single --alpha replaces a list from the file and vice versa.
        if merged.alpha.is_some() && merged.alphas.is_some() {
            if file.alphas.is_some() && merged.alpha != file.alpha {
                merged.alphas = None;
            } else {
                merged.alpha = None;
            }
        }
        merged.settings()?
    };
    let study = run_settings(settings)?;
    write_study(&a.out_dir, &study)?;
    for s in &study.settings {
        let failed = s.report.records.iter().filter(|r| r.error.is_some()).count();
        eprintln!("{}: {} replications, n = {}, {failed} failed", s.label, s.report.records.len(), s.report.n);
    }
    Ok(())
}

fn replicate(a: ReplicateArgs) -> CliResult<()> {
    if !(a.scale > 0.0 && a.scale.is_finite()) {
        return Err(CliError::input("--scale must be positive"));
    }
    let reps = a.reps.unwrap_or(a.table.default_reps());
    let smoke = is_smoke(a.table, reps, a.scale);
    let study = run_settings(a.table.settings(reps, a.scale, a.seed))?;
    let reports: Vec<_> = study.settings.iter().map(|s| &s.report).collect();
    let checks = a.table.checks(&reports);
    print!("{}", render(a.table, &checks, smoke));
    if let Some(dir) = &a.out_dir {
        write_study(dir, &study)?;
        write_atomic(&dir.join("checks.json"), to_json(&checks)?.as_bytes())?;
    }
    let failed = checks.iter().filter(|c| c.status == Status::Fail).count();
    if failed > 0 && !smoke {
        return Err(CliError { code: EXIT_BAND, message: format!("{failed} check(s) outside their bands") });
    }
    Ok(())
}
