use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use subspace_cpd::evaluation::{run_benchmark, standard_cells, BenchmarkCell, BenchmarkOptions};
use subspace_cpd::io::{
    load_csv, matrix_to_csv, standardize, to_json_bytes, write_atomic, CsvOptions, TruthDocument,
};
use subspace_cpd::pipeline::{
    run_detect, tune, OutputFormat, PipelineOptions, ResultDocument, RunConfig,
};
use subspace_cpd::simulation::{
    generate, DistanceReading, Scenario, SyntheticSpec, DEFAULT_AR_COEFFICIENT,
};
use subspace_cpd::tuning::PenaltyShape;

#[derive(Parser)]
#[command(
    name = "subspace-cpd",
    version,
    about = "Detect changes in the low-dimensional subspace of a multivariate time series"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Segment a CSV series.
    Detect(DetectArgs),
    /// Estimate d, lambda and mu without segmenting.
    Tune(TuneArgs),
    /// Write a synthetic series and its ground truth.
    Simulate(SimulateArgs),
    /// Run the replication benchmark on synthetic data.
    Benchmark(BenchmarkArgs),
}

/// A number or `auto`.
#[derive(Debug, Clone, Copy)]
struct Auto<T>(Option<T>);

impl<T: FromStr> FromStr for Auto<T>
where
    T::Err: std::fmt::Display,
{
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        if s.eq_ignore_ascii_case("auto") {
            return Ok(Auto(None));
        }
        s.parse().map(|v| Auto(Some(v))).map_err(|e| format!("{e}"))
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Json,
    Csv,
}

impl From<Format> for OutputFormat {
    fn from(f: Format) -> Self {
        match f {
            Format::Json => OutputFormat::Json,
            Format::Csv => OutputFormat::Csv,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Shape {
    PerChange,
    LogRatio,
    TauLogRatio,
}

impl From<Shape> for PenaltyShape {
    fn from(s: Shape) -> Self {
        match s {
            Shape::PerChange => PenaltyShape::PerChange,
            Shape::LogRatio => PenaltyShape::LogRatio,
            Shape::TauLogRatio => PenaltyShape::TauLogRatio,
        }
    }
}

#[derive(Args)]
struct InputArgs {
    /// CSV file with one row per time point.
    #[arg(long)]
    input: PathBuf,
    /// The first row holds column names.
    #[arg(long)]
    has_header: bool,
    /// 1-based column to drop, e.g. a timestamp.
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    time_column: Option<u64>,
    /// Centre and scale every variable to unit variance first.
    #[arg(long)]
    standardize: bool,
}

impl InputArgs {
    fn csv_options(&self) -> CsvOptions {
        CsvOptions {
            has_header: self.has_header,
            time_column: self.time_column.map(|c| c as usize - 1),
        }
    }
}

#[derive(Args)]
struct SolverArgs {
    /// Minimum segment length.
    #[arg(long, default_value_t = 30)]
    msl: usize,
    /// Scan a log-sized grid of candidates and refine instead of every split.
    #[arg(long)]
    grid: bool,
    /// Half-width of the refinement window in grid mode.
    #[arg(long, default_value_t = 10)]
    refine_window: usize,
    /// Largest number of changes fitted by the slope heuristic.
    #[arg(long, default_value_t = 15)]
    tau_max: usize,
    /// Regressor of the slope heuristic.
    #[arg(long, value_enum, default_value_t = Shape::TauLogRatio)]
    penalty_shape: Shape,
    /// Leading fraction of the series used to estimate d.
    #[arg(long, default_value_t = 0.2)]
    init_fraction: f64,
    /// Upper end of the dimension search.
    #[arg(long)]
    d_max: Option<usize>,
    #[arg(long, default_value_t = 200)]
    max_iters: usize,
    #[arg(long, default_value_t = 1e-6)]
    rel_tol: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

impl SolverArgs {
    fn options(&self) -> PipelineOptions {
        PipelineOptions {
            msl: self.msl,
            grid_mode: self.grid,
            refine_window: self.refine_window,
            tau_max: self.tau_max,
            penalty_shape: self.penalty_shape.into(),
            init_fraction: self.init_fraction,
            d_max: self.d_max,
            max_iters: self.max_iters,
            rel_tol: self.rel_tol,
            seed: self.seed,
        }
    }
}

#[derive(Args)]
struct DetectArgs {
    #[command(flatten)]
    input: InputArgs,
    /// Result file; JSON goes to stdout when omitted.
    #[arg(long)]
    output: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    format: Format,
    /// Subspace dimension or `auto`.
    #[arg(long, default_value = "auto")]
    dim: Auto<usize>,
    /// Nuclear-norm weight or `auto`.
    #[arg(long, default_value = "auto")]
    lambda: Auto<f64>,
    /// Penalty scale or `auto` for the slope heuristic.
    #[arg(long, default_value = "auto")]
    mu: Auto<f64>,
    /// Place exactly this many changes instead of penalising.
    #[arg(long, conflicts_with = "mu")]
    known_k: Option<usize>,
    #[command(flatten)]
    solver: SolverArgs,
}

#[derive(Args)]
struct TuneArgs {
    #[command(flatten)]
    input: InputArgs,
    /// JSON file; stdout when omitted.
    #[arg(long)]
    output: Option<PathBuf>,
    #[arg(long, default_value = "auto")]
    dim: Auto<usize>,
    #[arg(long, default_value = "auto")]
    lambda: Auto<f64>,
    #[command(flatten)]
    solver: SolverArgs,
}

#[derive(Args)]
struct SimulateArgs {
    /// Series CSV, one row per time point.
    #[arg(long)]
    output: PathBuf,
    /// Ground-truth JSON; defaults to `<output stem>.truth.json`.
    #[arg(long)]
    truth: Option<PathBuf>,
    #[arg(long, default_value_t = 20)]
    p: usize,
    #[arg(long, default_value_t = 2)]
    dim: usize,
    #[arg(long, default_value_t = 500)]
    n: usize,
    /// Comma-separated 1-based change-points.
    #[arg(long, value_delimiter = ',', default_value = "100,200,300,400")]
    changepoints: Vec<usize>,
    /// Subspace distance between consecutive segments; defaults to sqrt(d)/2.
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long, default_value = "A", value_parser = parse_scenario)]
    scenario: Scenario,
    /// Overrides the scenario's noise variance.
    #[arg(long)]
    noise_variance: Option<f64>,
    #[arg(long, default_value_t = DEFAULT_AR_COEFFICIENT)]
    ar_coefficient: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Read the target distance without squaring the Frobenius norm.
    #[arg(long)]
    unsquared_distance: bool,
}

#[derive(Args)]
struct BenchmarkArgs {
    /// JSON report.
    #[arg(long)]
    output: PathBuf,
    /// Summary table; defaults to `<output stem>.table.csv`.
    #[arg(long)]
    table: Option<PathBuf>,
    /// Cell as `P:D:S`, e.g. `20:2:A`; repeatable.
    #[arg(long, value_parser = parse_cell)]
    cell: Vec<BenchmarkCell>,
    /// Scenarios crossed with the standard (p, d) grid when no cell is given.
    #[arg(long, value_parser = parse_scenario)]
    scenario: Vec<Scenario>,
    #[arg(long, default_value_t = 100)]
    replications: usize,
    #[command(flatten)]
    solver: SolverArgs,
}

fn parse_scenario(s: &str) -> std::result::Result<Scenario, String> {
    s.parse().map_err(|e| format!("{e}"))
}

fn parse_cell(s: &str) -> std::result::Result<BenchmarkCell, String> {
    s.parse().map_err(|e| format!("{e}"))
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path
        .file_stem()
        .map_or_else(|| "out".into(), |s| s.to_string_lossy().into_owned());
    path.with_file_name(format!("{stem}{suffix}"))
}

fn emit(output: Option<&Path>, bytes: &[u8]) -> Result<()> {
    match output {
        Some(path) => {
            write_atomic(path, bytes).with_context(|| format!("writing {}", path.display()))
        }
        None => {
            use std::io::Write;
            std::io::stdout().write_all(bytes)?;
            Ok(())
        }
    }
}

fn detect(args: DetectArgs) -> Result<()> {
    let cfg = RunConfig {
        input: args.input.input.clone(),
        csv: args.input.csv_options(),
        standardize: args.input.standardize,
        d: args.dim.0,
        lambda: args.lambda.0,
        mu: args.mu.0,
        known_k: args.known_k,
        options: args.solver.options(),
        output: args.output.clone(),
        format: args.format.into(),
    };
    let doc = run_detect(&cfg)?;
    eprintln!("change-points: {:?}", doc.changepoints);
    match args.format {
        Format::Json => emit(args.output.as_deref(), &to_json_bytes(&doc)?),
        Format::Csv => {
            let Some(path) = args.output.as_deref() else {
                bail!("--format csv needs --output");
            };
            write_csv_outputs(path, &doc)
        }
    }
}

fn write_csv_outputs(path: &Path, doc: &ResultDocument) -> Result<()> {
    let mut segments = csv::Writer::from_writer(Vec::new());
    segments.write_record([
        "segment",
        "first",
        "last",
        "dim",
        "fit",
        "nuclear",
        "regularized_total",
    ])?;
    for (i, s) in doc.segments.iter().enumerate() {
        segments.write_record([
            i.to_string(),
            s.first.to_string(),
            s.last.to_string(),
            s.dim.to_string(),
            format!("{:?}", s.fit),
            format!("{:?}", s.nuclear),
            format!("{:?}", s.regularized_total),
        ])?;
    }
    write_atomic(path, &segments.into_inner()?)?;

    let mut curve = csv::Writer::from_writer(Vec::new());
    curve.write_record(["k", "loss", "penalized"])?;
    for point in &doc.loss_curve {
        curve.write_record([
            point.k.to_string(),
            format!("{:?}", point.loss),
            point
                .penalized
                .map(|v| format!("{v:?}"))
                .unwrap_or_default(),
        ])?;
    }
    write_atomic(sibling(path, ".loss_curve.csv"), &curve.into_inner()?)?;

    let mut scans = csv::Writer::from_writer(Vec::new());
    scans.write_record(["first", "last", "level", "candidate", "statistic"])?;
    for profile in &doc.scan_profiles {
        for (k, t) in profile.candidates.iter().zip(&profile.statistics) {
            scans.write_record([
                (profile.start + 1).to_string(),
                profile.end.to_string(),
                profile.level.to_string(),
                k.to_string(),
                format!("{t:?}"),
            ])?;
        }
    }
    write_atomic(sibling(path, ".scan_profiles.csv"), &scans.into_inner()?)?;
    Ok(())
}

fn tune_cmd(args: TuneArgs) -> Result<()> {
    let x = load_csv(&args.input.input, &args.input.csv_options())
        .with_context(|| format!("loading {}", args.input.input.display()))?;
    let x = if args.input.standardize {
        standardize(&x)?.0
    } else {
        x
    };
    let opts = args.solver.options();
    let tuned = tune(
        &x,
        args.dim.0,
        args.lambda.0,
        subspace_cpd::pipeline::Stopping::Auto,
        &opts,
    )?;
    eprintln!(
        "d = {}, lambda = {}, mu = {:?}",
        tuned.d, tuned.lambda, tuned.mu
    );
    emit(args.output.as_deref(), &to_json_bytes(&tuned)?)
}

fn simulate(args: SimulateArgs) -> Result<()> {
    let spec = SyntheticSpec {
        p: args.p,
        d: args.dim,
        n: args.n,
        changepoints: args.changepoints.clone(),
        delta: args.delta.unwrap_or((args.dim as f64).sqrt() / 2.0),
        scenario: args.scenario,
        noise_variance: args
            .noise_variance
            .unwrap_or(args.scenario.default_variance()),
        ar_coefficient: args.ar_coefficient,
        seed: args.seed,
        distance_reading: if args.unsquared_distance {
            DistanceReading::Unsquared
        } else {
            DistanceReading::Squared
        },
    };
    let (x, truth) = generate(&spec)?;
    let truth_path = args
        .truth
        .unwrap_or_else(|| sibling(&args.output, ".truth.json"));
    write_atomic(&args.output, &matrix_to_csv(x.values())?)?;
    write_atomic(
        &truth_path,
        &to_json_bytes(&TruthDocument::new(&spec, &truth))?,
    )?;
    eprintln!(
        "wrote {} and {}",
        args.output.display(),
        truth_path.display()
    );
    Ok(())
}

fn benchmark(args: BenchmarkArgs) -> Result<()> {
    let cells = if args.cell.is_empty() {
        let scenarios = if args.scenario.is_empty() {
            Scenario::ALL.to_vec()
        } else {
            args.scenario.clone()
        };
        standard_cells(&scenarios)
    } else {
        args.cell.clone()
    };
    let options = BenchmarkOptions {
        replications: args.replications,
        base_seed: args.solver.seed,
        pipeline: args.solver.options(),
    };
    let report = run_benchmark(&cells, &options)?;
    for row in &report.rows {
        eprintln!(
            "p={:<4} d={:<3} {}  TNC {}/{}  VM {:.4}",
            row.p, row.d, row.scenario, row.tnc_count, row.replications, row.mean_vm
        );
    }
    let table = args
        .table
        .unwrap_or_else(|| sibling(&args.output, ".table.csv"));
    write_atomic(&args.output, &to_json_bytes(&report)?)?;
    write_atomic(&table, &report.table_csv()?)?;
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Detect(a) => detect(a),
        Command::Tune(a) => tune_cmd(a),
        Command::Simulate(a) => simulate(a),
        Command::Benchmark(a) => benchmark(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
