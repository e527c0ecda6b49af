//! `vmsim` command line: simulate, batch, schedule build, times service and
//! analysis behind one entry point.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use vmsim_core::analysis::{aggregate, parse_results, render_report, ReportFormat};
use vmsim_core::engine::{self, CSV_HEADER};
use vmsim_core::model::{parse_workload_csv, write_workload_csv, DemandEstimator, DomainSize};
use vmsim_core::runner::{build_matrix, run_batch, FactorLists};
use vmsim_core::schedule::{build_schedule, load_schedule, save_schedule, BuilderParams, LifetimeDist, Schedule};
use vmsim_core::times::{SeriesStore, TimesClient, TimesServer};
use vmsim_core::workload::{WorkloadLocation, WorkloadSource};
use vmsim_core::SimulationConfig;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_FAILED: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "vmsim", version, about = "Discrete-event simulator for dynamic VM allocation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run one simulation and print its RESULT line.
    Simulate(SimulateArgs),
    /// Run the full factor-level matrix.
    Batch(BatchArgs),
    /// Schedule tools.
    #[command(subcommand)]
    Schedule(ScheduleCommand),
    /// Workload series service.
    #[command(subcommand)]
    Times(TimesCommand),
    /// Aggregate a results CSV into a report.
    Analyze(AnalyzeArgs),
}

/// Where series come from; overrides the config's `workloads` section.
#[derive(Debug, Args, Clone)]
struct SourceArgs {
    /// Local store directory.
    #[arg(long, conflicts_with = "addr")]
    store: Option<PathBuf>,
    /// Address of a running times service.
    #[arg(long)]
    addr: Option<String>,
}

impl SourceArgs {
    fn location(&self) -> Option<WorkloadLocation> {
        match (&self.store, &self.addr) {
            (Some(d), _) => Some(WorkloadLocation::Dir(d.clone())),
            (_, Some(a)) => Some(WorkloadLocation::Addr(a.clone())),
            _ => None,
        }
    }
}

#[derive(Debug, Args)]
struct SimulateArgs {
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config's schedule path.
    #[arg(long)]
    schedule: Option<PathBuf>,
    /// Append the result row to this CSV (header written when new).
    #[arg(long)]
    csv: Option<PathBuf>,
    /// Print the effective config as JSON and exit.
    #[arg(long)]
    dump_config: bool,
    #[command(flatten)]
    source: SourceArgs,
}

#[derive(Debug, Args)]
struct BatchArgs {
    #[arg(long, value_delimiter = ',', required = true)]
    initial: Vec<String>,
    #[arg(long, value_delimiter = ',', default_value = "none")]
    realloc: Vec<String>,
    #[arg(long, value_delimiter = ',', default_value = "none")]
    placement: Vec<String>,
    #[arg(long, value_delimiter = ',', default_value = "max")]
    estimators: Vec<String>,
    #[arg(long, value_delimiter = ',', default_value = "0")]
    seeds: Vec<u64>,
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    schedule: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    err: PathBuf,
    #[arg(long, default_value_t = 1)]
    parallelism: usize,
    #[command(flatten)]
    source: SourceArgs,
}

#[derive(Debug, Subcommand)]
enum ScheduleCommand {
    /// Generate a schedule with Poisson arrivals.
    Build(BuildArgs),
}

#[derive(Debug, Args)]
struct BuildArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Arrival rate per second.
    #[arg(long)]
    rate: f64,
    #[arg(long)]
    mean_lifetime: f64,
    #[arg(long, value_enum, default_value = "exponential")]
    lifetime_dist: DistArg,
    #[arg(long)]
    horizon: u64,
    /// JSON array of `{cpu_units, memory_mb, probability}`.
    #[arg(long)]
    sizes: PathBuf,
    /// Every stored series whose name starts with this prefix.
    #[arg(long)]
    series_pool: String,
    #[arg(long)]
    id: Option<String>,
    #[command(flatten)]
    source: SourceArgs,
}

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
enum DistArg {
    Exponential,
    Fixed,
}

#[derive(Debug, Subcommand)]
enum TimesCommand {
    /// Serve a store directory over TCP.
    Serve {
        #[arg(long)]
        listen: String,
        #[arg(long)]
        store: PathBuf,
    },
    /// Import a `t_s,util_pct` CSV as a series.
    Put {
        name: String,
        #[arg(long)]
        file: PathBuf,
        #[command(flatten)]
        source: SourceArgs,
    },
    /// Print a series as CSV.
    Get {
        name: String,
        #[command(flatten)]
        source: SourceArgs,
    },
    /// List series names.
    List {
        #[arg(default_value = "")]
        prefix: String,
        #[command(flatten)]
        source: SourceArgs,
    },
}

#[derive(Debug, Args)]
struct AnalyzeArgs {
    csv: PathBuf,
    /// `.html` selects HTML, anything else Markdown.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    svg: bool,
}

/// A failure carrying its exit code.
#[derive(Debug)]
struct Failure {
    code: i32,
    message: String,
}

fn config_err(message: impl std::fmt::Display) -> Failure {
    Failure {
        code: EXIT_CONFIG,
        message: message.to_string(),
    }
}

fn run_err(message: impl std::fmt::Display) -> Failure {
    Failure {
        code: EXIT_FAILED,
        message: message.to_string(),
    }
}

type Outcome = Result<i32, Failure>;

/// Parses `argv` (including the program name), runs the command and returns
/// the process exit code.
pub fn dispatch<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let stdout = std::io::stdout();
    let stderr = std::io::stderr();
    dispatch_to(argv, &mut stdout.lock(), &mut stderr.lock())
}

/// [`dispatch`] with explicit output streams.
pub fn dispatch_to<I, T>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(out, "{}", e.render());
                    return EXIT_OK;
                }
                _ => EXIT_USAGE,
            };
            let _ = write!(err, "{}", e.render());
            return code;
        }
    };
    let result = match cli.command {
        Command::Simulate(a) => simulate(a, out),
        Command::Batch(a) => batch(a, out),
        Command::Schedule(ScheduleCommand::Build(a)) => schedule_build(a, out),
        Command::Times(t) => times(t, out),
        Command::Analyze(a) => analyze(a, out),
    };
    match result {
        Ok(code) => code,
        Err(f) => {
            let _ = writeln!(err, "error: {}", f.message);
            f.code
        }
    }
}

fn load_config(path: &Path) -> Result<SimulationConfig, Failure> {
    SimulationConfig::load(path).map_err(config_err)
}

fn read_schedule(path: &Path) -> Result<Schedule, Failure> {
    let text = fs::read_to_string(path).map_err(|e| config_err(format!("cannot read schedule {}: {e}", path.display())))?;
    load_schedule(&text).map_err(|e| config_err(format!("{}: {e}", path.display())))
}

fn resolve_schedule(flag: Option<PathBuf>, config: &SimulationConfig) -> Result<Schedule, Failure> {
    let path = flag
        .or_else(|| config.schedule.clone())
        .ok_or_else(|| config_err("schedule: no schedule given (config `schedule` or --schedule)"))?;
    read_schedule(&path)
}

fn resolve_location(source: &SourceArgs, config: &SimulationConfig) -> Result<WorkloadLocation, Failure> {
    source
        .location()
        .or_else(|| config.workloads.clone())
        .ok_or_else(|| config_err("workloads: no workload source given (config `workloads`, --store or --addr)"))
}

fn open_source(location: &WorkloadLocation) -> Result<Box<dyn WorkloadSource + Send>, Failure> {
    location.open().map_err(config_err)
}

fn simulate(a: SimulateArgs, out: &mut dyn Write) -> Outcome {
    let mut config = load_config(&a.config)?;
    if let Some(s) = &a.schedule {
        config.schedule = Some(s.clone());
    }
    if let Some(l) = a.source.location() {
        config.workloads = Some(l);
    }
    if a.dump_config {
        writeln!(out, "{}", config.to_json()).map_err(run_err)?;
        return Ok(EXIT_OK);
    }
    let schedule = resolve_schedule(None, &config)?;
    let location = resolve_location(&a.source, &config)?;
    let mut source = open_source(&location)?;
    let result = engine::run(&config, &schedule, source.as_mut());
    if let Some(path) = &a.csv {
        append_csv_row(path, &result).map_err(|e| run_err(format!("cannot write {}: {e}", path.display())))?;
    }
    if !result.is_ok() {
        return Err(run_err(format!(
            "simulation failed: {}",
            result.message.as_deref().unwrap_or("unknown error")
        )));
    }
    writeln!(out, "{}", result.summary_line()).map_err(run_err)?;
    Ok(EXIT_OK)
}

fn append_csv_row(path: &Path, result: &engine::SimulationResult) -> std::io::Result<()> {
    let fresh = fs::metadata(path).map(|m| m.len() == 0).unwrap_or(true);
    let mut file = fs::OpenOptions::new().create(true).append(true).open(path)?;
    if fresh {
        writeln!(file, "{CSV_HEADER}")?;
    }
    file.write_all(result.csv_row().as_bytes())
}

fn batch(a: BatchArgs, out: &mut dyn Write) -> Outcome {
    let config = load_config(&a.config)?;
    let estimators = a
        .estimators
        .iter()
        .map(|e| e.parse::<DemandEstimator>())
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| config_err(format!("estimators: {e}")))?;
    let lists = FactorLists {
        initial: a.initial,
        reallocation: a.realloc,
        placement: a.placement,
        estimators,
        seeds: a.seeds,
    };
    let matrix = build_matrix(&lists).map_err(config_err)?;
    if a.parallelism == 0 {
        return Err(config_err("parallelism: must be at least 1"));
    }
    let schedule = resolve_schedule(a.schedule, &config)?;
    let location = resolve_location(&a.source, &config)?;
    let factory = move || location.open();
    let summary = run_batch(&matrix, &config, &schedule, &factory, a.parallelism, &a.out, &a.err).map_err(config_err)?;
    writeln!(
        out,
        "BATCH total={} succeeded={} failed={} wall_ms={}",
        summary.total, summary.succeeded, summary.failed, summary.wall_ms
    )
    .map_err(run_err)?;
    Ok(summary.exit_code())
}

fn schedule_build(a: BuildArgs, out: &mut dyn Write) -> Outcome {
    let sizes_text = fs::read_to_string(&a.sizes).map_err(|e| config_err(format!("sizes: cannot read {}: {e}", a.sizes.display())))?;
    let sizes: Vec<DomainSize> = serde_json::from_str(&sizes_text).map_err(|e| config_err(format!("sizes: {e}")))?;
    let location = a
        .source
        .location()
        .ok_or_else(|| config_err("series pool needs --store or --addr"))?;
    let series_pool = open_source(&location)?.names(&a.series_pool).map_err(run_err)?;
    let params = BuilderParams {
        id: a.id.unwrap_or_else(|| format!("poisson-{}", a.seed)),
        arrival_rate_per_s: a.rate,
        mean_lifetime_s: a.mean_lifetime,
        lifetime_dist: match a.lifetime_dist {
            DistArg::Exponential => LifetimeDist::Exponential,
            DistArg::Fixed => LifetimeDist::Fixed,
        },
        horizon_s: a.horizon,
        sizes,
        series_pool,
        seed: a.seed,
    };
    let schedule = build_schedule(&params).map_err(config_err)?;
    fs::write(&a.out, save_schedule(&schedule)).map_err(|e| run_err(format!("cannot write {}: {e}", a.out.display())))?;
    writeln!(out, "wrote {} entries to {}", schedule.entries.len(), a.out.display()).map_err(run_err)?;
    Ok(EXIT_OK)
}

enum Endpoint {
    Store(SeriesStore),
    Client(TimesClient),
}

fn endpoint(source: &SourceArgs) -> Result<Endpoint, Failure> {
    match source.location() {
        Some(WorkloadLocation::Dir(d)) => SeriesStore::open(d).map(Endpoint::Store).map_err(config_err),
        Some(WorkloadLocation::Addr(a)) => TimesClient::connect(a.as_str()).map(Endpoint::Client).map_err(run_err),
        None => Err(config_err("need --store DIR or --addr HOST:PORT")),
    }
}

fn times(cmd: TimesCommand, out: &mut dyn Write) -> Outcome {
    match cmd {
        TimesCommand::Serve { listen, store } => {
            let store = SeriesStore::open(store).map_err(config_err)?;
            let server = TimesServer::bind(store, listen.as_str()).map_err(run_err)?;
            writeln!(out, "listening on {}", server.local_addr()).map_err(run_err)?;
            out.flush().map_err(run_err)?;
            server.run();
            Ok(EXIT_OK)
        }
        TimesCommand::Put { name, file, source } => {
            let reader = fs::File::open(&file).map_err(|e| config_err(format!("cannot read {}: {e}", file.display())))?;
            let series = parse_workload_csv(&name, reader).map_err(|e| config_err(format!("{}: {e}", file.display())))?;
            match endpoint(&source)? {
                Endpoint::Store(s) => s.put(&name, &series).map_err(run_err)?,
                Endpoint::Client(mut c) => c.put(&name, &series).map_err(run_err)?,
            }
            Ok(EXIT_OK)
        }
        TimesCommand::Get { name, source } => {
            let series = match endpoint(&source)? {
                Endpoint::Store(s) => s.get(&name).map_err(run_err)?,
                Endpoint::Client(mut c) => c.get(&name).map_err(run_err)?,
            };
            write_workload_csv(&series, out).map_err(run_err)?;
            Ok(EXIT_OK)
        }
        TimesCommand::List { prefix, source } => {
            let names = match endpoint(&source)? {
                Endpoint::Store(s) => s.list(&prefix).map_err(run_err)?,
                Endpoint::Client(mut c) => c.list(&prefix).map_err(run_err)?,
            };
            for n in names {
                writeln!(out, "{n}").map_err(run_err)?;
            }
            Ok(EXIT_OK)
        }
    }
}

fn analyze(a: AnalyzeArgs, out: &mut dyn Write) -> Outcome {
    let file = fs::File::open(&a.csv).map_err(|e| config_err(format!("cannot read {}: {e}", a.csv.display())))?;
    let rows = parse_results(file).map_err(config_err)?;
    let agg = aggregate(&rows).map_err(config_err)?;
    let doc = render_report(&agg, ReportFormat::from_path(&a.out), a.svg);
    fs::write(&a.out, doc).map_err(|e| run_err(format!("cannot write {}: {e}", a.out.display())))?;
    writeln!(out, "wrote {} groups to {}", agg.len(), a.out.display()).map_err(run_err)?;
    Ok(EXIT_OK)
}
