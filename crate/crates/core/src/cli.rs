//! The `georoute` command line.
//!
//! Exit codes: 0 success, 1 usage, 2 config, 3 runtime.

use crate::cost::{fit_prefill_calibration, read_observations_csv, CostError};
use crate::policy::Strategy;
use crate::sim::config::{ConfigError, SimConfig};
use crate::sim::sweep::{run_sweep, SweepReport};
use crate::sim::{run, SimError, SimOutput};
use crate::telemetry::{compare_policies, comparison_svg, write_ttft_csv, ChartStat, RunReport};
use crate::workload::ArrivalSpec;
use clap::{Args, Parser, Subcommand, ValueEnum};
use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use thiserror::Error;

pub const ENV_SEED: &str = "GEOROUTE_SEED";
pub const ENV_OUT: &str = "GEOROUTE_OUT";

#[derive(Debug, Parser)]
#[command(name = "georoute", version, about = "Geo-distributed LLM request routing simulator")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit a prefill model from `input_tokens,ttft_ms` samples.
    Calibrate {
        samples: PathBuf,
        #[arg(long, env = ENV_OUT)]
        out: Option<PathBuf>,
    },
    /// Run one strategy (or a rate sweep) and write its artifacts.
    Simulate(RunArgs),
    /// Run several strategies on the same seeded workload.
    Compare {
        #[command(flatten)]
        run: RunArgs,
        /// Comma-separated; the first is the ratio baseline.
        #[arg(long, value_delimiter = ',', default_value = "least_load,prefix_trie,gorgo,gorgo_proxy")]
        strategies: Vec<String>,
    },
    /// Render tables and charts from saved report.json files.
    Report {
        #[arg(required = true)]
        reports: Vec<PathBuf>,
        #[arg(long, env = ENV_OUT)]
        out: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Format::Table)]
        format: Format,
    },
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long, env = ENV_SEED)]
    pub seed: Option<u64>,
    #[arg(long, env = ENV_OUT, default_value = "out")]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value_t = Format::Table)]
    pub format: Format,
    /// Validate the config and exit.
    #[arg(long)]
    pub check_config: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Table,
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Config(_) => 2,
            CliError::Runtime(_) => 3,
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        match e {
            SimError::Config(c) => c.into(),
            other => CliError::Runtime(other.to_string()),
        }
    }
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(format!("{}: {e}", path.display()))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    fs::write(path, bytes).map_err(|e| io_err(path, e))
}

fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))
}

/// Parses `args` (including the program name) and runs the command. Output
/// meant for the terminal goes to `stdout`.
pub fn run_cli<I, T>(args: I, stdout: &mut dyn Write) -> Result<(), CliError>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            // --help / --version
            write!(stdout, "{e}").map_err(|e| CliError::Runtime(e.to_string()))?;
            return Ok(());
        }
        Err(e) => return Err(CliError::Usage(e.to_string())),
    };
    match cli.command {
        Command::Calibrate { samples, out } => calibrate(&samples, out.as_deref(), stdout),
        Command::Simulate(args) => simulate(&args, stdout),
        Command::Compare { run, strategies } => compare(&run, &strategies, stdout),
        Command::Report { reports, out, format } => report(&reports, out.as_deref(), format, stdout),
    }
}

fn emit(stdout: &mut dyn Write, text: &str) -> Result<(), CliError> {
    stdout.write_all(text.as_bytes()).map_err(|e| CliError::Runtime(e.to_string()))
}

fn calibrate(samples: &Path, out: Option<&Path>, stdout: &mut dyn Write) -> Result<(), CliError> {
    let file = fs::File::open(samples).map_err(|e| CliError::Config(format!("{}: {e}", samples.display())))?;
    let obs = read_observations_csv(file).map_err(|e| CliError::Config(e.to_string()))?;
    let cal = fit_prefill_calibration(&obs).map_err(|e| match e {
        CostError::InsufficientData(_) | CostError::DegenerateDesign(_) => CliError::Runtime(e.to_string()),
        other => CliError::Config(other.to_string()),
    })?;
    let json = serde_json::to_string_pretty(&cal).expect("calibration serializes") + "\n";
    if let Some(dir) = out {
        ensure_dir(dir)?;
        write_file(&dir.join("calibration.json"), json.as_bytes())?;
    }
    emit(stdout, &json)
}

fn load_config(args: &RunArgs) -> Result<SimConfig, CliError> {
    let mut cfg = SimConfig::load(&args.config)?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn write_run(dir: &Path, out: &SimOutput) -> Result<(), CliError> {
    ensure_dir(dir)?;
    write_file(&dir.join("events.jsonl"), out.event_log_jsonl().as_bytes())?;
    write_file(&dir.join("report.json"), out.report.to_json().as_bytes())?;
    write_file(&dir.join("report.txt"), out.report.to_table().as_bytes())?;
    let mut csv = Vec::new();
    write_ttft_csv(&mut csv, &out.traces).map_err(|e| CliError::Runtime(e.to_string()))?;
    write_file(&dir.join("ttft.csv"), &csv)
}

fn sweep_table(s: &SweepReport) -> String {
    let mut t = format!("{:>5}  {:>8}  {:>12}  {:>12}  {:>8}\n", "stage", "rate", "p50 ttft ms", "p99 ttft ms", "rejected");
    let fmt = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.2}"));
    for st in &s.stages {
        let m = &st.report.metrics.ttft_ms;
        t += &format!(
            "{:>5}  {:>8.2}  {:>12}  {:>12}  {:>8}\n",
            st.stage,
            st.rate,
            fmt(m.median),
            fmt(m.p99),
            st.report.rejected
        );
    }
    t += &format!("stop: {:?} at {:.2} req/s\n", s.stop, s.stop_rate());
    t
}

fn simulate(args: &RunArgs, stdout: &mut dyn Write) -> Result<(), CliError> {
    let cfg = load_config(args)?;
    if args.check_config {
        return emit(stdout, &format!("ok {} digest {}\n", args.config.display(), cfg.digest()));
    }
    if matches!(cfg.workload.arrival, ArrivalSpec::Sweep { .. }) {
        let sweep = run_sweep(&cfg)?;
        ensure_dir(&args.out)?;
        let json = serde_json::to_string_pretty(&sweep).expect("sweep serializes") + "\n";
        let table = sweep_table(&sweep);
        write_file(&args.out.join("sweep.json"), json.as_bytes())?;
        write_file(&args.out.join("sweep.txt"), table.as_bytes())?;
        return emit(stdout, if args.format == Format::Json { &json } else { &table });
    }
    let out = run(&cfg)?;
    write_run(&args.out, &out)?;
    match args.format {
        Format::Json => emit(stdout, &out.report.to_json()),
        Format::Table => emit(stdout, &out.report.to_table()),
    }
}

fn parse_strategies(names: &[String]) -> Result<Vec<Strategy>, CliError> {
    let list: Vec<Strategy> = names
        .iter()
        .map(|n| n.trim().parse::<Strategy>().map_err(|e| CliError::Usage(format!("--strategies: {e}"))))
        .collect::<Result<_, _>>()?;
    if list.len() < 2 {
        return Err(CliError::Usage("--strategies needs at least two entries".into()));
    }
    for (i, s) in list.iter().enumerate() {
        if list[..i].contains(s) {
            return Err(CliError::Usage(format!("--strategies: {s} listed twice")));
        }
    }
    Ok(list)
}

fn write_comparison(
    dir: &Path,
    reports: &[RunReport],
    format: Format,
    stdout: &mut dyn Write,
) -> Result<(), CliError> {
    let baseline = reports[0].strategy.clone();
    let cmp = compare_policies(reports, &baseline).map_err(|e| CliError::Runtime(e.to_string()))?;
    ensure_dir(dir)?;
    let json = serde_json::to_string_pretty(&cmp).expect("comparison serializes") + "\n";
    let table = cmp.to_table();
    write_file(&dir.join("comparison.json"), json.as_bytes())?;
    write_file(&dir.join("comparison.txt"), table.as_bytes())?;
    write_file(&dir.join("median.svg"), comparison_svg(&cmp, ChartStat::Median).as_bytes())?;
    write_file(&dir.join("mean.svg"), comparison_svg(&cmp, ChartStat::Mean).as_bytes())?;
    emit(stdout, if format == Format::Json { &json } else { &table })
}

fn compare(args: &RunArgs, names: &[String], stdout: &mut dyn Write) -> Result<(), CliError> {
    let strategies = parse_strategies(names)?;
    let cfg = load_config(args)?;
    if args.check_config {
        return emit(stdout, &format!("ok {} digest {}\n", args.config.display(), cfg.digest()));
    }
    if matches!(cfg.workload.arrival, ArrivalSpec::Sweep { .. }) {
        return Err(CliError::Usage("compare takes a fixed-rate workload; run sweeps with simulate".into()));
    }
    let outputs: Vec<Result<SimOutput, SimError>> = std::thread::scope(|scope| {
        let handles: Vec<_> = strategies
            .iter()
            .map(|&s| {
                let mut c = cfg.clone();
                c.policy.strategy = s;
                scope.spawn(move || run(&c))
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("simulation thread panicked")).collect()
    });
    let mut reports = Vec::with_capacity(outputs.len());
    for (s, out) in strategies.iter().zip(outputs) {
        let out = out?;
        write_run(&args.out.join(s.as_str()), &out)?;
        reports.push(out.report);
    }
    write_comparison(&args.out, &reports, args.format, stdout)
}

fn report(paths: &[PathBuf], out: Option<&Path>, format: Format, stdout: &mut dyn Write) -> Result<(), CliError> {
    let mut reports = Vec::with_capacity(paths.len());
    for p in paths {
        let text = fs::read_to_string(p).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?;
        reports.push(RunReport::from_json(&text).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?);
    }
    if reports.len() == 1 {
        let r = &reports[0];
        return emit(stdout, &if format == Format::Json { r.to_json() } else { r.to_table() });
    }
    let dir = out.ok_or_else(|| CliError::Usage("report with several inputs needs --out".into()))?;
    write_comparison(dir, &reports, format, stdout)
}
