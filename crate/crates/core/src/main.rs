use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::Value;

use rismf::acceptance::{self, SuiteConfig};
use rismf::experiments::io::write_csv;
use rismf::experiments::{overhead_table, run_sweep_with_threads, write_results, ExperimentSpec, Format, ScenarioKind};
use rismf::Error;

const EXIT_INVALID: u8 = 1;
const EXIT_IO: u8 = 2;
const EXIT_ACCEPTANCE: u8 = 3;

/// Rank-one channel estimation for RIS-aided links: Monte Carlo sweeps,
/// the pilot overhead table and the acceptance suite.
#[derive(Debug, Parser)]
#[command(name = "rismf", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Downlink NMSE / spectral-efficiency sweep.
    SingleUser(SweepArgs),
    /// Uplink two-stage estimation sweep.
    MultiUser(SweepArgs),
    /// Minimal training pilots per estimator.
    Overhead(OverheadArgs),
    /// Run the acceptance suite; exits with 3 if any criterion fails.
    Verify(VerifyArgs),
}

#[derive(Debug, Args)]
struct OutputArgs {
    /// Output file; a `<out>.meta.json` sidecar is written next to it.
    /// Results go to stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value = "csv", value_parser = parse_format)]
    format: Format,
}

#[derive(Debug, Args)]
struct SweepArgs {
    /// JSON experiment spec. Missing fields take the subcommand defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    output: OutputArgs,
    /// Overrides `master_seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides `n_trials`.
    #[arg(long)]
    trials: Option<usize>,
    /// Worker threads. Results do not depend on it.
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Debug, Args)]
struct OverheadArgs {
    /// JSON experiment spec; only `dims` is used.
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Debug, Args)]
struct VerifyArgs {
    /// Master seed of the suite.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the trial count of the Monte Carlo criteria.
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    threads: Option<usize>,
    /// Comma-separated criterion ids; all when omitted.
    #[arg(long, value_delimiter = ',')]
    only: Vec<String>,
    /// Writes the reports as JSON.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_format(s: &str) -> Result<Format, String> {
    s.parse::<Format>().map_err(|e| e.to_string())
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Io { .. } => EXIT_IO,
        _ => EXIT_INVALID,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(EXIT_INVALID) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn run(cli: Cli) -> rismf::Result<u8> {
    match cli.command {
        Command::SingleUser(args) => sweep(ScenarioKind::SingleUserDownlink, args),
        Command::MultiUser(args) => sweep(ScenarioKind::MultiUserUplink, args),
        Command::Overhead(args) => overhead(args),
        Command::Verify(args) => verify(args),
    }
}

fn default_threads() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

/// Reads a spec file, filling absent fields from the defaults of `kind`.
fn load_spec(path: Option<&Path>, kind: ScenarioKind) -> rismf::Result<ExperimentSpec> {
    let defaults = ExperimentSpec::for_scenario(kind);
    let Some(path) = path else {
        return Ok(defaults);
    };
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io { path: path.to_path_buf(), source })?;
    let invalid = |e: serde_json::Error| Error::InvalidSpec(format!("{}: {e}", path.display()));
    let user: Value = serde_json::from_str(&text).map_err(invalid)?;
    let Value::Object(fields) = user else {
        return Err(Error::InvalidSpec(format!("{}: expected a JSON object", path.display())));
    };
    let mut merged = serde_json::to_value(&defaults).map_err(invalid)?;
    if let Value::Object(base) = &mut merged {
        base.extend(fields);
    }
    let spec: ExperimentSpec = serde_json::from_value(merged).map_err(invalid)?;
    if spec.scenario != kind {
        return Err(Error::InvalidSpec(format!(
            "{}: scenario {} does not match the {} subcommand",
            path.display(),
            spec.scenario.as_str(),
            kind.as_str()
        )));
    }
    Ok(spec)
}

fn sweep(kind: ScenarioKind, args: SweepArgs) -> rismf::Result<u8> {
    let mut spec = load_spec(args.config.as_deref(), kind)?;
    if let Some(seed) = args.seed {
        spec.master_seed = seed;
    }
    if let Some(trials) = args.trials {
        spec.n_trials = trials;
    }
    spec.validate()?;
    let threads = args.threads.unwrap_or_else(default_threads);
    let records = run_sweep_with_threads(&spec, threads)?;
    match &args.output.out {
        Some(path) => {
            write_results(&records, Some(&spec), path, args.output.format)?;
            eprintln!("wrote {} records to {}", records.len(), path.display());
        }
        None => {
            let stdout = std::io::stdout().lock();
            match args.output.format {
                Format::Csv => write_csv(&records, stdout)?,
                Format::Json => write_json(&records, stdout)?,
            }
        }
    }
    Ok(0)
}

fn write_json<T: serde::Serialize, W: Write>(value: &T, mut sink: W) -> rismf::Result<()> {
    let stdout_err = |source| Error::Io { path: PathBuf::from("<stdout>"), source };
    serde_json::to_writer_pretty(&mut sink, value).map_err(|e| stdout_err(e.into()))?;
    writeln!(sink).map_err(stdout_err)
}

fn overhead(args: OverheadArgs) -> rismf::Result<u8> {
    let spec = load_spec(args.config.as_deref(), ScenarioKind::OverheadTable)?;
    spec.validate()?;
    let rows = overhead_table(spec.dims.n_bs, spec.dims.m_ris);
    let mut text = Vec::new();
    match args.output.format {
        Format::Csv => {
            let mut w = csv::Writer::from_writer(&mut text);
            let bad = |e: csv::Error| Error::InvalidArgument(e.to_string());
            w.write_record(["estimator", "min_pilots", "runnable"]).map_err(bad)?;
            for r in &rows {
                w.write_record([r.estimator.to_string(), r.min_pilots.to_string(), r.runnable.to_string()])
                    .map_err(bad)?;
            }
            w.flush().map_err(|source| Error::Io { path: PathBuf::from("<buffer>"), source })?;
        }
        Format::Json => write_json(&rows, &mut text)?,
    }
    match &args.output.out {
        Some(path) => std::fs::write(path, &text).map_err(|source| Error::Io { path: path.clone(), source })?,
        None => std::io::stdout()
            .write_all(&text)
            .map_err(|source| Error::Io { path: PathBuf::from("<stdout>"), source })?,
    }
    Ok(0)
}

fn verify(args: VerifyArgs) -> rismf::Result<u8> {
    let mut config = SuiteConfig { threads: args.threads.unwrap_or_else(default_threads), ..SuiteConfig::default() };
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    if let Some(trials) = args.trials {
        if trials == 0 {
            return Err(Error::InvalidArgument("--trials must be positive".into()));
        }
        config.sweep_trials = Some(trials);
    }
    let reports = acceptance::run(&config, &args.only, |r| println!("{}", r.line()))?;
    if let Some(path) = &args.out {
        let mut text = Vec::new();
        write_json(&reports, &mut text)?;
        std::fs::write(path, text).map_err(|source| Error::Io { path: path.clone(), source })?;
    }
    let failed = reports.iter().filter(|r| !r.passed).count();
    println!("{} of {} criteria passed", reports.len() - failed, reports.len());
    Ok(if failed == 0 { 0 } else { EXIT_ACCEPTANCE })
}
