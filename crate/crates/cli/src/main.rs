//! `corepower`: audit declared queue corepower and simulate synthetic fleets.
//!
//! Exit status: 0 on success (discrepancies are findings, not failures),
//! 1 for usage or configuration errors, 2 for fatal ingest errors and 3 when
//! no queue is auditable.

use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Parser, Subcommand, ValueEnum};
use corepower_audit::anonymize::anonymize_sites;
use corepower_audit::audit::{run_audit, AuditInputs, AuditMode, AuditOptions, AuditReport};
use corepower_audit::fleetsim::{generate_fleet, simulate, FleetConfig, FLEET_FILE};
use corepower_audit::ingest::IngestOptions;
use corepower_audit::loadstats::CorrelationMethod;
use corepower_audit::plot::emit_plot_data;
use corepower_audit::{CompletenessPolicy, LoadBand, ReportError, Threshold};

#[derive(Parser)]
#[command(name = "corepower", about = "Validate declared corepower against benchmark runs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Json,
    Csv,
}

#[derive(Clone, Copy, ValueEnum)]
enum Correlation {
    Pearson,
    Spearman,
}

#[derive(clap::Args)]
struct AuditArgs {
    /// Benchmark records (JSON Lines).
    #[arg(long)]
    benchmarks: PathBuf,
    /// Job accounting (JSON Lines).
    #[arg(long)]
    jobs: PathBuf,
    /// Declared corepower registry (CSV).
    #[arg(long)]
    declared: PathBuf,
    #[arg(long, default_value_t = 0.25)]
    threshold: f64,
    #[arg(long, default_value_t = 3)]
    min_runs: usize,
    #[arg(long, default_value_t = 1.0)]
    min_weight_covered: f64,
    /// Use only measurements taken on fully loaded hosts.
    #[arg(long)]
    fully_loaded: bool,
    /// Fully-loaded band for hosts without SMT, as load per physical core.
    #[arg(long, default_value_t = 0.9)]
    band_low_ht_off: f64,
    #[arg(long, default_value_t = 1.1)]
    band_high_ht_off: f64,
    /// Fully-loaded band for hosts with SMT.
    #[arg(long, default_value_t = 1.8)]
    band_low_ht_on: f64,
    #[arg(long, default_value_t = 2.2)]
    band_high_ht_on: f64,
    /// Match CPU models on the exact raw string.
    #[arg(long)]
    strict_cpu_names: bool,
    /// Replace site names with salted labels.
    #[arg(long)]
    anonymize_salt: Option<String>,
    /// Correlation reported in load-curve files.
    #[arg(long, value_enum, default_value_t = Correlation::Pearson)]
    correlation: Correlation,
    /// Output directory for the report and plot data; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    format: Format,
}

#[derive(Subcommand)]
enum Command {
    /// Compare declared and runtime corepower per queue.
    Audit(Box<AuditArgs>),
    /// Generate a synthetic fleet and its input files.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print the tool version.
    Version,
}

struct Failure {
    code: u8,
    error: anyhow::Error,
}

fn fail(code: u8) -> impl FnOnce(anyhow::Error) -> Failure {
    move |error| Failure { code, error }
}

const USAGE: u8 = 1;
const INGEST: u8 = 2;
const NO_AUDITABLE: u8 = 3;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Audit(args) => audit(&args),
        Command::Simulate { config, seed, out } => run_simulate(&config, seed, &out),
        Command::Version => {
            println!("corepower {}", env!("CARGO_PKG_VERSION"));
            Ok(())
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}

fn options(args: &AuditArgs) -> anyhow::Result<AuditOptions> {
    let mode = if args.fully_loaded {
        let band = LoadBand::new(
            (args.band_low_ht_off, args.band_high_ht_off),
            (args.band_low_ht_on, args.band_high_ht_on),
        )?;
        AuditMode::FullyLoaded { band }
    } else {
        AuditMode::FullRange
    };
    Ok(AuditOptions {
        threshold: Threshold::new(args.threshold)?,
        policy: CompletenessPolicy::new(args.min_runs, args.min_weight_covered)?,
        mode,
        strict_cpu_names: args.strict_cpu_names,
    })
}

fn write_report(report: &AuditReport, format: Format, w: impl Write) -> Result<(), ReportError> {
    match format {
        Format::Json => report.write_json(w),
        Format::Csv => report.write_csv(w),
    }
}

fn audit(args: &AuditArgs) -> Result<(), Failure> {
    let opts = options(args).map_err(fail(USAGE))?;
    let ingest_opts = IngestOptions {
        strict_cpu_names: opts.strict_cpu_names,
    };
    let mut inputs = AuditInputs::load(&args.benchmarks, &args.jobs, &args.declared, &ingest_opts)
        .map_err(|e| fail(INGEST)(e.into()))?;

    let report = match run_audit(&inputs, &opts, chrono::Utc::now()) {
        Ok(r) => r,
        Err(ReportError::NoAuditableQueues) => {
            return Err(fail(NO_AUDITABLE)(anyhow!("no auditable queues")));
        }
        Err(e) => return Err(fail(USAGE)(e.into())),
    };
    report
        .check_consistency()
        .map_err(|e| fail(USAGE)(anyhow!("internal consistency check failed: {e}")))?;

    let report = match &args.anonymize_salt {
        Some(salt) => {
            let (anon, labels) = anonymize_sites(&report, salt).map_err(|e| fail(USAGE)(e.into()))?;
            for r in &mut inputs.benchmarks {
                r.queue = labels.queue(&r.queue);
            }
            anon
        }
        None => report,
    };

    let s = &report.summary;
    let summary_line = format!(
        "{} queues, {} auditable, {:.1}% critical, overall weighted discrepancy {:+.2}%",
        s.queues,
        s.auditable,
        100.0 * s.fraction_critical,
        100.0 * s.overall_weighted_discrepancy
    );

    match &args.out {
        None => {
            let stdout = io::stdout().lock();
            write_report(&report, args.format, stdout).map_err(|e| fail(USAGE)(e.into()))?;
        }
        Some(dir) => {
            fs::create_dir_all(dir)
                .with_context(|| format!("creating {}", dir.display()))
                .map_err(fail(USAGE))?;
            let name = match args.format {
                Format::Json => "report.json",
                Format::Csv => "report.csv",
            };
            let path = dir.join(name);
            let file = File::create(&path)
                .with_context(|| format!("creating {}", path.display()))
                .map_err(fail(USAGE))?;
            write_report(&report, args.format, BufWriter::new(file)).map_err(|e| fail(USAGE)(e.into()))?;
            let correlation = match args.correlation {
                Correlation::Pearson => CorrelationMethod::Pearson,
                Correlation::Spearman => CorrelationMethod::Spearman,
            };
            emit_plot_data(&report, &inputs.benchmarks, dir, correlation)
                .map_err(|e| fail(USAGE)(e.into()))?;
            eprintln!("wrote {}", path.display());
        }
    }
    eprintln!("{summary_line}");
    Ok(())
}

fn run_simulate(config: &Path, seed: u64, out: &Path) -> Result<(), Failure> {
    let text = fs::read_to_string(config)
        .with_context(|| format!("reading {}", config.display()))
        .map_err(fail(USAGE))?;
    let cfg = FleetConfig::from_json(&text).map_err(|e| fail(USAGE)(e.into()))?;
    let fleet = generate_fleet(&cfg, seed).map_err(|e| fail(USAGE)(e.into()))?;
    let output = simulate(&fleet, &cfg.simulation).map_err(|e| fail(USAGE)(e.into()))?;
    output.write_dir(out).map_err(|e| fail(USAGE)(e.into()))?;
    let fleet_path = out.join(FLEET_FILE);
    let write_fleet = || -> anyhow::Result<()> {
        let mut f = BufWriter::new(File::create(&fleet_path)?);
        serde_json::to_writer_pretty(&mut f, &fleet)?;
        f.write_all(b"\n")?;
        f.flush()?;
        Ok(())
    };
    write_fleet().map_err(fail(USAGE))?;
    eprintln!(
        "simulated {} queues: {} benchmark runs, {} jobs -> {}",
        output.oracle.len(),
        output.benchmark_records.len(),
        output.job_records.len(),
        out.display()
    );
    Ok(())
}
