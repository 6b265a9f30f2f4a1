use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use insertion_core::experiments::{Experiment, ExperimentConfig, MetricsReport, ReportFormat};
use insertion_core::scenario::Scenario;
use insertion_core::sim::{run, write_csv_file};
use insertion_teleop::server::{serve, ServerConfig};

#[derive(Parser)]
#[command(name = "insertion", version, about = "Robotic insertion platform simulator")]
struct Cli {
    #[command(subcommand)]
    command: Commands,
}

#[derive(Clone, Copy, ValueEnum)]
enum Which {
    Tracking,
    Admittance,
    Insertion,
    All,
}

#[derive(Subcommand)]
enum Commands {
    /// Run experiments, write reports and logs, exit 0 iff every gate passes.
    RunExperiments {
        #[arg(value_enum, default_value = "all")]
        which: Which,
        /// Experiment configuration (TOML); defaults apply when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = "results")]
        out: PathBuf,
        /// Overrides the seed from the configuration.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run one scenario file and write its CSV log.
    Simulate {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Serve a scenario over WebSocket until interrupted.
    Serve {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long, default_value = "127.0.0.1:8765")]
        bind: String,
        /// Simulated seconds per wall second; 0 runs as fast as possible.
        #[arg(long, default_value_t = 1.0)]
        timescale: f64,
        /// Start paused; clients advance time with `step`.
        #[arg(long)]
        paused: bool,
    },
}

type AnyError = Box<dyn std::error::Error>;

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn execute(cli: Cli) -> Result<bool, AnyError> {
    match cli.command {
        Commands::RunExperiments { which, config, out, seed } => {
            let mut cfg = match config {
                Some(path) => ExperimentConfig::from_toml_file(path)?,
                None => ExperimentConfig::default(),
            };
            if let Some(seed) = seed {
                cfg.seed = seed;
            }
            let selected: &[Experiment] = match which {
                Which::Tracking => &[Experiment::Tracking],
                Which::Admittance => &[Experiment::Admittance],
                Which::Insertion => &[Experiment::Insertion],
                Which::All => &Experiment::ALL,
            };
            run_experiments(&cfg, selected, &out)
        }
        Commands::Simulate { scenario, out } => {
            let scenario = Scenario::from_toml_file(scenario)?;
            let log = run(&scenario)?;
            write_csv_file(&out, &log)?;
            eprintln!("{}: {} records -> {}", scenario.name, log.len(), out.display());
            Ok(true)
        }
        Commands::Serve { scenario, bind, timescale, paused } => {
            let scenario = Scenario::from_toml_file(scenario)?;
            let config = ServerConfig { bind, timescale, start_paused: paused, ..ServerConfig::default() };
            eprintln!("serving '{}' on ws://{}", scenario.name, config.bind);
            serve(scenario, config)?;
            Ok(true)
        }
    }
}

fn run_experiments(cfg: &ExperimentConfig, selected: &[Experiment], out: &Path) -> Result<bool, AnyError> {
    fs::create_dir_all(out)?;
    let mut report = MetricsReport::default();
    for experiment in selected {
        let started = std::time::Instant::now();
        let output = experiment.run(cfg)?;
        let dir = out.join("logs").join(experiment.name());
        fs::create_dir_all(&dir)?;
        for (name, log) in &output.logs {
            write_csv_file(dir.join(format!("{name}.csv")), log)?;
        }
        eprintln!(
            "{}: {} scenarios in {:.1} s, {}",
            experiment.name(),
            output.logs.len(),
            started.elapsed().as_secs_f64(),
            if output.report.passed() { "pass" } else { "FAIL" }
        );
        report.extend(output.report);
    }
    for format in [ReportFormat::Text, ReportFormat::Csv, ReportFormat::JsonLines] {
        report.write(out.join(format!("report.{}", format.extension())), format)?;
    }
    print!("{}", report.emit(ReportFormat::Text)?);
    Ok(report.passed())
}
