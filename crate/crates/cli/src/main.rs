use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use log::info;

use rti_core::experiment::{
    resolve_scenario, run_experiment, seed_from_env, write_simulation, ExperimentConfig, Report,
};
use rti_core::simulator::{parse_mode, simulate, ScenarioFile};
use rti_core::RtiError;

const EXIT_CONFIG: u8 = 2;
const EXIT_RUNTIME: u8 = 3;
const SCENARIO_ECHO: &str = "scenario.toml";

#[derive(Parser)]
#[command(name = "rti", version, about = "Directional radio tomographic imaging")]
struct Cli {
    /// Log progress to stderr.
    #[arg(short, long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a scenario and write its RSS trace and ground truth.
    Simulate {
        /// Scenario TOML file, or `builtin:los` / `builtin:nlos`.
        #[arg(long)]
        scenario: String,
        #[arg(long)]
        out: PathBuf,
        /// Override the scenario's measurement mode.
        #[arg(long)]
        mode: Option<String>,
        /// Channels for `--mode multichannel`.
        #[arg(long, value_delimiter = ',')]
        channels: Option<Vec<u8>>,
    },
    /// Run a full experiment described by a TOML config.
    Run {
        #[arg(long)]
        config: PathBuf,
    },
    /// Print the report of a finished run.
    Report {
        #[arg(long)]
        dir: PathBuf,
        #[arg(long, value_enum, default_value_t = Format::Text)]
        format: Format,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Text,
}

fn simulate_cmd(
    spec: &str,
    out: &Path,
    mode: Option<&str>,
    channels: Option<Vec<u8>>,
) -> rti_core::Result<()> {
    let (mut scenario, params) = resolve_scenario(spec).map_err(|e| e.in_phase("load"))?;
    if let Some(m) = mode {
        scenario.mode = parse_mode(m, channels).map_err(|e| RtiError::Config(e.to_string()))?;
    } else if channels.is_some() {
        return Err(RtiError::Config(
            "--channels needs --mode multichannel".into(),
        ));
    }
    if let Some(seed) = seed_from_env()? {
        scenario.seed = seed;
    }
    scenario.validate().map_err(|e| e.in_phase("load"))?;
    info!(
        "simulating {} ({} mode, seed {})",
        scenario.name,
        scenario.mode.name(),
        scenario.seed
    );
    let sim = simulate(&scenario, &params).map_err(|e| e.in_phase("simulate"))?;
    write_simulation(&sim, out).map_err(|e| e.in_phase("write"))?;
    let echo = ScenarioFile::from_scenario(&scenario, &params).to_toml()?;
    fs::write(out.join(SCENARIO_ECHO), echo).map_err(|e| RtiError::from(e).in_phase("write"))?;
    println!(
        "{} records over {} ticks written to {}",
        sim.trace.records.len(),
        scenario.total_ticks(),
        out.display()
    );
    Ok(())
}

fn run_cmd(config: &Path) -> rti_core::Result<()> {
    let config = ExperimentConfig::load(config)?;
    let report = run_experiment(&config)?;
    print!("{}", report.to_text());
    Ok(())
}

fn report_cmd(dir: &Path, format: Format) -> rti_core::Result<()> {
    let report = Report::read(dir)?;
    match format {
        Format::Csv => print!("{}", report.to_csv()),
        Format::Text => print!("{}", report.to_text()),
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_CONFIG)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let level = if cli.verbose { "info" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    let result = match &cli.command {
        Command::Simulate {
            scenario,
            out,
            mode,
            channels,
        } => simulate_cmd(scenario, out, mode.as_deref(), channels.clone()),
        Command::Run { config } => run_cmd(config),
        Command::Report { dir, format } => report_cmd(dir, *format),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_config_error() {
                ExitCode::from(EXIT_CONFIG)
            } else {
                ExitCode::from(EXIT_RUNTIME)
            }
        }
    }
}
