use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use frs_core::config::{ModeSelection, ScenarioConfig};
use frs_core::export::{export, ExportError};
use frs_core::scenario::{bench, run_scenario1, run_scenario2, stability_report, RunArtifacts};
use frs_core::FrsError;
use log::info;

const EXIT_CONFIG: u8 = 2;
const EXIT_UNSOUND: u8 = 3;
const EXIT_NUMERICAL: u8 = 4;
const EXIT_IO: u8 = 1;

#[derive(Parser)]
#[command(name = "frs", version, about = "Reachable-set tubes for a multirotor with a disturbance observer")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    All,
    Baseline,
    ProposedLin,
    ProposedNolin,
}

impl From<Mode> for ModeSelection {
    fn from(m: Mode) -> Self {
        match m {
            Mode::All => ModeSelection::All,
            Mode::Baseline => ModeSelection::Baseline,
            Mode::ProposedLin => ModeSelection::ProposedLin,
            Mode::ProposedNolin => ModeSelection::ProposedNolin,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// One tube per mode from a common start, checked against sampled flights.
    Scenario1 {
        /// JSON config; built-in defaults when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        samples: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, value_enum)]
        mode: Option<Mode>,
    },
    /// Full flight with periodic tube recomputation for both controllers.
    Scenario2 {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluates the stability certificate and the observer/error audits.
    CheckGains {
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Times complete tube computations.
    Bench {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 20)]
        iters: usize,
    },
}

enum Failure {
    Config(FrsError),
    Numerical(FrsError),
    Io(ExportError),
}

impl Failure {
    fn report(&self) -> ExitCode {
        match self {
            Failure::Config(e) => {
                eprintln!("config error: {e}");
                ExitCode::from(EXIT_CONFIG)
            }
            Failure::Numerical(e) => {
                eprintln!("numerical fault: {e}");
                ExitCode::from(EXIT_NUMERICAL)
            }
            Failure::Io(e) => {
                eprintln!("export failed: {e}");
                ExitCode::from(EXIT_IO)
            }
        }
    }
}

fn numerical(e: FrsError) -> Failure {
    match e {
        FrsError::InvalidParameter(_) => Failure::Config(e),
        other => Failure::Numerical(other),
    }
}

fn load(path: Option<&Path>) -> Result<ScenarioConfig, Failure> {
    match path {
        Some(p) => ScenarioConfig::load(p).map_err(Failure::Config),
        None => Ok(ScenarioConfig::default()),
    }
}

fn finish(artifacts: &RunArtifacts, out: &Path) -> Result<ExitCode, Failure> {
    let files = export(artifacts, out).map_err(Failure::Io)?;
    info!("wrote {} files to {}", files.len(), out.display());
    for c in &artifacts.containment {
        println!(
            "{:<20} checks {:>7}  state violations {:>5}  augmented violations {:>5}  max form {:.4}",
            c.label, c.checks, c.state_violations, c.augmented_violations, c.max_state_form
        );
    }
    for o in &artifacts.ordering {
        println!(
            "{:<20} trace below baseline {}/{}  det below baseline {}/{}  det ratio at horizon {:.3e}",
            o.label, o.trace_below, o.compared, o.det_below, o.compared, o.det_ratio_end
        );
    }
    for nt in &artifacts.tubes {
        println!("{:<20} tube wall time {:.1} ms", nt.label, nt.tube.total_ns() as f64 / 1e6);
    }
    if artifacts.sound() {
        Ok(ExitCode::SUCCESS)
    } else {
        eprintln!("containment violation detected");
        Ok(ExitCode::from(EXIT_UNSOUND))
    }
}

fn run(cli: Cli) -> Result<ExitCode, Failure> {
    match cli.command {
        Command::Scenario1 {
            config,
            out,
            samples,
            seed,
            mode,
        } => {
            let mut cfg = load(config.as_deref())?;
            if let Some(n) = samples {
                cfg.n_samples = n;
            }
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(m) = mode {
                cfg.mode = m.into();
            }
            cfg.validate().map_err(Failure::Config)?;
            let artifacts = run_scenario1(&cfg).map_err(numerical)?;
            finish(&artifacts, &out)
        }
        Command::Scenario2 { config, out } => {
            let cfg = load(config.as_deref())?;
            let artifacts = run_scenario2(&cfg).map_err(numerical)?;
            finish(&artifacts, &out)
        }
        Command::CheckGains { config } => {
            let cfg = load(config.as_deref())?;
            let report = stability_report(&cfg).map_err(numerical)?;
            let c = &report.certificate;
            println!("hypothesis 1 (k_v > 1): {}", c.velocity_gain_ok);
            println!(
                "hypothesis 2 (alpha_d > {:.4}): {}",
                c.observer_gain_limit, c.observer_gain_ok
            );
            match c.tilt.s_m_limit {
                Some(limit) => println!(
                    "hypothesis 3 (s_m = {:.4} < {:.4}): {}",
                    report.s_m, limit, c.tilt.holds
                ),
                None => println!("hypothesis 3: vacuous (lambda_min(Q2) >= 0), holds"),
            }
            println!(
                "lambda_min: Q1 {:.4}  Q2 {:.4}  Q {:.4}",
                c.lambda_min_q1, c.lambda_min_q2, c.lambda_min_q
            );
            println!(
                "ultimate radii: tracking {:.4}  observer {:.4} m/s^2",
                c.uub_radius_translational, c.uub_radius_disturbance
            );
            println!(
                "observer audit passed: {}  error audit passed: {}",
                report.disturbance_audit.passed(),
                report.error_audit.passed()
            );
            println!("{}", serde_json::to_string_pretty(&report).expect("report serializes"));
            Ok(ExitCode::SUCCESS)
        }
        Command::Bench { config, iters } => {
            let cfg = load(config.as_deref())?;
            if iters == 0 {
                return Err(Failure::Config(FrsError::InvalidParameter("--iters must be positive".into())));
            }
            let entries = bench(&cfg, iters).map_err(numerical)?;
            for e in &entries {
                println!(
                    "{:<16} median {:>8.2} ms  min {:>8.2} ms  max {:>8.2} ms  ({} iterations)",
                    e.mode.name(),
                    e.median_ms,
                    e.min_ms,
                    e.max_ms,
                    e.iterations
                );
            }
            println!("{}", serde_json::to_string_pretty(&entries).expect("bench serializes"));
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(f) => f.report(),
    }
}
