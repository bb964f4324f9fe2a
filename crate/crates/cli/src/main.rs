use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use vlc_transfer::dataset::NoiseSpec;
use vlc_transfer::harness::{
    cmd_cdf, cmd_evaluate, cmd_perturb, cmd_synth, cmd_train, cmd_transfer, run_suite_with, ExperimentConfig,
    SuiteEvent, SuiteOptions,
};
use vlc_transfer::transfer::WallClock;
use vlc_transfer::Error;

#[derive(Parser)]
#[command(
    name = "vlc-tl",
    version,
    about = "VLC fingerprint localization with transfer learning"
)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// Experiment config (JSON). Omitted fields take their defaults.
    #[arg(long, global = true, value_name = "JSON")]
    config: Option<PathBuf>,
    /// Reseed every stochastic stage from this value.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output file or directory, depending on the command.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Two hidden layers of 64 units and 150 epochs.
    #[arg(long, global = true)]
    fast: bool,
    /// Suite cells trained in parallel.
    #[arg(long, global = true)]
    workers: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize the fingerprint dataset as CSV.
    Synth,
    /// Train from scratch; a positive --nf gives an EV model.
    Train {
        /// Dataset CSV; synthesized from the config when absent.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        nf: Option<f64>,
    },
    /// Add Gaussian noise of deviation nf * sigma_base to every RSSI value.
    Perturb {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        nf: f64,
        #[arg(long)]
        sigma_base: Option<f64>,
    },
    /// Fine-tune a checkpoint with the shared layers frozen.
    Transfer {
        #[arg(long)]
        base: PathBuf,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        nf: Option<f64>,
    },
    /// Mean error and success rate of a checkpoint on a dataset.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
    },
    /// Error CDF of a checkpoint on a dataset.
    Cdf {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
    },
    /// Base, EV, TL and limited-data cells for every noise factor.
    Suite,
}

enum Failure {
    Usage(String),
    Runtime(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config { .. } => Failure::Usage(e.to_string()),
            other => Failure::Runtime(other.to_string()),
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}

fn load_config(global: &Global) -> Result<ExperimentConfig, Failure> {
    let mut cfg = match &global.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?;
            ExperimentConfig::from_json_str(&text).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?
        }
        None => ExperimentConfig::default(),
    };
    if global.fast {
        cfg.apply_fast();
    }
    if let Some(seed) = global.seed {
        cfg.apply_seed(seed);
    }
    if let Some(workers) = global.workers {
        cfg.workers = workers;
    }
    cfg.validate()?;
    for (pointer, path) in [("/layout", &cfg.layout), ("/base_checkpoint", &cfg.base_checkpoint)] {
        if let Some(path) = path.as_ref().filter(|p| !p.exists()) {
            return Err(Failure::Usage(format!("{pointer}: {} does not exist", path.display())));
        }
    }
    Ok(cfg)
}

fn with_nf(mut cfg: ExperimentConfig, nf: Option<f64>) -> Result<ExperimentConfig, Failure> {
    if let Some(nf) = nf {
        cfg.noise.nf = nf;
        cfg.validate()?;
    }
    Ok(cfg)
}

fn out_or(global: &Global, default: &str) -> PathBuf {
    global.out.clone().unwrap_or_else(|| PathBuf::from(default))
}

fn run(cli: Cli) -> Result<(), Failure> {
    let cfg = load_config(&cli.global)?;
    let global = &cli.global;
    match cli.command {
        Command::Synth => {
            let out = out_or(global, "dataset.csv");
            let data = cmd_synth(&cfg, &out)?;
            eprintln!("wrote {} records to {}", data.len(), out.display());
        }
        Command::Train { data, nf } => {
            let cfg = with_nf(cfg, nf)?;
            let out = out_or(global, "runs/train");
            let outcome = cmd_train(&cfg, data.as_deref(), &out, &mut WallClock::default())?;
            report_run(&outcome.checkpoint_path, &outcome.report);
        }
        Command::Perturb { input, nf, sigma_base } => {
            let spec = NoiseSpec {
                nf,
                sigma_base_db: sigma_base.unwrap_or(cfg.noise.sigma_base_db),
                ..cfg.noise
            };
            spec.validate()?;
            let out = out_or(global, "perturbed.csv");
            cmd_perturb(&input, &spec, &out)?;
            eprintln!("wrote {}", out.display());
        }
        Command::Transfer { base, data, nf } => {
            let cfg = with_nf(cfg, nf)?;
            let out = out_or(global, "runs/transfer");
            let outcome = cmd_transfer(&cfg, &base, data.as_deref(), &out, &mut WallClock::default())?;
            report_run(&outcome.checkpoint_path, &outcome.report);
        }
        Command::Evaluate { checkpoint, data } => {
            let evaluation = cmd_evaluate(&cfg, &checkpoint, &data)?;
            let text = serde_json::to_string_pretty(&evaluation).expect("evaluation serializes");
            if let Some(out) = &global.out {
                std::fs::write(out, format!("{text}\n"))
                    .map_err(|e| Failure::Runtime(format!("{}: {e}", out.display())))?;
            }
            println!("{text}");
        }
        Command::Cdf { checkpoint, data } => {
            let out = out_or(global, "cdf.csv");
            let cdf = cmd_cdf(&cfg, &checkpoint, &data, &out)?;
            eprintln!(
                "wrote {} points to {} (median {:.3} m, p90 {:.3} m)",
                cdf.errors().len(),
                out.display(),
                cdf.quantile(0.5),
                cdf.quantile(0.9)
            );
        }
        Command::Suite => {
            let mut cfg = cfg;
            if let Some(out) = &global.out {
                cfg.output_dir = out.clone();
            }
            let result = run_suite_with(&cfg, SuiteOptions::default(), &|event| match event {
                SuiteEvent::Started { cell } => eprintln!("[start] {cell}"),
                SuiteEvent::Reused { cell } => eprintln!("[reuse] {cell}"),
                SuiteEvent::Finished { summary } => eprintln!(
                    "[done]  {} val {:.3} m after {} epochs",
                    summary.cell_id, summary.run.metrics.val_err_m, summary.run.epochs_run
                ),
                SuiteEvent::Failed { cell, error } => eprintln!("[fail]  {cell}: {error}"),
            })?;
            print!("{}", result.table_csv());
            eprintln!("suite {} in {}", result.suite_id, result.directory.display());
            if !result.is_success() {
                for f in &result.failures {
                    eprintln!("failed {}: {}", f.cell_id, f.message);
                }
                return Err(Failure::Runtime(format!(
                    "{} of the suite cells failed",
                    result.failures.len()
                )));
            }
        }
    }
    Ok(())
}

fn report_run(checkpoint: &Path, report: &vlc_transfer::transfer::RunReport) {
    let m = report.final_metrics();
    eprintln!(
        "{} epochs, train {:.3} m, val {:.3} m, val success {:.1}%, {:.1} J",
        report.epochs.len(),
        m.train_err_m,
        m.val_err_m,
        100.0 * m.val_sr,
        report.cumulative_energy_j()
    );
    println!("{}", checkpoint.display());
}
