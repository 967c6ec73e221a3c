use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use mblsim::harness::{run_with_workers, ExperimentConfig, ExperimentKind, RunManifest};
use mblsim::Error;

const EXIT_CONFIG: u8 = 1;
const EXIT_RUNTIME: u8 = 2;

#[derive(Parser, Debug)]
#[command(name = "mblsim", version, about = "Disordered XY spin-chain experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run the experiment described by a JSON config.
    Run {
        config: PathBuf,
        /// Override the config seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Worker threads (default: all cores).
        #[arg(long)]
        workers: Option<usize>,
        /// Override the output directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the experiment catalog.
    ListExperiments,
    /// Check a config without running it.
    Validate { config: PathBuf },
    /// Verify a run directory against its manifest and print its summary.
    Summarize { run_dir: PathBuf },
}

fn fail(code: u8, err: impl std::fmt::Display) -> ExitCode {
    eprintln!("error: {err}");
    ExitCode::from(code)
}

fn load(path: &PathBuf, seed: Option<u64>, out: Option<PathBuf>) -> Result<ExperimentConfig, Error> {
    let mut cfg = ExperimentConfig::from_json_file(path)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if out.is_some() {
        cfg.output_dir = out;
    }
    Ok(cfg)
}

fn summarize(run_dir: &PathBuf) -> ExitCode {
    let manifest = match RunManifest::load(run_dir) {
        Ok(m) => m,
        Err(e) => return fail(EXIT_RUNTIME, e),
    };
    println!(
        "{} (version {}, seed {}, {} workers, {:.1} s)",
        manifest.config.experiment,
        manifest.version,
        manifest.config.seed,
        manifest.workers,
        manifest.wall_clock_s
    );
    let bad = match manifest.verify(run_dir) {
        Ok(b) => b,
        Err(e) => return fail(EXIT_RUNTIME, e),
    };
    for f in &manifest.files {
        let status = if bad.contains(&f.path) { "MISMATCH" } else { "ok" };
        println!("  {:<8} {:>10}  {}", status, f.bytes, f.path);
    }
    for table in ["crossover.csv", "entropy_logfit.csv", "coupling_ranges.csv"] {
        if let Ok(text) = std::fs::read_to_string(run_dir.join(table)) {
            println!("\n{table}:\n{}", text.trim_end());
        }
    }
    if bad.is_empty() {
        ExitCode::SUCCESS
    } else {
        fail(EXIT_RUNTIME, format!("{} file(s) differ from the manifest", bad.len()))
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Run {
            config,
            seed,
            workers,
            out,
        } => {
            let cfg = match load(&config, seed, out) {
                Ok(c) => c,
                Err(e) => return fail(EXIT_CONFIG, e),
            };
            if workers == Some(0) {
                return fail(EXIT_CONFIG, "--workers must be positive");
            }
            match run_with_workers(&cfg, workers) {
                Ok(m) => {
                    println!(
                        "{}: {} files in {} ({:.1} s)",
                        cfg.experiment,
                        m.files.len(),
                        cfg.output_dir().display(),
                        m.wall_clock_s
                    );
                    ExitCode::SUCCESS
                }
                Err(e @ Error::Config(_)) => fail(EXIT_CONFIG, e),
                Err(e) => fail(EXIT_RUNTIME, e),
            }
        }
        Command::ListExperiments => {
            for k in ExperimentKind::ALL {
                println!("{:<24} {}", k.name(), k.description());
            }
            ExitCode::SUCCESS
        }
        Command::Validate { config } => match load(&config, None, None) {
            Ok(cfg) => {
                println!(
                    "ok: {} with {} bound(s) x {} realization(s)",
                    cfg.experiment,
                    cfg.bounds().len(),
                    cfg.n_realizations
                );
                ExitCode::SUCCESS
            }
            Err(e) => fail(EXIT_CONFIG, e),
        },
        Command::Summarize { run_dir } => summarize(&run_dir),
    }
}
