use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use subdiv_cli::{presets, run_experiment, validate_config, write_profile, ExperimentConfig};

/// Subjective divergence profiles for approximate inference programs.
#[derive(Parser)]
#[command(name = "subdiv", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment and write its profile.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Overrides `estimator.seed`.
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides `output.dir`.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Worker threads; 0 picks one per core.
        #[arg(long, default_value_t = 0)]
        threads: usize,
    },
    /// Check a config and print its normalized form.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
    /// List the model presets.
    ListPresets,
}

const CONFIG_ERROR: u8 = 2;
const RUNTIME_ERROR: u8 = 3;

fn load(path: &PathBuf) -> Result<ExperimentConfig, ExitCode> {
    let text = fs::read_to_string(path).map_err(|e| {
        eprintln!("error: cannot read {}: {e}", path.display());
        ExitCode::from(CONFIG_ERROR)
    })?;
    validate_config(&text).map_err(|e| {
        for issue in &e.issues {
            eprintln!("config error: {issue}");
        }
        ExitCode::from(CONFIG_ERROR)
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::ListPresets => {
            print!("{}", presets::describe());
            ExitCode::SUCCESS
        }
        Command::Validate { config } => match load(&config) {
            Ok(c) => {
                print!("{}", c.to_toml());
                ExitCode::SUCCESS
            }
            Err(code) => code,
        },
        Command::Run {
            config,
            seed,
            out,
            threads,
        } => {
            let mut c = match load(&config) {
                Ok(c) => c,
                Err(code) => return code,
            };
            if let Some(seed) = seed {
                c.estimator.seed = seed;
            }
            let dir = out.unwrap_or_else(|| PathBuf::from(&c.output.dir));
            let pool = match rayon::ThreadPoolBuilder::new().num_threads(threads).build() {
                Ok(p) => p,
                Err(e) => {
                    eprintln!("error: thread pool: {e}");
                    return ExitCode::from(RUNTIME_ERROR);
                }
            };
            let points = match pool.install(|| run_experiment(&c)) {
                Ok(p) => p,
                Err(e) => {
                    eprintln!("error: {e}");
                    return ExitCode::from(RUNTIME_ERROR);
                }
            };
            match write_profile(&dir, &points, c.estimator.timings, c.output.sidecar) {
                Ok(paths) => {
                    for p in &points {
                        println!(
                            "knob {:>5}  D = {:.4} ± {:.4} nats",
                            p.knob, p.estimate.estimate, p.estimate.stderr
                        );
                    }
                    for path in paths {
                        println!("wrote {}", path.display());
                    }
                    ExitCode::SUCCESS
                }
                Err(e) => {
                    eprintln!("error: writing output to {}: {e}", dir.display());
                    ExitCode::from(RUNTIME_ERROR)
                }
            }
        }
    }
}
