use clap::{Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;

use nanotrap::config::{load_config, preset, PRESETS};
use nanotrap::runner::{run_scenarios, status_lines, RunOptions};

/// Output directory used when neither `--out` nor the environment variable is set.
const DEFAULT_OUT: &str = "nanotrap-out";
const OUT_ENV: &str = "NANOTRAP_OUT";

#[derive(Parser)]
#[command(name = "nanotrap", version, about = "Nanoparticle and ion co-trapping scenarios")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the scenarios of a configuration file or bundled preset.
    Run {
        /// Configuration file (TOML or JSON).
        config: Option<PathBuf>,
        /// Bundled preset name.
        #[arg(long)]
        preset: Option<String>,
        /// Output directory (overrides NANOTRAP_OUT).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Random seed for equilibrium searches (overrides the config seed).
        #[arg(long)]
        seed: Option<u64>,
        /// Worker threads (defaults to all cores).
        #[arg(long)]
        threads: Option<usize>,
    },
    /// List the bundled presets.
    Presets,
    /// Print a bundled preset.
    ShowPreset { name: String },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Presets => {
            for (name, _) in PRESETS {
                println!("{name}");
            }
            ExitCode::SUCCESS
        }
        Command::ShowPreset { name } => match PRESETS.iter().find(|(n, _)| *n == name) {
            Some((_, text)) => {
                print!("{text}");
                ExitCode::SUCCESS
            }
            None => {
                eprintln!("error: unknown preset {name:?}");
                ExitCode::from(1)
            }
        },
        Command::Run {
            config,
            preset: preset_name,
            out,
            seed,
            threads,
        } => {
            let loaded = match (&config, &preset_name) {
                (Some(path), None) => load_config(path),
                (None, Some(name)) => preset(name),
                (Some(_), Some(_)) => {
                    eprintln!("error: give either a configuration file or --preset, not both");
                    return ExitCode::from(1);
                }
                (None, None) => {
                    eprintln!("error: a configuration file or --preset is required");
                    return ExitCode::from(1);
                }
            };
            let cfg = match loaded {
                Ok(c) => c,
                Err(e) => {
                    eprintln!("error: {e}");
                    return ExitCode::from(1);
                }
            };
            let out_dir = out
                .or_else(|| std::env::var_os(OUT_ENV).map(PathBuf::from))
                .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT));
            let options = RunOptions { out_dir, seed, threads };
            match run_scenarios(&cfg, &options) {
                Ok(manifest) => {
                    print!("{}", status_lines(&manifest));
                    println!("wrote {}", options.out_dir.display());
                    if manifest.all_ok() {
                        ExitCode::SUCCESS
                    } else {
                        ExitCode::from(2)
                    }
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    ExitCode::from(1)
                }
            }
        }
    }
}
