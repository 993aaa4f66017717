use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use cemms::experiments::{run_decay_study, run_experiment, ExperimentConfig, MediumSpec};
use cemms::media::synth_mask;
use cemms::Error;

/// Relaxed CEM multiscale solver for high-contrast elliptic problems.
#[derive(Parser)]
#[command(version, about)]
struct Cli {
    /// Worker threads (default: all cores; CEMMS_THREADS takes precedence).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sweep contrasts and oversampling layers, writing sweep.csv.
    Run {
        config: PathBuf,
        /// Lift the cap on the fine grid size.
        #[arg(long)]
        allow_large: bool,
    },
    /// Decay profiles of the global basis and localized correction errors.
    Decay {
        config: PathBuf,
        #[arg(long)]
        allow_large: bool,
    },
    /// Write a synthetic two-phase mask for a medium `<style>:<density>`.
    Synth {
        medium: String,
        #[arg(short, long)]
        output: PathBuf,
        /// Cells per axis.
        #[arg(short, long, default_value_t = 80)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn exit_code(e: &Error) -> u8 {
    if e.is_solver_failure() {
        3
    } else {
        2
    }
}

fn synth(medium: &str, output: &Path, n: usize, seed: u64) -> cemms::Result<()> {
    match MediumSpec::parse(medium, Path::new("."))? {
        MediumSpec::Synth { style, density } => {
            let mask = synth_mask(n, style, density, seed)?;
            mask.write(output)?;
            println!("wrote {} ({n}x{n}, inclusion fraction {:.4})", output.display(), mask.fraction());
            Ok(())
        }
        _ => Err(Error::Config(format!("synth medium must be <style>:<density>, got {medium:?}"))),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let workers = cemms::par::init_threads(cli.threads);
    let result = match &cli.command {
        Command::Run { config, allow_large } => ExperimentConfig::from_file(config, *allow_large).and_then(|cfg| {
            eprintln!("running {} with {workers} worker(s)", config.display());
            let out = run_experiment(&cfg)?;
            print!("{}", out.summary);
            for f in &out.files {
                println!("wrote {}", f.display());
            }
            Ok(())
        }),
        Command::Decay { config, allow_large } => ExperimentConfig::from_file(config, *allow_large).and_then(|cfg| {
            eprintln!("decay study {} with {workers} worker(s)", config.display());
            let out = run_decay_study(&cfg)?;
            print!("{}", out.summary);
            for f in &out.files {
                println!("wrote {}", f.display());
            }
            Ok(())
        }),
        Command::Synth { medium, output, n, seed } => synth(medium, output, *n, *seed),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
