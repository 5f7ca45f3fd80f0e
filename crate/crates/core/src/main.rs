use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use mala_lab::diagnostics::linear_grid;
use mala_lab::experiment::{parse_config, run_experiment, ExperimentConfig, RunOptions};
use mala_lab::{speed_and_optimum, Error};

#[derive(Parser)]
#[command(name = "mala-lab", version, about = "MALA scaling experiments on spectral truncations")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the sweep described by a config file.
    Run {
        config: PathBuf,
        #[arg(long)]
        workers: Option<usize>,
        #[arg(long)]
        output_dir: Option<PathBuf>,
        /// Overrides `master_seed`.
        #[arg(long)]
        seed: Option<u64>,
        /// Record per-cell wall-clock times in the CSV.
        #[arg(long)]
        timings: bool,
    },
    /// Check a config file and print its canonical form.
    Validate { config: PathBuf },
    /// Print the limiting acceptance and speed curve as CSV.
    Curve {
        #[arg(long, default_value_t = 0.1)]
        ell_min: f64,
        #[arg(long, default_value_t = 3.0)]
        ell_max: f64,
        #[arg(long, default_value_t = 59)]
        points: usize,
    },
}

fn load(path: &PathBuf) -> Result<ExperimentConfig, Error> {
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_config(&text)
}

fn curve(ell_min: f64, ell_max: f64, points: usize) -> Result<(), Error> {
    if !(ell_min > 0.0 && ell_max > ell_min && points >= 2) {
        return Err(Error::InvalidParameter(
            "need 0 < ell-min < ell-max and at least 2 points".into(),
        ));
    }
    let c = speed_and_optimum(&linear_grid(ell_min, ell_max, points))?;
    println!("ell,alpha,speed,optimum");
    for i in 0..c.ells.len() {
        println!("{},{},{},0", c.ells[i], c.alphas[i], c.speeds[i]);
    }
    println!("{},{},{},1", c.ell_star, c.alpha_star, c.speed_star);
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run {
            config,
            workers,
            output_dir,
            seed,
            timings,
        } => load(&config).and_then(|cfg| {
            let opts = RunOptions {
                workers,
                output_dir,
                master_seed: seed,
                timings,
            };
            let summary = run_experiment(&cfg, &opts)?;
            eprintln!(
                "wrote {} rows to {} ({} failed cells; manifest {})",
                summary.rows.len(),
                summary.csv_path.display(),
                summary.failures.len(),
                summary.manifest_path.display()
            );
            if summary.failures.is_empty() {
                Ok(())
            } else {
                for f in &summary.failures {
                    eprintln!("  N={} gamma={} ell={} replica={}: {}", f.n, f.gamma, f.ell, f.replica, f.message);
                }
                Err(Error::InvalidParameter(format!("{} cells failed", summary.failures.len())))
            }
        }),
        Command::Validate { config } => load(&config).map(|cfg| {
            print!("{}", cfg.canonical_toml());
            eprintln!("config hash {}", cfg.hash());
        }),
        Command::Curve {
            ell_min,
            ell_max,
            points,
        } => curve(ell_min, ell_max, points),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
