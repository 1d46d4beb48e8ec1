use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use poafd::run::{
    checks_csv, fnv1a64, load_config, run_decompose, run_experiment, run_verify, VerifyScope,
};
use poafd::Error;

#[derive(Parser)]
#[command(name = "poafd", version, about = "Adaptive kernel decomposition runner")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a decomposition described by a JSON config file.
    Decompose {
        #[arg(long)]
        config: PathBuf,
    },
    /// Reproduce one of the built-in experiments.
    Experiment {
        /// example1 or example2
        name: String,
        /// Output directory (default: ./<name>-out)
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the oracle verification suites and write a report CSV.
    Verify {
        /// Suites to run: semigroup, bvc, derivatives, greedy, rate.
        /// Omitted: all suites; given without values: none.
        #[arg(long, num_args = 0..)]
        scope: Option<Vec<String>>,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        /// Report path (default: verify_report.csv).
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Config(_) | Error::Io(_) | Error::Serde(_) => ExitCode::from(2),
                _ => ExitCode::from(1),
            }
        }
    }
}

fn dispatch(cli: Cli) -> poafd::Result<ExitCode> {
    match cli.command {
        Command::Decompose { config } => {
            let (run_config, hash) = load_config(&config)?;
            let base = config.parent().unwrap_or(Path::new("."));
            let artifacts = run_decompose(&run_config, base, hash)?;
            println!(
                "decomposition: {} atoms, relative error {:.3e}",
                artifacts.decomposition.len(),
                artifacts.decomposition.remainder_energy().sqrt()
                    / artifacts.decomposition.signal_norm
            );
            for path in &artifacts.written {
                println!("wrote {}", path.display());
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Experiment { name, out } => {
            let out_dir = out.unwrap_or_else(|| PathBuf::from(format!("{name}-out")));
            let report = run_experiment(&name, &out_dir)?;
            for (k, measured, published) in &report.comparison {
                println!("iteration {k}: relative error {measured:.4} (published {published})");
            }
            for path in &report.written {
                println!("wrote {}", path.display());
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Verify { scope, seed, out } => {
            let scopes = match &scope {
                None => VerifyScope::all(),
                Some(names) => names
                    .iter()
                    .map(|s| VerifyScope::parse(s))
                    .collect::<poafd::Result<Vec<_>>>()?,
            };
            let rows = run_verify(&scopes, seed)?;
            let hash = fnv1a64(format!("{scope:?}/{seed}").as_bytes());
            let report = checks_csv(&rows, hash);
            let path = out.unwrap_or_else(|| PathBuf::from("verify_report.csv"));
            std::fs::write(&path, &report)?;
            let failed: Vec<_> = rows.iter().filter(|r| !r.pass).collect();
            for r in &rows {
                println!(
                    "{} {} residual {:.3e} (tol {:.1e}) {}",
                    r.suite,
                    r.name,
                    r.residual,
                    r.tolerance,
                    if r.pass { "pass" } else { "FAIL" }
                );
            }
            println!("report: {} ({} checks, {} failed)", path.display(), rows.len(), failed.len());
            Ok(if failed.is_empty() {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            })
        }
    }
}
