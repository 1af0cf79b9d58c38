use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use mlspde_lab::{output_dir, run, ExperimentConfig, ExperimentKind};

/// Multilevel SPDE sampling and MCMC experiments.
#[derive(Debug, Parser)]
#[command(name = "mlspde", version)]
struct Cli {
    /// Experiment to run; must match `kind` in the config.
    #[arg(value_enum)]
    experiment: ExperimentKind,

    #[arg(long, value_name = "PATH")]
    config: PathBuf,

    /// Run directory (default: config `output`, then $MLSPDE_OUT/<kind>).
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let cfg = match ExperimentConfig::load(&cli.config) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    if cfg.kind != cli.experiment {
        eprintln!(
            "error: {} is a {} config, not {}",
            cli.config.display(),
            cfg.kind.name(),
            cli.experiment.name()
        );
        return ExitCode::from(2);
    }
    let dir = output_dir(&cfg, cli.out.as_deref());
    match run(&cfg, &dir) {
        Ok((report, _)) => {
            print!("{}", report.render());
            println!("output: {}", dir.display());
            if report.passed() {
                ExitCode::SUCCESS
            } else {
                for f in report.failures() {
                    eprintln!("FAILED {f}");
                }
                ExitCode::FAILURE
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            eprintln!("partial output: {}", dir.display());
            ExitCode::from(2)
        }
    }
}
