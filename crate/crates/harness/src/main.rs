use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use mslocal::config::parse_dims;
use mslocal::report::exit_status;
use mslocal::{run_experiment, write_outputs, Experiment, ExperimentConfig, Overrides};

#[derive(Debug, Parser)]
#[command(
    name = "mslocal",
    version,
    about = "Multi-scale Jacobi diagonalization experiments"
)]
struct Cli {
    /// correlator, percolation, convergence, volume_convergence, oracle_compare or gaps
    experiment: Experiment,
    /// JSON config file
    #[arg(long)]
    config: PathBuf,
    /// Lattice shape, e.g. `32` or `12x12`
    #[arg(long)]
    dims: Option<String>,
    #[arg(long)]
    j0: Option<f64>,
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// CSV output path; traces go to `<stem>.traces.jsonl`
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long)]
    max_steps: Option<usize>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let mut cfg = match ExperimentConfig::load(&cli.config) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    };
    let dims = match cli.dims.as_deref().map(parse_dims).transpose() {
        Ok(d) => d,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    };
    cfg.apply(&Overrides {
        experiment: Some(cli.experiment),
        dims,
        j0: cli.j0,
        num_samples: cli.samples,
        master_seed: cli.seed,
        output: cli.out,
        delta: cli.delta,
        max_steps: cli.max_steps,
    });
    if let Err(e) = cfg.validate() {
        eprintln!("error: {e}");
        return ExitCode::from(1);
    }

    let report = run_experiment(&cfg);
    if let Err(e) = write_outputs(&cfg, &report, &mut std::io::stdout().lock()) {
        eprintln!("error: cannot write report: {e}");
        return ExitCode::from(1);
    }
    let info = report.info();
    if info.failures > 0 {
        eprintln!("{} of {} samples failed", info.failures, info.samples);
    }
    ExitCode::from(exit_status(&cfg, info))
}
