use std::path::PathBuf;
use std::process::ExitCode;

use acvar_cli::config::ConfigArgs;
use acvar_cli::experiment::run_experiment;
use acvar_cli::sweep::{run_sweep, SeedRange};
use acvar_cli::Summary;
use clap::Parser;

/// Asymptotic CVaR experiments on random Markov chains.
#[derive(Debug, Parser)]
#[command(name = "acvar", version)]
struct Cli {
    #[command(flatten)]
    args: ConfigArgs,
    /// Config file, JSON or key=value lines; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Run seeds a..b (inclusive) in parallel, each into <out>/seed-<n>.
    #[arg(long)]
    seeds: Option<SeedRange>,
}

fn report(summary: &Summary, dir: &std::path::Path) {
    let e = &summary.estimator;
    println!(
        "seed {}: zeta_T {:.4} (exact {:.4}), mean row TV {:.4}, ACVaR {:.4}, threshold {:.4}, {} -> {}",
        summary.config.seed,
        e.zeta_final,
        summary.oracle.zeta_star,
        e.mean_row_tv_to_oracle,
        summary.oracle.acvar,
        summary.kde.threshold,
        match e.terminated_at {
            Some(n) => format!("settled at {n}"),
            None => format!("hit cap {}", e.iterations),
        },
        dir.display()
    );
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();

    let resolved = match &cli.config {
        Some(path) => ConfigArgs::from_file(path).map(|file| file.overlay(cli.args.clone())),
        None => Ok(cli.args.clone()),
    }
    .and_then(ConfigArgs::resolve);
    let config = match resolved {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::from(2);
        }
    };

    match cli.seeds {
        None => match run_experiment(&config) {
            Ok(summary) => {
                report(&summary, &config.output_dir);
                ExitCode::SUCCESS
            }
            Err(e) => {
                eprintln!("error: {e:#}");
                ExitCode::from(1)
            }
        },
        Some(range) => {
            let mut failed = false;
            for (seed, dir, result) in run_sweep(&config, range) {
                match result {
                    Ok(summary) => report(&summary, &dir),
                    Err(e) => {
                        failed = true;
                        eprintln!("error: seed {seed}: {e:#}");
                    }
                }
            }
            if failed {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            }
        }
    }
}
