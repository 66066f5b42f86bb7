use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use soliton_lab::cli::{
    output_root, parse_param, run_experiment, run_sweep, sweep_cells, verify_bundle, BundleSummary, ExperimentConfig,
    OUTPUT_ENV,
};

#[derive(Parser)]
#[command(name = "soliton-lab", version, about = "Dark-soliton numerical laboratory")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the preset named in a config file and write its bundle.
    Run {
        config: PathBuf,
        /// Output root; overrides the config and the environment.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run one bundle per value of a config parameter, in parallel.
    Sweep {
        config: PathBuf,
        /// `key=start:stop:step`, e.g. `c=1.30:1.41:0.01`.
        #[arg(long)]
        param: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check artifact digests and the config hash of a bundle.
    Verify { bundle: PathBuf },
}

fn print_summary(s: &BundleSummary) {
    println!("[{}] config {}", s.run_id, &s.config_hash[..12]);
    for e in &s.acceptance {
        println!("  {}", e.line());
    }
}

fn main() -> Result<ExitCode> {
    let cli = Cli::parse();
    match cli.command {
        Command::Run { config, out } => {
            let cfg = ExperimentConfig::load(&config)?;
            let root = out.unwrap_or_else(|| output_root(&cfg));
            let summary = run_experiment(&cfg, &root).with_context(|| format!("running {}", config.display()))?;
            print_summary(&summary);
            println!("bundle: {}", root.join(&summary.run_id).display());
            Ok(if summary.all_pass() { ExitCode::SUCCESS } else { ExitCode::from(1) })
        }
        Command::Sweep { config, param, out } => {
            let base = ExperimentConfig::load(&config)?;
            let (key, values) = parse_param(&param)?;
            let cells = sweep_cells(&base, &key, &values)?;
            let root = out.unwrap_or_else(|| output_root(&base));
            eprintln!("[sweep] {} cells over {key} into {} (set {OUTPUT_ENV} to change)", cells.len(), root.display());
            let mut failed = false;
            for (v, result) in values.iter().zip(run_sweep(&cells, &root)) {
                match result {
                    Ok(s) => {
                        println!("{key} = {v}");
                        print_summary(&s);
                        failed |= !s.all_pass();
                    }
                    Err(e) => {
                        println!("{key} = {v}: error: {e}");
                        failed = true;
                    }
                }
            }
            Ok(if failed { ExitCode::from(1) } else { ExitCode::SUCCESS })
        }
        Command::Verify { bundle } => {
            let v = verify_bundle(&bundle)?;
            print_summary(&v.summary);
            println!("config hash matches: {}", v.hash_matches);
            for f in &v.mismatched_files {
                println!("digest mismatch: {f}");
            }
            Ok(if v.intact() && v.summary.all_pass() { ExitCode::SUCCESS } else { ExitCode::from(1) })
        }
    }
}
