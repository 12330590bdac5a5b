use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use tagforge::bench::{self, BenchConfig, TableFormat};
use tagforge::gradcheck::DEFAULT_SEEDS;
use tagforge::models::Arch;
use tagforge::Error;

#[derive(Parser)]
#[command(name = "tagforge", version, about = "GNN node classification over pluggable text features")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Compute and store the feature matrix of every configured encoder.
    Prepare {
        #[arg(long)]
        config: PathBuf,
        /// Recompute files that already exist.
        #[arg(long)]
        force: bool,
    },
    /// Train one model and print its accuracies.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Encoder name; defaults to the first configured.
        #[arg(long)]
        encoder: Option<String>,
        /// Architecture; defaults to the first configured.
        #[arg(long)]
        arch: Option<Arch>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Run the full encoder x architecture grid.
    Bench {
        #[arg(long)]
        config: PathBuf,
        /// Use seeds 0..n instead of the configured list.
        #[arg(long)]
        seeds: Option<u64>,
        #[arg(long)]
        format: Option<TableFormat>,
        /// Write the table here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check every backward pass against finite differences.
    Gradcheck {
        #[arg(long, default_value_t = DEFAULT_SEEDS)]
        seeds: u64,
    },
}

fn fail(e: Error) -> ExitCode {
    eprintln!("error: {e}");
    match e {
        Error::Config(_) => ExitCode::from(2),
        _ => ExitCode::from(1),
    }
}

fn run(cli: Cli) -> Result<ExitCode, Error> {
    match cli.command {
        Command::Prepare { config, force } => {
            let cfg = BenchConfig::load(&config)?;
            let report = bench::cmd_prepare(&cfg, force)?;
            for p in &report.written {
                println!("wrote     {}", p.display());
            }
            for p in &report.skipped {
                println!("exists    {}", p.display());
            }
            for p in &report.validated {
                println!("validated {}", p.display());
            }
        }
        Command::Train {
            config,
            encoder,
            arch,
            seed,
        } => {
            let cfg = BenchConfig::load(&config)?;
            let encoder = encoder.unwrap_or_else(|| cfg.encoders[0].name.clone());
            let arch = arch.unwrap_or(cfg.archs[0]);
            let r = bench::cmd_train(&cfg, &encoder, arch, seed)?;
            println!(
                "encoder={encoder} arch={arch} seed={seed} val_acc={:.4} test_acc={:.4} best_epoch={} epochs_ran={}",
                r.best_val_acc, r.test_acc_at_best_val, r.best_epoch, r.epochs_ran
            );
        }
        Command::Bench {
            config,
            seeds,
            format,
            out,
        } => {
            let mut cfg = BenchConfig::load(&config)?;
            if let Some(n) = seeds {
                cfg.train.seeds = (0..n).collect();
            }
            let result = bench::cmd_bench(&cfg)?;
            let csv = bench::write_results_csv(&cfg, &result)?;
            let table = bench::render(&result, format.unwrap_or(cfg.format))?;
            match out {
                Some(path) => std::fs::write(&path, &table).map_err(|e| Error::Io { path, source: e })?,
                None => print!("{table}"),
            }
            eprintln!("csv: {}", csv.display());
            for c in result.failed() {
                eprintln!("failed {} / {}: {}", c.encoder, c.arch, c.outcome.as_ref().unwrap_err());
            }
            if !result.all_ok() {
                return Ok(ExitCode::from(1));
            }
        }
        Command::Gradcheck { seeds } => {
            let report = bench::cmd_gradcheck(seeds)?;
            println!("{report}");
            if !report.passed() {
                return Ok(ExitCode::from(1));
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => fail(e),
    }
}
