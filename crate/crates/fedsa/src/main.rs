use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use fedsa::manifest;
use fedsa::oracle;
use fedsa::report;

#[derive(Parser)]
#[command(name = "fedsa", version, about = "Federated-learning poisoning lab")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonFlags {
    /// Override every experiment's seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads for parallel client training (default: all cores).
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Run every experiment in a manifest, writing per-round CSVs and
    /// summary JSONs.
    Run {
        manifest: PathBuf,
        /// Output directory (overrides the manifest's out_dir).
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        common: CommonFlags,
    },
    /// Build the comparison table from a results directory.
    Summarize {
        dir: PathBuf,
        /// Also write the table as JSON to this path.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the aggregator and scalar-plant oracle suites.
    OracleCheck {
        #[arg(long, default_value_t = 7)]
        seed: u64,
        /// Random instances per aggregation rule.
        #[arg(long, default_value_t = 200)]
        instances: usize,
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Generate the desk-scale image task as MNIST-style IDX files.
    GenData {
        dir: PathBuf,
        #[arg(long, default_value_t = 2024)]
        seed: u64,
    },
}

fn install_threads(threads: Option<usize>) {
    if let Some(n) = threads {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn run() -> fedsa::Result<ExitCode> {
    match Cli::parse().command {
        Command::Run { manifest: path, out, common } => {
            install_threads(common.threads);
            let mut manifest = manifest::parse_config(&path)?;
            if let Some(out) = out {
                manifest.out_dir = out;
            }
            if let Some(seed) = common.seed {
                for (_, config) in manifest.experiments.iter_mut() {
                    config.seed = seed;
                }
            }
            let statuses = report::run_manifest(&manifest)?;
            let failed = statuses.iter().filter(|(_, e)| e.is_some()).count();
            for (id, status) in &statuses {
                match status {
                    None => println!("[ ok ] {id}"),
                    Some(e) => println!("[fail] {id}: {e}"),
                }
            }
            Ok(if failed == 0 { ExitCode::SUCCESS } else { ExitCode::FAILURE })
        }
        Command::Summarize { dir, out } => {
            let table = report::summarize(&dir)?;
            report::render_table(&table, std::io::stdout().lock())
                .map_err(|e| fedsa::Error::io("<stdout>", e))?;
            if let Some(path) = out {
                let json = serde_json::to_string_pretty(&table)
                    .map_err(|e| fedsa::Error::Config(format!("table serialization: {e}")))?;
                std::fs::write(&path, json).map_err(|e| fedsa::Error::io(&path, e))?;
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::OracleCheck { seed, instances, threads } => {
            install_threads(threads);
            let mut all = oracle::aggregator_oracle_suite(seed, instances);
            all.extend(oracle::ode_oracle_suite());
            let mut failed = 0;
            for check in &all {
                let tag = if check.passed { " ok " } else { "FAIL" };
                println!("[{tag}] {}: {}", check.name, check.detail);
                if !check.passed {
                    failed += 1;
                }
            }
            println!("{} checks, {} failed", all.len(), failed);
            Ok(if failed == 0 { ExitCode::SUCCESS } else { ExitCode::FAILURE })
        }
        Command::GenData { dir, seed } => {
            fedsa::data::write_desk_task(&dir, seed)?;
            println!("wrote IDX task under {}", dir.display());
            Ok(ExitCode::SUCCESS)
        }
    }
}
