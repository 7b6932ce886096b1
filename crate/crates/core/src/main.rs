use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use fiberspec::harness::{self, DiskCache, HarnessError, RunOptions};

#[derive(Parser)]
#[command(name = "fiberspec", version, about = "Check semiclassical eigenvalue predictions against direct spectra")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Disable the result cache.
    #[arg(long, global = true)]
    no_cache: bool,
    /// Output directory for reports.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Cache directory.
    #[arg(long, global = true, default_value = ".fiberspec-cache")]
    cache_dir: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Run every experiment in a config file.
    Run { config: PathBuf },
    /// Parse and validate a config file without running it.
    Validate { config: PathBuf },
    /// Inspect or clear the result cache.
    Cache {
        #[command(subcommand)]
        action: CacheAction,
    },
}

#[derive(Subcommand)]
enum CacheAction {
    Stats,
    Clear,
}

fn fail(e: &HarnessError) -> ExitCode {
    eprintln!("error: {e}");
    match e {
        HarnessError::Config { .. } => ExitCode::from(harness::EXIT_CONFIG as u8),
        _ => ExitCode::from(harness::EXIT_COMPUTE as u8),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Run { config } => {
            let opts = RunOptions {
                out: cli.out.clone(),
                jobs: cli.jobs,
                cache_dir: if cli.no_cache { None } else { Some(cli.cache_dir.clone()) },
            };
            match harness::run(&config, &opts) {
                Ok(report) => {
                    for e in &report.experiments {
                        let status = match (&e.error, e.verdict()) {
                            (Some(msg), _) => format!("ERROR {msg}"),
                            (None, true) => "PASS".to_string(),
                            (None, false) => "FAIL".to_string(),
                        };
                        println!("{:<24} {:<10} {:>8.1}s  {status}", e.name, e.kind, e.solve_seconds);
                        for f in &e.fits {
                            match &f.result {
                                Ok(w) => println!(
                                    "    slope {:<8} j={} k={}: {:.3} (needs >= {:.2}) {}",
                                    f.regime,
                                    f.j,
                                    f.k_or_alpha,
                                    w.fit.slope,
                                    f.threshold,
                                    if f.pass { "ok" } else { "FAIL" }
                                ),
                                Err(msg) => println!("    slope {:<8} j={} k={}: {msg} FAIL", f.regime, f.j, f.k_or_alpha),
                            }
                        }
                        for c in e.checks.iter().filter(|c| !c.pass) {
                            let tag = if c.informational { "note" } else { "FAIL" };
                            println!("    {tag}: {} ({})", c.name, c.detail);
                        }
                    }
                    println!("reports written to {}", opts.out.display());
                    ExitCode::from(harness::exit_code(&report) as u8)
                }
                Err(e) => fail(&e),
            }
        }
        Command::Validate { config } => match harness::load_config(&config) {
            Ok((cfg, sha)) => {
                println!("{}: ok ({} experiments, sha256 {sha})", config.display(), cfg.config.experiment.len());
                for w in cfg.model.iter().flat_map(|m| m.warnings.iter()) {
                    println!("warning: {w}");
                }
                ExitCode::SUCCESS
            }
            Err(e) => fail(&e),
        },
        Command::Cache { action } => {
            let cache = DiskCache::new(&cli.cache_dir);
            let res = match action {
                CacheAction::Stats => cache.stats().map(|s| {
                    println!("{}: {} entries, {} bytes", cache.root().display(), s.entries, s.bytes);
                }),
                CacheAction::Clear => cache.clear().map(|_| println!("cleared {}", cache.root().display())),
            };
            match res {
                Ok(()) => ExitCode::SUCCESS,
                Err(e) => fail(&HarnessError::Io(e.to_string())),
            }
        }
    }
}
