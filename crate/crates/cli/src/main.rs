use std::path::{Path, PathBuf};
use std::process::ExitCode;

use adiabat_core::scenario::{parse_scenario, run_scenario, run_suite, RunError, RunOptions, SuiteStatus};
use adiabat_core::Exec;
use clap::{Args, Parser, Subcommand};

/// Run adiabatic-process scenarios and write CSV/JSON reports.
#[derive(Parser)]
#[command(name = "adiabat", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Output root; each scenario writes to its own subdirectory.
    #[arg(long, env = "ADIABAT_OUT", default_value = "out")]
    out: PathBuf,
    /// Disable data-parallel sections inside a run.
    #[arg(long)]
    sequential: bool,
}

impl Common {
    fn options(&self) -> RunOptions {
        RunOptions {
            exec: if self.sequential { Exec::Sequential } else { Exec::Parallel },
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario.
    Run {
        config: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Run every `*.toml` scenario in a directory.
    Suite {
        dir: PathBuf,
        /// Scenarios executed concurrently.
        #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u16).range(1..))]
        jobs: u16,
        #[command(flatten)]
        common: Common,
    },
    /// Parse and validate a scenario without running it.
    Validate { config: PathBuf },
}

fn read(path: &Path) -> Result<String, ExitCode> {
    std::fs::read_to_string(path).map_err(|e| {
        eprintln!("error[config]: {}: {e}", path.display());
        ExitCode::from(2)
    })
}

fn scenario_files(dir: &Path) -> std::io::Result<Vec<PathBuf>> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "toml"))
        .collect();
    paths.sort();
    Ok(paths)
}

fn fail(e: &RunError) -> ExitCode {
    eprintln!("error: {e}");
    ExitCode::from(e.exit_code() as u8)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Validate { config } => {
            let text = match read(&config) {
                Ok(t) => t,
                Err(code) => return code,
            };
            match parse_scenario(&text) {
                Ok(s) => {
                    println!("ok: {} ({})", s.name, s.experiment.name());
                    ExitCode::SUCCESS
                }
                Err(e) => {
                    eprintln!("error[{}]: {}: {e}", e.code(), config.display());
                    ExitCode::from(2)
                }
            }
        }
        Command::Run { config, common } => {
            let text = match read(&config) {
                Ok(t) => t,
                Err(code) => return code,
            };
            let scenario = match parse_scenario(&text) {
                Ok(s) => s,
                Err(e) => {
                    eprintln!("error[{}]: {}: {e}", e.code(), config.display());
                    return ExitCode::from(2);
                }
            };
            match run_scenario(&scenario, &common.out, &common.options()) {
                Ok(m) => {
                    let dir = common.out.join(&scenario.output);
                    for f in &m.files {
                        println!("{}  {}", f.sha256, dir.join(&f.name).display());
                    }
                    ExitCode::SUCCESS
                }
                Err(e) => fail(&e),
            }
        }
        Command::Suite { dir, jobs, common } => {
            let paths = match scenario_files(&dir) {
                Ok(p) => p,
                Err(e) => {
                    eprintln!("error[config]: {}: {e}", dir.display());
                    return ExitCode::from(2);
                }
            };
            match run_suite(&paths, usize::from(jobs), &common.out, &common.options()) {
                Ok(report) => {
                    for e in &report.scenarios {
                        match e.status {
                            SuiteStatus::Ok => println!("ok      {}", e.config),
                            _ => println!("FAILED  {}: {}", e.config, e.error.as_deref().unwrap_or("")),
                        }
                    }
                    println!("{} scenario(s), {} failed", report.scenarios.len(), report.failed);
                    ExitCode::from(report.exit_code() as u8)
                }
                Err(e) => fail(&e),
            }
        }
    }
}
