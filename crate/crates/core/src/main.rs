use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use photonflow::cli::config::RunConfig;
use photonflow::cli::report::{compare_reports, render_comparison, Report};
use photonflow::cli::run::{describe_config, execute, OutputFormat, RunOptions, OUTPUT_ENV};
use photonflow::cli::manifest;
use photonflow::Error;

#[derive(Parser)]
#[command(name = "photonflow", version, about = "Single-photon source and frequency-conversion simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate and analyze one configured experiment.
    Run {
        config: PathBuf,
        /// Override the master seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Worker threads (defaults to all cores).
        #[arg(long)]
        workers: Option<usize>,
        /// Validate and print the resolved configuration only.
        #[arg(long)]
        dry_run: bool,
        /// Which plot/table artifacts to write: csv, svg or both.
        #[arg(long, default_value = "both")]
        format: OutputFormat,
    },
    /// Tabulate the quantities of two runs of the same experiment.
    Compare { a: PathBuf, b: PathBuf },
    /// Check artifact digests against a run's manifest.
    Verify { dir: PathBuf },
}

const EXIT_CONFIG: u8 = 2;
const EXIT_FLAGGED: u8 = 3;

fn fail(err: &Error) -> ExitCode {
    eprintln!("error: {err}");
    match err {
        Error::Config(_) => ExitCode::from(EXIT_CONFIG),
        _ => ExitCode::FAILURE,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Run {
            config,
            seed,
            workers,
            dry_run,
            format,
        } => {
            if dry_run {
                let described = RunConfig::load(&config).and_then(|mut cfg| {
                    if let Some(s) = seed {
                        cfg.seed = s;
                    }
                    describe_config(&cfg)
                });
                return match described {
                    Ok(text) => {
                        print!("{text}");
                        ExitCode::SUCCESS
                    }
                    Err(e) => fail(&e),
                };
            }
            let opts = RunOptions {
                seed,
                workers,
                format,
                output_dir: std::env::var_os(OUTPUT_ENV).map(PathBuf::from),
            };
            match execute(&config, &opts) {
                Ok(outcome) => {
                    print!("{}", outcome.report.render());
                    eprintln!("artifacts written to {}", outcome.output_dir.display());
                    if outcome.flagged {
                        eprintln!("analysis result flagged");
                        ExitCode::from(EXIT_FLAGGED)
                    } else {
                        ExitCode::SUCCESS
                    }
                }
                Err(e) => fail(&e),
            }
        }
        Command::Compare { a, b } => {
            let load = |dir: &PathBuf| {
                std::fs::read_to_string(dir.join("report.txt"))
                    .map_err(Error::from)
                    .and_then(|t| Report::parse(&t))
            };
            match load(&a).and_then(|ra| load(&b).and_then(|rb| compare_reports(&ra, &rb))) {
                Ok(rows) => {
                    print!("{}", render_comparison(&rows));
                    ExitCode::SUCCESS
                }
                Err(e) => fail(&e),
            }
        }
        Command::Verify { dir } => match manifest::verify(&dir) {
            Ok(bad) if bad.is_empty() => {
                println!("all artifacts match the manifest");
                ExitCode::SUCCESS
            }
            Ok(bad) => {
                for name in bad {
                    println!("mismatch: {name}");
                }
                ExitCode::FAILURE
            }
            Err(e) => fail(&e),
        },
    }
}
