//! `anonpipe`: classify, de-identify and evaluate tabular microdata.
//!
//! Exit status: 0 when the chosen dimension meets the constraints, 3 when no
//! dimension does (artifacts are still written), 1 on any error.

// errors are reported once and the process exits; their size is irrelevant
#![allow(clippy::result_large_err)]

use std::io::{self, Write};
use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;

use anonpipe_core::config::{read_json, RunConfig};
use anonpipe_core::dimension::SelectionPolicy;
use anonpipe_core::identify::Thresholds;
use anonpipe_core::interactive::run_interactive;
use anonpipe_core::mockgen::{generate, GeneratorSpec};
use anonpipe_core::pipeline::{
    audit_log_bytes, deidentify_table, execute, identify_table, load_input, prepare, report_bytes, run_pipeline,
    write_files, PipelineError, ANONYMISED_CSV, AUDIT_LOG,
};
use anonpipe_core::table::to_csv_bytes;
use anonpipe_service::ServiceConfig;
use clap::{Args, Parser, Subcommand};

const EXIT_NON_COMPLIANT: u8 = 3;

#[derive(Parser)]
#[command(name = "anonpipe", version, about = "Risk-driven anonymisation of tabular microdata")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic table as CSV
    Generate {
        /// Generator spec (JSON); the shipped 500-row spec by default
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        rows: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Output file; stdout when omitted
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the risk-based classification
    Identify {
        #[command(flatten)]
        run: RunArgs,
        /// Print the structured report instead of the table
        #[arg(long)]
        json: bool,
    },
    /// Apply every rule and write the de-identified table with its audit log
    Deidentify {
        #[command(flatten)]
        run: RunArgs,
    },
    /// Print the dimension candidates and the selected one
    Evaluate {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        json: bool,
    },
    /// Run the whole pipeline and write all artifacts
    Run {
        #[command(flatten)]
        run: RunArgs,
        /// Ask for thresholds, overrides, rules and constraints on the terminal
        #[arg(long)]
        interactive: bool,
    },
    /// Serve the HTTP API (and the web UI, if given)
    Serve {
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: std::net::IpAddr,
        /// Directory with the built web UI
        #[arg(long)]
        ui_dir: Option<PathBuf>,
        /// Idle minutes before a session expires
        #[arg(long, default_value_t = 30)]
        session_ttl_minutes: u64,
    },
}

/// Config file plus command-line overrides of its fields.
#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// Upper risk threshold in percent
    #[arg(long)]
    alpha: Option<f64>,
    /// Lower risk threshold in percent
    #[arg(long)]
    beta: Option<f64>,
    /// max-nue or smallest-d
    #[arg(long)]
    policy: Option<SelectionPolicy>,
    /// Output directory
    #[arg(long)]
    out: Option<PathBuf>,
}

impl RunArgs {
    fn load(&self) -> Result<RunConfig, PipelineError> {
        let mut config = RunConfig::load(&self.config)?;
        if self.seed.is_some() {
            config.seed = self.seed;
        }
        config.thresholds = Thresholds {
            alpha_percent: self.alpha.unwrap_or(config.thresholds.alpha_percent),
            beta_percent: self.beta.unwrap_or(config.thresholds.beta_percent),
        };
        if let Some(p) = self.policy {
            config.policy = p;
        }
        if let Some(out) = &self.out {
            config.output_dir = out.clone();
        }
        config.validate()?;
        Ok(config)
    }
}

fn status(compliant: bool) -> ExitCode {
    if compliant {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(EXIT_NON_COMPLIANT)
    }
}

fn stdout(bytes: &[u8]) -> Result<(), PipelineError> {
    let mut out = io::stdout().lock();
    out.write_all(bytes)
        .and_then(|_| out.flush())
        .map_err(|source| PipelineError::Output {
            path: "<stdout>".into(),
            source,
        })
}

fn run(cli: Cli) -> Result<ExitCode, PipelineError> {
    match cli.command {
        Command::Generate { spec, rows, seed, out } => {
            let mut spec = match spec {
                Some(p) => read_json::<GeneratorSpec>(&p, "generator spec")?,
                None => GeneratorSpec::shipped(),
            };
            if let Some(rows) = rows {
                spec.rows = rows;
            }
            if let Some(seed) = seed {
                spec.seed = seed;
            }
            let bytes = to_csv_bytes(&generate(&spec)?);
            match out {
                Some(path) => {
                    let dir = path
                        .parent()
                        .filter(|d| !d.as_os_str().is_empty())
                        .unwrap_or(".".as_ref());
                    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("generated.csv");
                    write_files(dir, &[(name, bytes)])?;
                }
                None => stdout(&bytes)?,
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Identify { run, json } => {
            let config = run.load()?;
            let prepared = prepare(&load_input(&config)?, config.drop_threshold);
            let id = identify_table(&prepared.table, &config.thresholds, &config.overrides)?;
            if json {
                stdout(&report_bytes(&id.report))?;
            } else {
                stdout(id.report.render_text().as_bytes())?;
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Deidentify { run } => {
            let config = run.load()?;
            let prepared = prepare(&load_input(&config)?, config.drop_threshold);
            let id = identify_table(&prepared.table, &config.thresholds, &config.overrides)?;
            let rules = config.rules.resolve("rules")?;
            let (table, log) = deidentify_table(&prepared.table, &id.classifications, &rules)?;
            let files = write_files(
                &config.output_dir,
                &[
                    (ANONYMISED_CSV, to_csv_bytes(&table)),
                    (AUDIT_LOG, audit_log_bytes(&log)),
                ],
            )?;
            for f in files {
                eprintln!("wrote {}", f.display());
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Evaluate { run, json } => {
            let config = run.load()?;
            let artifacts = execute(&config)?;
            let report = &artifacts.dimensions.report;
            if json {
                stdout(&report_bytes(report))?;
            } else {
                stdout(report.render_text().as_bytes())?;
            }
            Ok(status(artifacts.compliant()))
        }
        Command::Run { run, interactive } => {
            let config = run.load()?;
            let outcome = if interactive {
                run_interactive(io::stdin().lock(), io::stdout(), &config)?
            } else {
                run_pipeline(&config)?
            };
            for f in &outcome.files {
                eprintln!("wrote {}", f.display());
            }
            if !outcome.compliant {
                eprintln!(
                    "no dimension meets the constraints; exported d={} (largest k)",
                    outcome.chosen_d
                );
            }
            Ok(status(outcome.compliant))
        }
        Command::Serve {
            port,
            host,
            ui_dir,
            session_ttl_minutes,
        } => {
            tracing_subscriber::fmt().with_writer(io::stderr).init();
            let config = ServiceConfig {
                session_ttl: std::time::Duration::from_secs(session_ttl_minutes * 60),
                ui_dir,
                ..ServiceConfig::default()
            };
            let runtime = tokio::runtime::Runtime::new().map_err(|source| PipelineError::Output {
                path: "<runtime>".into(),
                source,
            })?;
            runtime
                .block_on(anonpipe_service::serve(SocketAddr::new(host, port), config))
                .map_err(|source| PipelineError::Output {
                    path: format!("{host}:{port}").into(),
                    source,
                })?;
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
