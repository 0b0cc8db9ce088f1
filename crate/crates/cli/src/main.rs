use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use narrative_cli::commands::write_report;
use narrative_cli::{cmd_annotate, cmd_report, cmd_run, cmd_simgen, cmd_synth, RunArgs, SynthArgs};
use narrative_core::metrics::progression_table;
use tracing_subscriber::EnvFilter;

#[derive(Parser)]
#[command(name = "narrate", version, about = "Generate and refine SHAP explanation narratives with model agents")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment configuration over a directory of tables.
    Run(RunArgs),
    /// Compare one or more finished runs.
    Report {
        #[arg(required = true)]
        runs: Vec<PathBuf>,
        /// Also write report.txt and the CSV files here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Record a problem category (C1..C5 or none) for one transcript round.
    Annotate {
        run_dir: PathBuf,
        instance_id: String,
        round: usize,
        category: String,
        #[arg(default_value = "")]
        note: String,
    },
    /// Render templated baselines from fault plans.
    Simgen {
        #[arg(long)]
        plans: PathBuf,
        #[arg(long)]
        tables: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 4)]
        n_features: usize,
    },
    /// Write a synthetic corpus with a matching simlab config.
    Synth(SynthArgs),
}

async fn dispatch(cli: Cli) -> anyhow::Result<ExitCode> {
    match cli.command {
        Command::Run(args) => {
            let summary = cmd_run(&args).await?;
            println!("run directory: {}", summary.run_dir.display());
            if let Ok(table) = progression_table(&summary.metrics) {
                print!("{}", table.to_text());
            }
            if summary.failures.is_empty() {
                return Ok(ExitCode::SUCCESS);
            }
            for f in &summary.failures {
                eprintln!("instance {} failed: {}", f.instance_id, f.error);
            }
            Ok(ExitCode::from(1))
        }
        Command::Report { runs, out } => {
            let report = cmd_report(&runs)?;
            print!("{}", report.text);
            if let Some(dir) = out {
                write_report(&report, &dir)?;
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Annotate {
            run_dir,
            instance_id,
            round,
            category,
            note,
        } => {
            let t = cmd_annotate(&run_dir, &instance_id, round, &category, &note)?;
            println!(
                "{}: {} annotation(s), latest {}",
                t.instance_id,
                t.annotation_history.len(),
                t.annotation.map(|a| a.category.to_string()).unwrap_or_default()
            );
            Ok(ExitCode::SUCCESS)
        }
        Command::Simgen {
            plans,
            tables,
            out,
            n_features,
        } => {
            let b = cmd_simgen(&plans, &tables, &out, n_features)?;
            println!("wrote {} baselines to {}", b.0.len(), out.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::Synth(args) => {
            cmd_synth(&args)?;
            println!("wrote corpus to {}", args.out.display());
            Ok(ExitCode::SUCCESS)
        }
    }
}

#[tokio::main]
async fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("warn")))
        .with_writer(std::io::stderr)
        .init();
    match dispatch(Cli::parse()).await {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
