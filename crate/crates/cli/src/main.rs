use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use ticketgraph::eval::run::QaText;
use ticketgraph::EvalSettings;
use ticketgraph_cli::{commands, server, Settings};

#[derive(Debug, Parser)]
#[command(name = "ticketgraph", version, about = "Knowledge-graph question answering over support tickets")]
struct Cli {
    /// TOML settings file. TICKETGRAPH_* variables override its values.
    #[arg(long, global = true, env = "TICKETGRAPH_CONFIG")]
    config: Option<PathBuf>,

    /// Snapshot directory, overriding the settings.
    #[arg(long, global = true)]
    snapshot: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Validate and normalize a ticket file.
    Ingest {
        input: PathBuf,
        #[arg(short, long, default_value = "tickets.jsonl")]
        output: PathBuf,
    },
    /// Build the graph, section index and baseline index into the snapshot directory.
    Build { tickets: PathBuf },
    /// Answer one query against the snapshot.
    Query {
        #[arg(required = true, num_args = 1..)]
        query: Vec<String>,
        /// Print the JSON response served by POST /v1/query.
        #[arg(long)]
        json: bool,
    },
    /// Compare the graph pipeline with the baseline on a golden set.
    Eval {
        golden: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "1,3,5")]
        ks: Vec<usize>,
        /// Tickets ranked per query.
        #[arg(long, default_value_t = 10)]
        depth: usize,
        /// Score composed answers instead of the retrieved texts.
        #[arg(long)]
        composed: bool,
        /// Write the full JSON report here.
        #[arg(long)]
        report: Option<PathBuf>,
        /// Print the JSON report instead of the table.
        #[arg(long)]
        json: bool,
    },
    /// Serve the HTTP API.
    Serve {
        #[arg(long)]
        listen: Option<String>,
    },
}

/// Writes to stdout; a reader that hung up early (`| head`) is not an error.
fn print(text: &str) -> Result<()> {
    let mut out = std::io::stdout().lock();
    let mut write = || -> std::io::Result<()> {
        out.write_all(text.as_bytes())?;
        if !text.ends_with('\n') {
            out.write_all(b"\n")?;
        }
        out.flush()
    };
    match write() {
        Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => Ok(()),
        other => Ok(other?),
    }
}

fn run(cli: Cli) -> Result<()> {
    let mut settings = Settings::from_env(cli.config.as_deref())?;
    if let Some(dir) = cli.snapshot {
        settings.snapshot_dir = dir;
    }
    match cli.command {
        Command::Ingest { input, output } => {
            let summary = commands::ingest(&input, &output)?;
            for w in &summary.warnings {
                eprintln!("warning: {w}");
            }
            print(&format!("{} tickets written to {}", summary.tickets, output.display()))
        }
        Command::Build { tickets } => {
            let (manifest, warnings) = commands::build(&settings, &tickets)?;
            for w in &warnings {
                eprintln!("warning: {w}");
            }
            let c = &manifest.counts;
            print(&format!(
                "snapshot {} written to {}\n{} tickets, {} nodes, {} edges, {} section vectors, {} baseline chunks",
                manifest.snapshot_id,
                settings.snapshot_dir.display(),
                c.tickets,
                c.nodes,
                c.edges,
                c.index_vectors,
                c.baseline_chunks
            ))
        }
        Command::Query { query, json } => {
            let loaded = commands::load_engine(&settings)?;
            let response = commands::query(&loaded, &query.join(" "))?;
            if json {
                print(&serde_json::to_string_pretty(&response)?)
            } else {
                print(&commands::render_answer(&response.answer))
            }
        }
        Command::Eval { golden, ks, depth, composed, report, json } => {
            let loaded = commands::load_engine(&settings)?;
            let eval_settings = EvalSettings {
                ks,
                rank_depth: depth,
                qa_text: if composed { QaText::Composed } else { QaText::Retrieved },
            };
            let result = commands::eval(&loaded, &golden, &eval_settings)?;
            let body = serde_json::to_string_pretty(&result)?;
            if let Some(path) = report {
                std::fs::write(&path, format!("{body}\n")).with_context(|| format!("cannot write {}", path.display()))?;
            }
            if json {
                print(&body)
            } else {
                print(&result.table())
            }
        }
        Command::Serve { listen } => {
            if let Some(addr) = listen {
                settings.listen = addr;
            }
            server::serve(settings)
        }
    }
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()),
        )
        .with_writer(std::io::stderr)
        .init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
