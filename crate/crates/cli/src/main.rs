//! `xlqa`: command-line driver for the retrieve-then-generate pipeline.
//!
//! Errors go to stderr as one line, `error[usage|data|transport]: ...`,
//! with exit codes 1, 2 and 3 respectively.

mod commands;
mod config;

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use toml::Value;

use commands::CliError;

#[derive(Debug, Parser)]
#[command(
    name = "xlqa",
    version,
    about = "Cross-lingual retrieve-then-generate question answering",
    after_help = "Any configuration key can also be given as a flag, e.g. --train.epochs 5 or \
                  --paths.passages=p.jsonl. Flags override the config file."
)]
struct Cli {
    /// TOML configuration file.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Base seed for every seeded component.
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,
    /// Passages retrieved per question (retrieve.k); recall cutoff for eval (eval.k).
    #[arg(long, global = true, value_name = "N")]
    k: Option<i64>,
    /// Training rounds of the mining loop (mining.max_iterations).
    #[arg(long, global = true, value_name = "N")]
    iterations: Option<i64>,
    #[arg(long, global = true, value_parser = ["toy-hash", "toy-trainable", "remote"])]
    encoder: Option<String>,
    #[arg(long, global = true, value_parser = ["toy-extractive", "remote"])]
    generator: Option<String>,
    /// Sidecar base URL for remote encoder and generator.
    #[arg(long, global = true, value_name = "URL")]
    endpoint: Option<String>,
    /// Output path of the subcommand (a directory for toy-world).
    #[arg(long, global = true, value_name = "PATH")]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Segment and filter a JSON-lines article dump into passages.
    Ingest { corpus: Option<PathBuf> },
    /// Encode every passage and write the dense index.
    Embed { passages: Option<PathBuf> },
    /// Retrieve the top k passages for each question.
    Retrieve { questions: Option<PathBuf> },
    /// Retrieve, build prompts and generate an answer for each question.
    Answer { questions: Option<PathBuf> },
    /// Train the retriever and mine new training data over several rounds.
    Mine { instances: Option<PathBuf> },
    /// Score predictions and retrievals against gold answers.
    Eval {
        predictions: Option<PathBuf>,
        answers: Option<PathBuf>,
    },
    /// Run the synthetic benchmark and print the recall trajectory.
    #[command(name = "e2e-toy")]
    E2eToy,
    /// Write a synthetic world as pipeline inputs plus a matching config.
    #[command(name = "toy-world")]
    ToyWorld,
}

fn path_value(p: &std::path::Path) -> Value {
    Value::String(p.to_string_lossy().into_owned())
}

/// Named flags and positionals, as dotted keys. These sit above the file
/// and below dotted overrides.
fn flag_values(cli: &Cli) -> Vec<(String, Value)> {
    let mut out = Vec::new();
    let mut put = |k: &str, v: Value| out.push((k.to_string(), v));
    if let Some(s) = cli.seed {
        put("seed", Value::Integer(s as i64));
    }
    if let Some(k) = cli.k {
        put("retrieve.k", Value::Integer(k));
        put("eval.k", Value::Integer(k));
    }
    if let Some(t) = cli.iterations {
        put("mining.max_iterations", Value::Integer(t));
    }
    if let Some(e) = &cli.encoder {
        put("encoder.kind", Value::String(e.clone()));
    }
    if let Some(g) = &cli.generator {
        put("generator.kind", Value::String(g.clone()));
    }
    if let Some(url) = &cli.endpoint {
        put("encoder.endpoint", Value::String(url.clone()));
        put("generator.endpoint", Value::String(url.clone()));
    }
    let (inputs, output): (Vec<(&str, &Option<PathBuf>)>, Option<&str>) = match &cli.command {
        Command::Ingest { corpus } => (vec![("paths.corpus", corpus)], Some("paths.passages")),
        Command::Embed { passages } => (vec![("paths.passages", passages)], Some("paths.index")),
        Command::Retrieve { questions } => {
            (vec![("paths.questions", questions)], Some("paths.retrievals"))
        }
        Command::Answer { questions } => {
            (vec![("paths.questions", questions)], Some("paths.predictions"))
        }
        Command::Mine { instances } => {
            (vec![("paths.instances", instances)], Some("paths.training_set"))
        }
        Command::Eval {
            predictions,
            answers,
        } => (
            vec![("paths.predictions", predictions), ("paths.answers", answers)],
            Some("paths.report"),
        ),
        Command::E2eToy => (Vec::new(), Some("paths.report")),
        Command::ToyWorld => (Vec::new(), None),
    };
    for (key, p) in inputs {
        if let Some(p) = p {
            put(key, path_value(p));
        }
    }
    if let (Some(key), Some(p)) = (output, &cli.out) {
        put(key, path_value(p));
    }
    out
}

fn run(args: Vec<String>, out: &mut dyn Write) -> Result<(), CliError> {
    let (args, overrides) = config::extract_overrides(args).map_err(CliError::Usage)?;
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            // --help and --version
            let _ = write!(out, "{e}");
            return Ok(());
        }
        Err(e) => {
            let text = e.to_string();
            return Err(CliError::Usage(text.trim_start_matches("error: ").to_string()));
        }
    };
    let cfg = config::load(cli.config.as_deref(), &flag_values(&cli), &overrides)?;
    match &cli.command {
        Command::Ingest { .. } => commands::ingest(&cfg, out),
        Command::Embed { .. } => commands::embed(&cfg, out),
        Command::Retrieve { .. } => commands::retrieve(&cfg),
        Command::Answer { .. } => commands::answer(&cfg),
        Command::Mine { .. } => commands::mine(&cfg, out),
        Command::Eval { .. } => commands::eval(&cfg, out),
        Command::E2eToy => commands::e2e_toy(&cfg, out),
        Command::ToyWorld => {
            let dir = cli
                .out
                .as_deref()
                .ok_or_else(|| CliError::Usage("toy-world needs --out DIR".into()))?;
            commands::toy_world(&cfg, dir, out)
        }
    }
}

fn main() -> ExitCode {
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    match run(std::env::args().collect(), &mut out) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let _ = out.flush();
            let message = e.to_string();
            let one_line: Vec<&str> = message.lines().map(str::trim).filter(|l| !l.is_empty()).collect();
            eprintln!("error[{}]: {}", e.tag(), one_line.join(" | "));
            // Usage errors also get the usage text, after the parsable line.
            if matches!(e, CliError::Usage(_)) && !message.contains("Usage:") {
                eprintln!("\nUsage: xlqa [OPTIONS] <COMMAND>  (see xlqa --help)");
            }
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
