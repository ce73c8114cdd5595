use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{ArgAction, Parser, Subcommand};
use intercom_core::pipeline::Config;

mod commands;

/// Detect and analyze intercommunity mobilizations in threaded discussion logs.
#[derive(Debug, Parser)]
#[command(name = "intercom", version)]
struct Cli {
    /// `key = value` configuration file.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Override one configuration key; repeatable, applied after the file.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Event log (JSONL); overrides the `corpus` key.
    #[arg(long, global = true, value_name = "PATH")]
    corpus: Option<PathBuf>,
    /// -v for progress, -vv for debug output.
    #[arg(short, long, global = true, action = ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Load an event log and report what was kept and rejected.
    Ingest {
        path: PathBuf,
        /// Write the normalized event log and load report here.
        #[arg(long, value_name = "DIR")]
        index_out: Option<PathBuf>,
    },
    /// Show the matched control post for a post.
    Match {
        #[arg(long)]
        post: String,
    },
    /// Extract cross-community links (JSONL).
    Crosslinks,
    /// Classify every cross-link as a mobilization or not (JSONL).
    Detect {
        /// `auto` estimates the baseline from matched threads; a number fixes it.
        #[arg(long, default_value = "auto")]
        baseline: String,
    },
    /// Train or apply the cross-link sentiment classifier.
    Sentiment {
        #[command(subcommand)]
        action: SentimentAction,
    },
    /// Reply network and echo-chamber metrics for one mobilization.
    Replynet {
        /// Source post id of the cross-link.
        #[arg(long)]
        mobilization: String,
        /// Also write the edge list here.
        #[arg(long, value_name = "FILE")]
        edges: Option<PathBuf>,
    },
    /// Defender success per conflict (JSONL).
    Impact {
        /// Print per-user activity deltas instead of per-conflict outcomes.
        #[arg(long)]
        users: bool,
    },
    /// Train user and community embeddings.
    Embed {
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
    },
    /// Train, evaluate, or apply the mobilization predictor.
    Predict {
        #[command(subcommand)]
        action: PredictAction,
    },
    /// Generate a synthetic corpus with planted mobilizations.
    Synth(SynthArgs),
    /// Run the whole pipeline and write the report bundle.
    Report {
        /// Output directory; overrides the `output` key.
        #[arg(long, value_name = "DIR")]
        out: Option<PathBuf>,
        /// Print the bundle schema and exit.
        #[arg(long, conflicts_with = "validate")]
        schema: bool,
        /// Check an existing bundle against its manifest and the schema.
        #[arg(long, value_name = "DIR")]
        validate: Option<PathBuf>,
    },
}

#[derive(Debug, Subcommand)]
enum SentimentAction {
    Train {
        /// Labels file; overrides the `labels` key.
        #[arg(long, value_name = "FILE")]
        labels: Option<PathBuf>,
        #[arg(long, value_name = "FILE")]
        model: PathBuf,
    },
    Predict {
        #[arg(long, value_name = "FILE")]
        model: PathBuf,
    },
}

#[derive(Debug, clap::Args)]
struct ModelArgs {
    #[arg(long, value_name = "FILE")]
    model: PathBuf,
    /// Directory holding users.vec, communities.vec and words.vec.
    #[arg(long, value_name = "DIR")]
    embeddings: PathBuf,
}

#[derive(Debug, Subcommand)]
enum PredictAction {
    /// Train on the corpus; embeddings missing from the directory are trained and saved.
    Train(ModelArgs),
    /// AUC of a saved model on the corpus.
    Eval {
        #[command(flatten)]
        args: ModelArgs,
        /// Score only the held-out test split instead of every cross-link.
        #[arg(long)]
        test_split: bool,
    },
    /// Mobilization probability per cross-link (JSONL).
    Score(ModelArgs),
}

#[derive(Debug, clap::Args)]
struct SynthArgs {
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
    #[arg(long, default_value_t = 20)]
    communities: usize,
    #[arg(long, default_value_t = 40)]
    users: usize,
    #[arg(long, default_value_t = 200)]
    crosslinks: usize,
    #[arg(long, default_value_t = 5.0)]
    burst: f64,
    #[arg(long, default_value_t = 0.5)]
    quiet: f64,
    #[arg(long, default_value_t = 1.6)]
    matched_ratio: f64,
    #[arg(long, default_value_t = 35)]
    days_after: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

/// A malformed argument value discovered after parsing.
#[derive(Debug)]
struct Usage(String);

impl fmt::Display for Usage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

fn exit_code(err: &anyhow::Error) -> u8 {
    use intercom_core::Error as E;
    for cause in err.chain() {
        if cause.is::<Usage>() {
            return 1;
        }
        if let Some(e) = cause.downcast_ref::<E>() {
            return match e.root() {
                E::Config(_) => 1,
                E::NotConverged { .. } | E::NonFinite(_) | E::Diverged(_) => 3,
                _ => 2,
            };
        }
        if cause.is::<std::io::Error>() || cause.is::<serde_json::Error>() {
            return 2;
        }
    }
    3
}

/// The error chain, skipping causes the preceding message already ends with.
fn message(err: &anyhow::Error) -> String {
    let mut msg = err.to_string();
    for cause in err.chain().skip(1) {
        let text = cause.to_string();
        if !msg.ends_with(&text) {
            msg.push_str(": ");
            msg.push_str(&text);
        }
    }
    msg
}

fn broken_pipe(err: &anyhow::Error) -> bool {
    err.chain()
        .filter_map(|c| c.downcast_ref::<std::io::Error>())
        .any(|e| e.kind() == std::io::ErrorKind::BrokenPipe)
}

fn load_config(cli: &Cli) -> Result<Config> {
    let overrides = cli.set.iter().map(String::as_str);
    let mut config = match &cli.config {
        Some(path) => Config::load_with_overrides(path, overrides)?,
        None => {
            let mut c = Config::default();
            c.apply_overrides(overrides)?;
            c
        }
    };
    if let Some(corpus) = &cli.corpus {
        config.corpus = Some(corpus.clone());
    }
    Ok(config)
}

fn run(cli: Cli) -> Result<()> {
    let config = load_config(&cli)?;
    commands::dispatch(cli.command, config)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new().filter_level(level).parse_default_env().init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) if broken_pipe(&e) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("intercom: {}", message(&e));
            ExitCode::from(exit_code(&e))
        }
    }
}
