//! `qw`: command-line entry points for the dialogue authoring pipeline.
//!
//! Output is canonical JSON on stdout unless `--out` names a file. Exit codes:
//! 0 success, 1 failure or validation findings, 2 usage error. With
//! `--json-errors`, errors are written to stderr as
//! `{"error": {"code", "message"}}`.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "qw", version, about = "Knowledge-constrained NPC dialogue authoring tools")]
pub struct Cli {
    /// Report errors as JSON on stderr.
    #[arg(long, global = true)]
    pub json_errors: bool,
    /// Write the primary output to this file instead of stdout.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BackendKind {
    /// Deterministic offline backend.
    Mock,
    /// OpenAI-compatible completions endpoint from QW_LM_BASE_URL / QW_LM_API_KEY / QW_LM_MODEL.
    Http,
}

#[derive(Debug, Clone, Args)]
pub struct PromptArgs {
    /// Prompt variant: vanilla, quest_only, full, ks, ks_one_fact, ks_oracle.
    #[arg(long, default_value = "full")]
    pub mode: String,
    /// Token budget for the whole prompt.
    #[arg(long, default_value_t = questwriter_core::prompting::DEFAULT_ICL_BUDGET)]
    pub budget: usize,
    /// Token counter id.
    #[arg(long, default_value = questwriter_core::prompting::DEFAULT_TOKENIZER)]
    pub tokenizer: String,
    /// Corpus whose dialogues serve as retrieved exemplars; zero-shot when absent.
    #[arg(long)]
    pub pool: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, Args)]
pub struct BackendArgs {
    #[arg(long, value_enum, default_value = "mock")]
    pub backend: BackendKind,
    #[arg(long, default_value_t = 128)]
    pub max_tokens: usize,
    #[arg(long, default_value_t = 0.7)]
    pub temperature: f64,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Validate a corpus document.
    Validate {
        corpus: PathBuf,
        /// Treat warnings as findings too.
        #[arg(long)]
        strict: bool,
    },
    /// Corpus statistics.
    Stats { corpus: PathBuf },
    /// Partition the corpus quests into train/dev/test.
    Split {
        corpus: PathBuf,
        #[arg(long)]
        train: usize,
        #[arg(long)]
        dev: usize,
        #[arg(long)]
        test: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Emit the whole corpus with its assignment instead of the assignment alone.
        #[arg(long)]
        with_corpus: bool,
    },
    /// Longest edge-simple history from the start node to a node.
    Linearize {
        corpus: PathBuf,
        #[arg(long)]
        dialogue: String,
        #[arg(long)]
        target: String,
        #[arg(long, default_value_t = questwriter_core::linearize::DEFAULT_SEARCH_BUDGET)]
        budget: usize,
    },
    /// Next-utterance tasks from the gold dialogues of a corpus.
    Tasks {
        corpus: PathBuf,
        /// Restrict to one split of an assigned corpus: train, dev or test.
        #[arg(long)]
        split: Option<String>,
        #[arg(long, default_value_t = 1)]
        variants: usize,
        /// Keep at most this many tasks.
        #[arg(long)]
        limit: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Render the prompt for a task.
    Prompt {
        /// A task file (one task or a list; the first is used).
        task: PathBuf,
        #[command(flatten)]
        prompt: PromptArgs,
        /// Print only the prompt text.
        #[arg(long)]
        text: bool,
    },
    /// Generate candidate next utterances for every task in a file.
    Nup {
        tasks: PathBuf,
        #[arg(long, default_value_t = 1)]
        k: usize,
        #[command(flatten)]
        prompt: PromptArgs,
        #[command(flatten)]
        backend: BackendArgs,
        /// Tasks processed concurrently.
        #[arg(long, default_value_t = 4)]
        jobs: usize,
    },
    /// Grow a spine tree with seeded-random commits.
    Spine {
        /// Dialogue specification; the built-in demo spec when absent.
        #[arg(long)]
        spec: Option<PathBuf>,
        /// Start utterance node; required with --spec.
        #[arg(long)]
        start: Option<PathBuf>,
        #[arg(long, default_value_t = 10)]
        rounds: usize,
        #[arg(long, default_value_t = 3)]
        k: usize,
        #[command(flatten)]
        prompt: PromptArgs,
        #[command(flatten)]
        backend: BackendArgs,
        /// Emit a corpus document instead of the spine result.
        #[arg(long)]
        export: bool,
    },
    /// Score `nup` output against gold, quest and biography references.
    Eval {
        results: PathBuf,
        #[arg(long, default_value_t = questwriter_core::evaluation::bootstrap::DEFAULT_RESAMPLES)]
        resamples: usize,
        #[arg(long, default_value_t = questwriter_core::evaluation::bootstrap::DEFAULT_LEVEL)]
        level: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// External semantic scorer endpoint.
        #[arg(long)]
        scorer_url: Option<String>,
        #[arg(long, default_value = "semantic")]
        scorer_name: String,
        /// Concurrent scorer calls.
        #[arg(long, default_value_t = 4)]
        jobs: usize,
        /// Print the aligned text table instead of JSON.
        #[arg(long)]
        table: bool,
    },
    /// Agreement between two support-fact annotation maps.
    Agree { a: PathBuf, b: PathBuf },
    /// Aggregate human judgment records (CSV or JSON).
    Judge {
        records: PathBuf,
        #[arg(long, value_enum)]
        kind: JudgeKind,
        #[arg(long, default_value_t = questwriter_core::evaluation::bootstrap::DEFAULT_RESAMPLES)]
        resamples: usize,
        #[arg(long, default_value_t = questwriter_core::evaluation::bootstrap::DEFAULT_LEVEL)]
        level: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Write a seeded synthetic corpus.
    Synth {
        #[arg(long, default_value_t = 45)]
        quests: usize,
        #[arg(long, default_value_t = 8)]
        max_nodes: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Start the HTTP service.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: std::net::SocketAddr,
        #[arg(long, value_enum, default_value = "mock")]
        backend: BackendKind,
        /// Corpus whose dialogues serve as exemplars.
        #[arg(long)]
        pool: Option<PathBuf>,
        #[arg(long)]
        snapshot_dir: Option<PathBuf>,
        /// Allowed CORS origin; any when absent.
        #[arg(long)]
        cors_origin: Option<String>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum JudgeKind {
    Likert,
    Pairwise,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let json_errors = std::env::args().any(|a| a == "--json-errors");
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            let err = commands::CliError::usage(e.to_string());
            err.report(json_errors);
            return ExitCode::from(err.exit);
        }
    };
    match commands::run(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(err) => {
            err.report(cli.json_errors);
            ExitCode::from(err.exit)
        }
    }
}
