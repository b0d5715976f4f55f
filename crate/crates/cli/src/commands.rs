//! Subcommand implementations.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::sync::Arc;

use questwriter_core::evaluation::{
    annotation_agreement, evaluate_nup, likert_aggregate, pairwise_winrates, records_from_csv, records_from_json,
    EvalConfig, HttpScorer, SemanticScorer,
};
use questwriter_core::json::canonical;
use questwriter_core::linearize::{build_nup_items, linearize, GenerationTask};
use questwriter_core::model::{
    corpus_stats, split_by_quests, validate_corpus, Corpus, Dialogue, DialogueSpec, FactRef, Split, UtteranceNode,
};
use questwriter_core::prompting::{build_icl_prompt, ExemplarPool, PromptConfig, PromptMode};
use questwriter_core::seed::mix_seed;
use questwriter_core::synthetic;
use questwriter_core::writer::backend::fnv1a;
use questwriter_core::writer::{
    generate_candidates, generate_spine, Candidate, HttpBackend, LmBackend, MockBackend, SeededRandom, WriterError,
    WriterOptions,
};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::{BackendArgs, BackendKind, Cli, Command, JudgeKind, PromptArgs};

#[derive(Debug)]
pub struct CliError {
    pub code: &'static str,
    pub message: String,
    pub exit: u8,
}

impl CliError {
    pub fn new(code: &'static str, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
            exit: 1,
        }
    }

    pub fn usage(message: impl Into<String>) -> Self {
        Self {
            exit: 2,
            ..Self::new("usage", message)
        }
    }

    pub fn report(&self, json: bool) {
        if json {
            let body = serde_json::json!({"error": {"code": self.code, "message": self.message}});
            eprintln!("{body}");
        } else {
            eprintln!("error: {}", self.message.trim_end());
        }
    }
}

type Result<T> = std::result::Result<T, CliError>;

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| CliError::new("io", format!("{}: {e}", path.display())))
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    serde_json::from_str(&read_text(path)?).map_err(|e| CliError::new("parse", format!("{}: {e}", path.display())))
}

fn emit(cli: &Cli, text: &str) -> Result<()> {
    match &cli.out {
        Some(path) => std::fs::write(path, text).map_err(|e| CliError::new("io", format!("{}: {e}", path.display()))),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum TaskFile {
    Many(Vec<GenerationTask>),
    One(Box<GenerationTask>),
}

fn read_tasks(path: &Path) -> Result<Vec<GenerationTask>> {
    Ok(match read_json::<TaskFile>(path)? {
        TaskFile::Many(v) => v,
        TaskFile::One(t) => vec![*t],
    })
}

/// One `nup` output record; `eval` reads a list of these.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NupRecord {
    pub task: GenerationTask,
    pub candidates: Vec<Candidate>,
    pub dropped: usize,
    pub prompt_tokens: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

fn prompt_config(args: &PromptArgs) -> Result<PromptConfig> {
    let mode: PromptMode = args.mode.parse().map_err(CliError::usage)?;
    if args.budget == 0 {
        return Err(CliError::usage("--budget must be positive"));
    }
    Ok(PromptConfig {
        mode,
        token_budget: args.budget,
        tokenizer: args.tokenizer.clone(),
        allow_few_shot: true,
        seed: args.seed,
    })
}

fn load_pool(path: Option<&Path>) -> Result<Option<ExemplarPool>> {
    let Some(path) = path else { return Ok(None) };
    let corpus: Corpus = read_json(path)?;
    let dialogues: Vec<Dialogue> = match corpus.split_assignment {
        Some(_) => corpus.dialogues_in(Split::Train).cloned().collect(),
        None => corpus.dialogues.clone(),
    };
    ExemplarPool::new(dialogues).map(Some).map_err(|e| CliError::new("pool", e.to_string()))
}

fn backend(kind: BackendKind) -> Result<Arc<dyn LmBackend>> {
    Ok(match kind {
        BackendKind::Mock => Arc::new(MockBackend::Synthetic),
        BackendKind::Http => Arc::new(HttpBackend::from_env().map_err(|e| CliError::new("backend", e.to_string()))?),
    })
}

fn writer_options(args: &BackendArgs) -> WriterOptions {
    WriterOptions {
        max_tokens: args.max_tokens,
        temperature: args.temperature,
        ..WriterOptions::default()
    }
}

pub fn run(cli: &Cli) -> Result<u8> {
    match &cli.command {
        Command::Validate { corpus, strict } => {
            let corpus: Corpus = read_json(corpus)?;
            let report = validate_corpus(&corpus);
            emit(cli, &canonical(&report))?;
            let failed = if *strict { !report.is_clean() } else { report.has_errors() };
            Ok(u8::from(failed))
        }
        Command::Stats { corpus } => {
            let corpus: Corpus = read_json(corpus)?;
            emit(cli, &canonical(&corpus_stats(&corpus)))?;
            Ok(0)
        }
        Command::Split {
            corpus,
            train,
            dev,
            test,
            seed,
            with_corpus,
        } => {
            let corpus: Corpus = read_json(corpus)?;
            let split = split_by_quests(&corpus, (*train, *dev, *test), *seed).map_err(|e| CliError::usage(e.to_string()))?;
            let text = if *with_corpus {
                split.to_canonical_json()
            } else {
                canonical(&split.split_assignment)
            };
            emit(cli, &text)?;
            Ok(0)
        }
        Command::Linearize {
            corpus,
            dialogue,
            target,
            budget,
        } => {
            let corpus: Corpus = read_json(corpus)?;
            let d = corpus.dialogue(dialogue).map_err(|e| CliError::new("lookup", e.to_string()))?;
            let history = linearize(&d.tree, target, *budget).map_err(|e| CliError::new("linearize", e.to_string()))?;
            emit(cli, &canonical(&history))?;
            Ok(0)
        }
        Command::Tasks {
            corpus,
            split,
            variants,
            limit,
            seed,
        } => {
            let corpus: Corpus = read_json(corpus)?;
            let wanted: Option<Split> = split
                .as_deref()
                .map(|s| serde_json::from_value(serde_json::Value::String(s.to_string())))
                .transpose()
                .map_err(|_| CliError::usage("--split must be train, dev or test"))?;
            let tasks: Vec<GenerationTask> = corpus
                .dialogues
                .iter()
                .filter(|d| wanted.is_none() || corpus.split_of(d) == wanted)
                .flat_map(|d| build_nup_items(d, *variants, *seed))
                .take(limit.unwrap_or(usize::MAX))
                .collect();
            emit(cli, &canonical(&tasks))?;
            Ok(0)
        }
        Command::Prompt { task, prompt, text } => {
            let task = read_tasks(task)?.into_iter().next().ok_or_else(|| CliError::usage("task file is empty"))?;
            let cfg = prompt_config(prompt)?;
            let pool = load_pool(prompt.pool.as_deref())?;
            let p = build_icl_prompt(&task, &cfg, pool.as_ref()).map_err(|e| CliError::new("prompt", e.to_string()))?;
            if *text {
                emit(cli, &p.text)?;
                eprintln!("tokens: {}", p.token_count);
            } else {
                emit(cli, &canonical(&p))?;
            }
            Ok(0)
        }
        Command::Nup {
            tasks,
            k,
            prompt,
            backend: bargs,
            jobs,
        } => {
            let tasks = read_tasks(tasks)?;
            let cfg = prompt_config(prompt)?;
            let pool = load_pool(prompt.pool.as_deref())?;
            let backend = backend(bargs.backend)?;
            let options = writer_options(bargs);
            let one = |task: &GenerationTask| -> Result<NupRecord> {
                let cfg = PromptConfig {
                    seed: mix_seed(cfg.seed, &[fnv1a(task.id.as_bytes())]),
                    ..cfg.clone()
                };
                match generate_candidates(task, &cfg, pool.as_ref(), *k, &options, backend.as_ref()) {
                    Ok(set) => Ok(NupRecord {
                        task: task.clone(),
                        candidates: set.candidates,
                        dropped: set.dropped,
                        prompt_tokens: set.prompt.token_count,
                        error: None,
                    }),
                    Err(e @ WriterError::NoCandidates { .. }) => Ok(NupRecord {
                        task: task.clone(),
                        candidates: Vec::new(),
                        dropped: *k,
                        prompt_tokens: 0,
                        error: Some(e.to_string()),
                    }),
                    Err(e) => Err(CliError::new("generation", format!("{}: {e}", task.id))),
                }
            };
            let mut records = Vec::with_capacity(tasks.len());
            for chunk in tasks.chunks((*jobs).max(1)) {
                let results: Vec<Result<NupRecord>> = std::thread::scope(|s| {
                    let handles: Vec<_> = chunk.iter().map(|t| s.spawn(|| one(t))).collect();
                    handles.into_iter().map(|h| h.join().expect("worker panicked")).collect()
                });
                for r in results {
                    records.push(r?);
                }
            }
            emit(cli, &canonical(&records))?;
            Ok(0)
        }
        Command::Spine {
            spec,
            start,
            rounds,
            k,
            prompt,
            backend: bargs,
            export,
        } => {
            let (spec, start): (DialogueSpec, UtteranceNode) = match (spec, start) {
                (None, None) => (synthetic::demo_spec(), synthetic::demo_start()),
                (Some(s), Some(st)) => (read_json(s)?, read_json(st)?),
                _ => return Err(CliError::usage("--spec and --start go together")),
            };
            let cfg = prompt_config(prompt)?;
            let pool = load_pool(prompt.pool.as_deref())?;
            let backend = backend(bargs.backend)?;
            let mut policy = SeededRandom::new(prompt.seed);
            let result = generate_spine(
                spec.clone(),
                start,
                *rounds,
                *k,
                &cfg,
                pool.as_ref(),
                &writer_options(bargs),
                &mut policy,
                backend.as_ref(),
            )
            .map_err(|e| CliError::usage(e.to_string()))?;
            if result.partial {
                log::warn!("spine stopped early: {}", result.failure.as_deref().unwrap_or("unknown failure"));
            }
            let text = if *export {
                Corpus {
                    quests: vec![spec.quest_spec()],
                    dialogues: vec![Dialogue {
                        id: "spine".into(),
                        spec,
                        tree: result.tree.clone(),
                    }],
                    split_assignment: None,
                }
                .to_canonical_json()
            } else {
                canonical(&result)
            };
            emit(cli, &text)?;
            Ok(u8::from(result.partial))
        }
        Command::Eval {
            results,
            resamples,
            level,
            seed,
            scorer_url,
            scorer_name,
            jobs,
            table,
        } => {
            let records: Vec<NupRecord> = read_json(results)?;
            let items: Vec<(GenerationTask, String)> = records
                .into_iter()
                .map(|r| {
                    let text = r.candidates.first().map(|c| c.text.clone()).unwrap_or_default();
                    (r.task, text)
                })
                .collect();
            let scorer = scorer_url
                .as_ref()
                .map(|u| HttpScorer::new(u.clone(), scorer_name.clone()))
                .transpose()
                .map_err(|e| CliError::new("scorer", e.to_string()))?;
            let cfg = EvalConfig {
                resamples: *resamples,
                level: *level,
                seed: *seed,
                jobs: *jobs,
            };
            let report = evaluate_nup(&items, scorer.as_ref().map(|s| s as &dyn SemanticScorer), &cfg)
                .map_err(|e| CliError::new("eval", e.to_string()))?;
            emit(cli, &if *table { report.to_table() } else { canonical(&report) })?;
            Ok(0)
        }
        Command::Agree { a, b } => {
            let a: BTreeMap<String, BTreeSet<FactRef>> = read_json(a)?;
            let b: BTreeMap<String, BTreeSet<FactRef>> = read_json(b)?;
            let agreement = annotation_agreement(&a, &b).map_err(|e| CliError::new("agree", e.to_string()))?;
            emit(cli, &canonical(&agreement))?;
            Ok(0)
        }
        Command::Judge {
            records,
            kind,
            resamples,
            level,
            seed,
        } => {
            let text = read_text(records)?;
            let is_json = records.extension().is_some_and(|e| e == "json");
            let recs = if is_json { records_from_json(&text) } else { records_from_csv(&text) }
                .map_err(|e| CliError::new("parse", e.to_string()))?;
            let out = match kind {
                JudgeKind::Likert => likert_aggregate(&recs, *resamples, *level, *seed).map(|r| canonical(&r)),
                JudgeKind::Pairwise => pairwise_winrates(&recs).map(|r| canonical(&r)),
            }
            .map_err(|e| CliError::new("judge", e.to_string()))?;
            emit(cli, &out)?;
            Ok(0)
        }
        Command::Synth { quests, max_nodes, seed } => {
            emit(cli, &synthetic::corpus(*quests, *max_nodes, *seed).to_canonical_json())?;
            Ok(0)
        }
        Command::Serve {
            addr,
            backend: kind,
            pool,
            snapshot_dir,
            cors_origin,
        } => {
            let mut config = questwriter_service::ServiceConfig::new(backend(*kind)?);
            config.pool = load_pool(pool.as_deref())?.map(Arc::new);
            config.snapshot_dir = snapshot_dir.clone();
            config.cors_origin = cors_origin.clone();
            let rt = tokio::runtime::Runtime::new().map_err(|e| CliError::new("runtime", e.to_string()))?;
            rt.block_on(questwriter_service::serve(*addr, config))
                .map_err(|e| CliError::new("serve", e.to_string()))?;
            Ok(0)
        }
    }
}
