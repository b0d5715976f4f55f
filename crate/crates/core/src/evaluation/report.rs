//! Next-utterance evaluation against gold, quest and biography references.
//!
//! Each item's candidate is scored with smoothed sentence BLEU-4 against
//! three reference sets: the gold utterance, every quest statement, and every
//! biography statement. The report carries per-item scores, bootstrap means
//! with intervals, and unsmoothed corpus BLEU per set.
//!
//! An optional [`SemanticScorer`] adds a learned-similarity column scored
//! against the gold reference. [`HttpScorer`] speaks this contract:
//!
//! ```text
//! POST {url}  {"candidate": "...", "references": ["..."]}
//! 200         {"score": 0.42}
//! ```

use std::fmt::Write as _;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::bleu::{bleu4, corpus_bleu4};
use super::bootstrap::{bootstrap_ci, Interval, StatsError, DEFAULT_LEVEL, DEFAULT_RESAMPLES};
use crate::linearize::GenerationTask;
use crate::prompting::{ExemplarPool, PromptConfig};
use crate::seed::mix_seed;
use crate::writer::backend::fnv1a;
use crate::writer::{generate_candidates, LmBackend, WriterError, WriterOptions};

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("no items to evaluate")]
    Empty,
    #[error("task `{0}` has no gold target")]
    MissingGold(String),
    #[error(transparent)]
    Stats(#[from] StatsError),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScorerError {
    #[error("scorer transport error: {0}")]
    Transport(String),
    #[error("scorer returned status {0}")]
    Status(u16),
    #[error("malformed scorer response: {0}")]
    Decode(String),
    #[error("scorer returned {0}, outside [0, 1]")]
    OutOfRange(f64),
}

/// External similarity metric. Implementations must accept concurrent calls.
pub trait SemanticScorer: Send + Sync {
    fn name(&self) -> &str;
    fn score(&self, candidate: &str, references: &[String]) -> Result<f64, ScorerError>;
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReferenceSets {
    pub gold: Vec<String>,
    pub quest: Vec<String>,
    pub bio: Vec<String>,
}

impl ReferenceSets {
    pub fn for_task(task: &GenerationTask) -> Result<Self, ReportError> {
        let gold = task.gold_target.as_ref().ok_or_else(|| ReportError::MissingGold(task.id.clone()))?;
        Ok(Self {
            gold: vec![gold.text.clone()],
            quest: task.spec.quest_statements().iter().map(|s| s.text.clone()).collect(),
            bio: task.spec.bio_statements().iter().map(|s| s.text.clone()).collect(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub resamples: usize,
    pub level: f64,
    pub seed: u64,
    /// Upper bound on concurrent scorer calls.
    pub jobs: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            resamples: DEFAULT_RESAMPLES,
            level: DEFAULT_LEVEL,
            seed: 0,
            jobs: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemScores {
    pub task_id: String,
    pub dialogue_id: String,
    pub candidate: String,
    pub gold: f64,
    /// Absent when the spec has no quest statements.
    pub quest: Option<f64>,
    /// Absent when the spec has no biography statements.
    pub bio: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub semantic: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub semantic_error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnSummary {
    /// Items contributing to this column.
    pub n: usize,
    pub ci: Interval,
    /// Unsmoothed BLEU-4 over pooled statistics; absent for the semantic
    /// column.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub corpus_bleu: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SemanticSummary {
    pub scorer: String,
    pub errors: usize,
    /// Absent when every call failed.
    pub summary: Option<ColumnSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub items: usize,
    pub resamples: usize,
    pub level: f64,
    pub seed: u64,
    pub gold: ColumnSummary,
    pub quest: Option<ColumnSummary>,
    pub bio: Option<ColumnSummary>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub semantic: Option<SemanticSummary>,
    pub per_item: Vec<ItemScores>,
}

fn summarize(
    column: &[Option<f64>],
    corpus: Option<f64>,
    cfg: &EvalConfig,
    salt: u64,
) -> Result<Option<ColumnSummary>, ReportError> {
    let scores: Vec<f64> = column.iter().flatten().copied().collect();
    if scores.is_empty() {
        return Ok(None);
    }
    let ci = bootstrap_ci(&scores, cfg.resamples, cfg.level, mix_seed(cfg.seed, &[salt]))?;
    Ok(Some(ColumnSummary {
        n: scores.len(),
        ci,
        corpus_bleu: corpus,
    }))
}

fn run_scorer(
    scorer: &dyn SemanticScorer,
    jobs: usize,
    work: &[(&str, &[String])],
) -> Vec<Result<f64, ScorerError>> {
    let check = |r: Result<f64, ScorerError>| match r {
        Ok(s) if !(0.0..=1.0).contains(&s) => Err(ScorerError::OutOfRange(s)),
        other => other,
    };
    let mut out = Vec::with_capacity(work.len());
    for chunk in work.chunks(jobs.max(1)) {
        std::thread::scope(|s| {
            let handles: Vec<_> = chunk
                .iter()
                .map(|(cand, refs)| s.spawn(move || check(scorer.score(cand, refs))))
                .collect();
            out.extend(handles.into_iter().map(|h| h.join().expect("scorer worker panicked")));
        });
    }
    out
}

/// Scores `(task, candidate text)` pairs. Scorer failures are recorded on the
/// item and left out of the semantic summary.
pub fn evaluate_nup(
    results: &[(GenerationTask, String)],
    scorer: Option<&dyn SemanticScorer>,
    cfg: &EvalConfig,
) -> Result<MetricReport, ReportError> {
    if results.is_empty() {
        return Err(ReportError::Empty);
    }
    let refs: Vec<ReferenceSets> = results.iter().map(|(t, _)| ReferenceSets::for_task(t)).collect::<Result<_, _>>()?;
    let score = |set: &[String], cand: &str| (!set.is_empty()).then(|| bleu4(cand, set, true));

    let mut per_item: Vec<ItemScores> = results
        .iter()
        .zip(&refs)
        .map(|((task, cand), r)| ItemScores {
            task_id: task.id.clone(),
            dialogue_id: task.dialogue_id.clone(),
            candidate: cand.clone(),
            gold: bleu4(cand, &r.gold, true),
            quest: score(&r.quest, cand),
            bio: score(&r.bio, cand),
            semantic: None,
            semantic_error: None,
        })
        .collect();

    let semantic = match scorer {
        None => None,
        Some(scorer) => {
            let work: Vec<(&str, &[String])> =
                results.iter().zip(&refs).map(|((_, c), r)| (c.as_str(), r.gold.as_slice())).collect();
            let mut errors = 0;
            for (item, outcome) in per_item.iter_mut().zip(run_scorer(scorer, cfg.jobs, &work)) {
                match outcome {
                    Ok(s) => item.semantic = Some(s),
                    Err(e) => {
                        errors += 1;
                        item.semantic_error = Some(e.to_string());
                    }
                }
            }
            let column: Vec<Option<f64>> = per_item.iter().map(|i| i.semantic).collect();
            Some(SemanticSummary {
                scorer: scorer.name().to_string(),
                errors,
                summary: summarize(&column, None, cfg, 4)?,
            })
        }
    };

    let corpus = |pick: fn(&ReferenceSets) -> &Vec<String>| {
        let any = refs.iter().any(|r| !pick(r).is_empty());
        any.then(|| corpus_bleu4(results.iter().zip(&refs).map(|((_, c), r)| (c.as_str(), pick(r).as_slice()))))
    };
    let gold_col: Vec<Option<f64>> = per_item.iter().map(|i| Some(i.gold)).collect();
    let quest_col: Vec<Option<f64>> = per_item.iter().map(|i| i.quest).collect();
    let bio_col: Vec<Option<f64>> = per_item.iter().map(|i| i.bio).collect();

    Ok(MetricReport {
        items: results.len(),
        resamples: cfg.resamples,
        level: cfg.level,
        seed: cfg.seed,
        gold: summarize(&gold_col, corpus(|r| &r.gold), cfg, 1)?.expect("gold column is never empty"),
        quest: summarize(&quest_col, corpus(|r| &r.quest), cfg, 2)?,
        bio: summarize(&bio_col, corpus(|r| &r.bio), cfg, 3)?,
        semantic,
        per_item,
    })
}

impl MetricReport {
    /// Aligned plain-text summary table.
    pub fn to_table(&self) -> String {
        let mut rows = vec![["reference".to_string(), "n".into(), "mean".into(), "lo".into(), "hi".into(), "corpus".into()]];
        let mut push = |name: &str, c: &Option<ColumnSummary>| {
            let row = match c {
                Some(c) => [
                    name.to_string(),
                    c.n.to_string(),
                    format!("{:.4}", c.ci.mean),
                    format!("{:.4}", c.ci.lo),
                    format!("{:.4}", c.ci.hi),
                    c.corpus_bleu.map_or("-".into(), |v| format!("{v:.4}")),
                ],
                None => [name.to_string(), "0".into(), "-".into(), "-".into(), "-".into(), "-".into()],
            };
            rows.push(row);
        };
        push("gold", &Some(self.gold.clone()));
        push("quest", &self.quest);
        push("bio", &self.bio);
        if let Some(s) = &self.semantic {
            push(&format!("semantic:{}", s.scorer), &s.summary);
        }
        let widths: Vec<usize> = (0..6).map(|i| rows.iter().map(|r| r[i].len()).max().unwrap_or(0)).collect();
        let mut out = String::new();
        for row in &rows {
            let cells: Vec<String> = row
                .iter()
                .zip(&widths)
                .enumerate()
                .map(|(i, (c, w))| if i == 0 { format!("{c:<w$}") } else { format!("{c:>w$}") })
                .collect();
            let _ = writeln!(out, "{}", cells.join("  ").trim_end());
        }
        let _ = writeln!(out, "items: {}  level: {}  resamples: {}", self.items, self.level, self.resamples);
        out
    }
}

/// One candidate per task from `backend`, seeded per task id. A task whose
/// completions never parse gets an empty candidate, which scores zero.
pub fn predict_next_utterances(
    tasks: &[GenerationTask],
    config: &PromptConfig,
    pool: Option<&ExemplarPool>,
    options: &WriterOptions,
    backend: &dyn LmBackend,
) -> Result<Vec<(GenerationTask, String)>, WriterError> {
    tasks
        .iter()
        .map(|task| {
            let cfg = PromptConfig {
                seed: mix_seed(config.seed, &[fnv1a(task.id.as_bytes())]),
                ..config.clone()
            };
            let text = match generate_candidates(task, &cfg, pool, 1, options, backend) {
                Ok(set) => set.candidates[0].text.clone(),
                Err(WriterError::NoCandidates { .. }) => String::new(),
                Err(e) => return Err(e),
            };
            Ok((task.clone(), text))
        })
        .collect()
}

#[derive(Debug, Serialize)]
struct ScoreRequest<'a> {
    candidate: &'a str,
    references: &'a [String],
}

#[derive(Debug, Deserialize)]
struct ScoreResponse {
    score: f64,
}

/// JSON-over-HTTP scorer; see the module docs for the wire format.
#[derive(Debug, Clone)]
pub struct HttpScorer {
    client: reqwest::blocking::Client,
    url: String,
    name: String,
}

impl HttpScorer {
    pub fn new(url: impl Into<String>, name: impl Into<String>) -> Result<Self, ScorerError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(60))
            .build()
            .map_err(|e| ScorerError::Transport(e.to_string()))?;
        Ok(Self {
            client,
            url: url.into(),
            name: name.into(),
        })
    }
}

impl SemanticScorer for HttpScorer {
    fn name(&self) -> &str {
        &self.name
    }

    fn score(&self, candidate: &str, references: &[String]) -> Result<f64, ScorerError> {
        let resp = self
            .client
            .post(&self.url)
            .json(&ScoreRequest { candidate, references })
            .send()
            .map_err(|e| ScorerError::Transport(e.to_string()))?;
        if !resp.status().is_success() {
            return Err(ScorerError::Status(resp.status().as_u16()));
        }
        let text = resp.text().map_err(|e| ScorerError::Transport(e.to_string()))?;
        let parsed: ScoreResponse = serde_json::from_str(&text).map_err(|e| ScorerError::Decode(e.to_string()))?;
        Ok(parsed.score)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::json::canonical;
    use crate::linearize::History;
    use crate::model::{fixtures, UtteranceNode};
    use crate::writer::MockBackend;

    fn task(id: &str, gold: &str) -> GenerationTask {
        GenerationTask {
            id: id.into(),
            dialogue_id: "d".into(),
            spec: fixtures::spec(),
            subtree: fixtures::chain(),
            most_recent: "b".into(),
            history: History::exact(vec!["a".into(), "b".into()]),
            gold_target: Some(UtteranceNode::new("c", "Agnes Needham", gold)),
            gold_facts: None,
        }
    }

    fn cfg() -> EvalConfig {
        EvalConfig {
            resamples: 200,
            ..EvalConfig::default()
        }
    }

    struct Fixed(Result<f64, ScorerError>);

    impl SemanticScorer for Fixed {
        fn name(&self) -> &str {
            "fixed"
        }
        fn score(&self, _: &str, _: &[String]) -> Result<f64, ScorerError> {
            self.0.clone()
        }
    }

    #[test]
    fn reference_sets_from_spec() {
        let r = ReferenceSets::for_task(&task("t", "My boy ran off.")).unwrap();
        assert_eq!(r.gold, ["My boy ran off."]);
        assert_eq!(r.quest.len(), 4);
        assert_eq!(r.bio.len(), 3);
        let mut t = task("t", "x");
        t.gold_target = None;
        assert!(matches!(ReferenceSets::for_task(&t), Err(ReportError::MissingGold(_))));
    }

    #[test]
    fn single_item_identity() {
        let g = "My boy ran to the hills.";
        let r = evaluate_nup(&[(task("t", g), g.into())], None, &cfg()).unwrap();
        assert!((r.gold.ci.mean - 1.0).abs() < 1e-12);
        assert_eq!(r.gold.corpus_bleu, Some(1.0));
        assert!(r.semantic.is_none());
        let json = canonical(&r);
        assert!(!json.contains("semantic"));
    }

    #[test]
    fn means_are_hand_averages() {
        let items = vec![
            (task("t1", "she offers a reward ."), "She offers a reward.".to_string()),
            (task("t2", "the boy went to the hills"), "the boy went up to the hills".to_string()),
        ];
        let r = evaluate_nup(&items, None, &cfg()).unwrap();
        let g1 = bleu4("She offers a reward.", &["she offers a reward ."], true);
        let g2 = bleu4("the boy went up to the hills", &["the boy went to the hills"], true);
        assert!((r.gold.ci.mean - (g1 + g2) / 2.0).abs() < 1e-12);
        let quest: Vec<String> = fixtures::spec().quest_statements().iter().map(|s| s.text.clone()).collect();
        let q1 = bleu4("She offers a reward.", &quest, true);
        let q2 = bleu4("the boy went up to the hills", &quest, true);
        assert!((r.quest.as_ref().unwrap().ci.mean - (q1 + q2) / 2.0).abs() < 1e-12);
        for c in [Some(&r.gold), r.quest.as_ref(), r.bio.as_ref()].into_iter().flatten() {
            assert!(c.ci.lo <= c.ci.mean && c.ci.mean <= c.ci.hi);
            assert!((0.0..=1.0).contains(&c.ci.lo) && (0.0..=1.0).contains(&c.ci.hi));
        }
    }

    #[test]
    fn scorer_errors_are_per_item() {
        let items = vec![(task("t", "a b"), "a b".to_string())];
        let ok = evaluate_nup(&items, Some(&Fixed(Ok(0.5))), &cfg()).unwrap();
        let s = ok.semantic.unwrap();
        assert_eq!((s.errors, s.summary.unwrap().ci.mean), (0, 0.5));
        let bad = evaluate_nup(&items, Some(&Fixed(Err(ScorerError::Status(503)))), &cfg()).unwrap();
        let s = bad.semantic.as_ref().unwrap();
        assert_eq!((s.errors, s.summary.is_none()), (1, true));
        assert!(bad.per_item[0].semantic_error.as_deref().unwrap().contains("503"));
        let range = evaluate_nup(&items, Some(&Fixed(Ok(1.5))), &cfg()).unwrap();
        assert_eq!(range.semantic.unwrap().errors, 1);
    }

    #[test]
    fn empty_input_is_an_error() {
        assert!(matches!(evaluate_nup(&[], None, &cfg()), Err(ReportError::Empty)));
    }

    #[test]
    fn table_lists_columns() {
        let r = evaluate_nup(&[(task("t", "a b c d"), "a b c d".into())], None, &cfg()).unwrap();
        let table = r.to_table();
        assert!(table.lines().next().unwrap().starts_with("reference"));
        assert!(table.contains("gold") && table.contains("1.0000"));
    }

    #[test]
    fn prediction_is_deterministic() {
        let tasks = vec![task("t1", "x"), task("t2", "y")];
        let run = || {
            predict_next_utterances(&tasks, &PromptConfig::default(), None, &WriterOptions::default(), &MockBackend::Synthetic)
                .unwrap()
        };
        let a = run();
        assert_eq!(a, run());
        assert!(a.iter().all(|(_, c)| !c.is_empty()));
        let empty = predict_next_utterances(&tasks, &PromptConfig::default(), None, &WriterOptions::default(), &MockBackend::Garbage)
            .unwrap();
        assert!(empty.iter().all(|(_, c)| c.is_empty()));
    }

    #[test]
    fn http_scorer_round_trip() {
        use std::io::{Read, Write};
        let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let server = std::thread::spawn(move || {
            let (mut stream, _) = listener.accept().unwrap();
            let mut buf = Vec::new();
            let mut chunk = [0u8; 4096];
            while !String::from_utf8_lossy(&buf).contains("\"references\"") {
                let n = stream.read(&mut chunk).unwrap();
                if n == 0 {
                    break;
                }
                buf.extend_from_slice(&chunk[..n]);
            }
            let body = r#"{"score":0.25}"#;
            let msg = format!("HTTP/1.1 200 OK\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{body}", body.len());
            stream.write_all(msg.as_bytes()).unwrap();
            String::from_utf8_lossy(&buf).to_string()
        });
        let scorer = HttpScorer::new(format!("http://{addr}/score"), "bertscore").unwrap();
        assert_eq!(scorer.score("hi", &["hello".into()]).unwrap(), 0.25);
        let request = server.join().unwrap();
        assert!(request.contains(r#""candidate":"hi""#) && request.contains(r#""references":["hello"]"#));
    }
}
