//! Human judgment records: Likert ratings, pairwise preferences, and
//! annotation agreement.
//!
//! CSV schema (header required, unused cells empty):
//!
//! ```text
//! item_id,criterion,kind,system,score,system_a,system_b,winner
//! d1/n3,coherence,likert,full,4,,,
//! tree1,engagingness,pairwise,,,full,vanilla,A
//! ```
//!
//! The JSON form is an array of objects with the same field names, where
//! `kind` selects which of the remaining fields are present.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::bootstrap::{bootstrap_ci, Interval, StatsError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Criterion {
    Coherence,
    Nonviolation,
    BioUsage,
    QuestUsage,
    ContentSuggestion,
    Engagingness,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Winner {
    A,
    B,
    Tie,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Judgment {
    Likert { system: String, score: u8 },
    Pairwise { system_a: String, system_b: String, winner: Winner },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JudgmentRecord {
    pub item_id: String,
    pub criterion: Criterion,
    #[serde(flatten)]
    pub judgment: Judgment,
}

#[derive(Debug, Error)]
pub enum JudgmentError {
    #[error("record {index}: Likert score {score} outside 1..=4")]
    LikertRange { index: usize, score: u8 },
    #[error("record {index}: pairwise comparison of `{system}` with itself")]
    SelfComparison { index: usize, system: String },
    #[error("expected {expected} records only, record {index} is not")]
    MixedKinds { expected: &'static str, index: usize },
    #[error("record {index}: {message}")]
    Row { index: usize, message: String },
    #[error("annotation key sets differ")]
    KeyMismatch,
    #[error("no annotated nodes")]
    NoNodes,
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Stats(#[from] StatsError),
}

pub fn validate_records(records: &[JudgmentRecord]) -> Result<(), JudgmentError> {
    for (index, r) in records.iter().enumerate() {
        match &r.judgment {
            Judgment::Likert { score, .. } if !(1..=4).contains(score) => {
                return Err(JudgmentError::LikertRange { index, score: *score })
            }
            Judgment::Pairwise { system_a, system_b, .. } if system_a == system_b => {
                return Err(JudgmentError::SelfComparison {
                    index,
                    system: system_a.clone(),
                })
            }
            _ => {}
        }
    }
    Ok(())
}

#[derive(Debug, Deserialize)]
struct Row {
    item_id: String,
    criterion: Criterion,
    kind: String,
    #[serde(default)]
    system: Option<String>,
    #[serde(default)]
    score: Option<u8>,
    #[serde(default)]
    system_a: Option<String>,
    #[serde(default)]
    system_b: Option<String>,
    #[serde(default)]
    winner: Option<Winner>,
}

pub fn records_from_csv(text: &str) -> Result<Vec<JudgmentRecord>, JudgmentError> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let mut out = Vec::new();
    for (index, row) in reader.deserialize::<Row>().enumerate() {
        let row = row?;
        let missing = |field: &str| JudgmentError::Row {
            index,
            message: format!("missing `{field}`"),
        };
        let judgment = match row.kind.as_str() {
            "likert" => Judgment::Likert {
                system: row.system.filter(|s| !s.is_empty()).ok_or_else(|| missing("system"))?,
                score: row.score.ok_or_else(|| missing("score"))?,
            },
            "pairwise" => Judgment::Pairwise {
                system_a: row.system_a.filter(|s| !s.is_empty()).ok_or_else(|| missing("system_a"))?,
                system_b: row.system_b.filter(|s| !s.is_empty()).ok_or_else(|| missing("system_b"))?,
                winner: row.winner.ok_or_else(|| missing("winner"))?,
            },
            other => {
                return Err(JudgmentError::Row {
                    index,
                    message: format!("unknown kind `{other}`"),
                })
            }
        };
        out.push(JudgmentRecord {
            item_id: row.item_id,
            criterion: row.criterion,
            judgment,
        });
    }
    validate_records(&out)?;
    Ok(out)
}

pub fn records_from_json(text: &str) -> Result<Vec<JudgmentRecord>, JudgmentError> {
    let out: Vec<JudgmentRecord> = serde_json::from_str(text)?;
    validate_records(&out)?;
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LikertRow {
    pub system: String,
    pub criterion: Criterion,
    pub n: usize,
    pub mean: f64,
    pub ci: Interval,
}

/// Mean score and bootstrap interval per (system, criterion).
pub fn likert_aggregate(
    records: &[JudgmentRecord],
    resamples: usize,
    level: f64,
    seed: u64,
) -> Result<Vec<LikertRow>, JudgmentError> {
    validate_records(records)?;
    let mut groups: BTreeMap<(String, Criterion), Vec<f64>> = BTreeMap::new();
    for (index, r) in records.iter().enumerate() {
        let Judgment::Likert { system, score } = &r.judgment else {
            return Err(JudgmentError::MixedKinds {
                expected: "likert",
                index,
            });
        };
        groups.entry((system.clone(), r.criterion)).or_default().push(*score as f64);
    }
    groups
        .into_iter()
        .map(|((system, criterion), scores)| {
            let ci = bootstrap_ci(&scores, resamples, level, seed)?;
            Ok(LikertRow {
                system,
                criterion,
                n: scores.len(),
                mean: ci.mean,
                ci,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WinCell {
    pub system: String,
    pub criterion: Criterion,
    pub wins: usize,
    /// Decided comparisons; ties are not counted.
    pub comparisons: usize,
    /// Percentage rounded half to even at one decimal.
    pub percent: String,
}

/// `100 * wins / comparisons` to one decimal, rounded half to even, computed
/// in integers.
pub fn format_percent(wins: usize, comparisons: usize) -> String {
    assert!(comparisons > 0, "percent of zero comparisons");
    let scaled = wins * 1000;
    let (mut q, r) = (scaled / comparisons, scaled % comparisons);
    if 2 * r > comparisons || (2 * r == comparisons && q % 2 == 1) {
        q += 1;
    }
    format!("{}.{}", q / 10, q % 10)
}

/// Head-to-head win percentages per (system, criterion). Cells with no
/// decided comparison are absent.
pub fn pairwise_winrates(records: &[JudgmentRecord]) -> Result<Vec<WinCell>, JudgmentError> {
    validate_records(records)?;
    let mut tally: BTreeMap<(String, Criterion), (usize, usize)> = BTreeMap::new();
    for (index, r) in records.iter().enumerate() {
        let Judgment::Pairwise {
            system_a,
            system_b,
            winner,
        } = &r.judgment
        else {
            return Err(JudgmentError::MixedKinds {
                expected: "pairwise",
                index,
            });
        };
        let (winner, loser) = match winner {
            Winner::A => (system_a, system_b),
            Winner::B => (system_b, system_a),
            Winner::Tie => continue,
        };
        let w = tally.entry((winner.clone(), r.criterion)).or_default();
        w.0 += 1;
        w.1 += 1;
        tally.entry((loser.clone(), r.criterion)).or_default().1 += 1;
    }
    Ok(tally
        .into_iter()
        .map(|((system, criterion), (wins, comparisons))| WinCell {
            system,
            criterion,
            wins,
            comparisons,
            percent: format_percent(wins, comparisons),
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Agreement {
    pub em_avg: f64,
    pub jaccard_avg: f64,
    pub nodes: usize,
}

/// Exact-match and Jaccard agreement between two annotators, averaged over
/// nodes. Two empty sets agree fully.
pub fn annotation_agreement<K: Ord, T: Ord>(
    a: &BTreeMap<K, BTreeSet<T>>,
    b: &BTreeMap<K, BTreeSet<T>>,
) -> Result<Agreement, JudgmentError> {
    if !a.keys().eq(b.keys()) {
        return Err(JudgmentError::KeyMismatch);
    }
    if a.is_empty() {
        return Err(JudgmentError::NoNodes);
    }
    let (mut em, mut jac) = (0.0, 0.0);
    for (k, sa) in a {
        let sb = &b[k];
        if sa == sb {
            em += 1.0;
        }
        let union = sa.union(sb).count();
        jac += if union == 0 {
            1.0
        } else {
            sa.intersection(sb).count() as f64 / union as f64
        };
    }
    let n = a.len() as f64;
    Ok(Agreement {
        em_avg: em / n,
        jaccard_avg: jac / n,
        nodes: a.len(),
    })
}
