//! Okapi BM25 over training dialogues, used to pick few-shot exemplars.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linearize::{longest_trail, DEFAULT_SEARCH_BUDGET};
use crate::model::{Dialogue, DialogueSpec};

pub const DEFAULT_K1: f64 = 1.2;
pub const DEFAULT_B: f64 = 0.75;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RetrievalError {
    #[error("duplicate document id `{0}`")]
    DuplicateId(String),
    #[error("unknown document id `{0}`")]
    UnknownDoc(String),
    #[error("invalid parameters k1={k1}, b={b}")]
    InvalidParams { k1: f64, b: f64 },
}

/// Lowercases and splits on anything that is not alphanumeric.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Doc {
    id: String,
    len: usize,
    tf: BTreeMap<String, usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Bm25Index {
    docs: Vec<Doc>,
    df: BTreeMap<String, usize>,
    avg_len: f64,
    k1: f64,
    b: f64,
}

impl Bm25Index {
    pub fn build<I, S, T>(docs: I, k1: f64, b: f64) -> Result<Self, RetrievalError>
    where
        I: IntoIterator<Item = (S, T)>,
        S: Into<String>,
        T: AsRef<str>,
    {
        if !(k1 >= 0.0 && k1.is_finite() && (0.0..=1.0).contains(&b)) {
            return Err(RetrievalError::InvalidParams { k1, b });
        }
        let mut ids = BTreeSet::new();
        let mut out = Vec::new();
        let mut df: BTreeMap<String, usize> = BTreeMap::new();
        let mut total = 0usize;
        for (id, text) in docs {
            let id = id.into();
            if !ids.insert(id.clone()) {
                return Err(RetrievalError::DuplicateId(id));
            }
            let tokens = tokenize(text.as_ref());
            let mut tf: BTreeMap<String, usize> = BTreeMap::new();
            for t in &tokens {
                *tf.entry(t.clone()).or_default() += 1;
            }
            for term in tf.keys() {
                *df.entry(term.clone()).or_default() += 1;
            }
            total += tokens.len();
            out.push(Doc {
                id,
                len: tokens.len(),
                tf,
            });
        }
        let avg_len = if out.is_empty() { 0.0 } else { total as f64 / out.len() as f64 };
        Ok(Self {
            docs: out,
            df,
            avg_len,
            k1,
            b,
        })
    }

    pub fn with_defaults<I, S, T>(docs: I) -> Result<Self, RetrievalError>
    where
        I: IntoIterator<Item = (S, T)>,
        S: Into<String>,
        T: AsRef<str>,
    {
        Self::build(docs, DEFAULT_K1, DEFAULT_B)
    }

    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    pub fn avg_len(&self) -> f64 {
        self.avg_len
    }

    pub fn doc_freq(&self, term: &str) -> usize {
        self.df.get(term).copied().unwrap_or(0)
    }

    pub fn vocabulary(&self) -> impl Iterator<Item = &str> {
        self.df.keys().map(String::as_str)
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.docs.iter().map(|d| d.id.as_str())
    }

    pub fn idf(&self, term: &str) -> f64 {
        let n = self.docs.len() as f64;
        let df = self.doc_freq(term) as f64;
        (1.0 + (n - df + 0.5) / (df + 0.5)).ln()
    }

    fn score_doc(&self, doc: &Doc, terms: &BTreeSet<String>) -> f64 {
        let norm = if self.avg_len > 0.0 {
            1.0 - self.b + self.b * doc.len as f64 / self.avg_len
        } else {
            1.0
        };
        terms
            .iter()
            .filter_map(|t| doc.tf.get(t).map(|&tf| (t, tf as f64)))
            .map(|(t, tf)| self.idf(t) * tf * (self.k1 + 1.0) / (tf + self.k1 * norm))
            .sum()
    }

    /// BM25 score of one document. Each distinct query term counts once.
    pub fn score(&self, query: &str, doc_id: &str) -> Result<f64, RetrievalError> {
        let doc = self
            .docs
            .iter()
            .find(|d| d.id == doc_id)
            .ok_or_else(|| RetrievalError::UnknownDoc(doc_id.to_string()))?;
        Ok(self.score_doc(doc, &tokenize(query).into_iter().collect()))
    }

    /// Top `k` documents by score, ties by id.
    pub fn rank(&self, query: &str, k: usize) -> Vec<(String, f64)> {
        self.rank_filtered(query, k, |_| true)
    }

    pub fn rank_filtered(&self, query: &str, k: usize, keep: impl Fn(&str) -> bool) -> Vec<(String, f64)> {
        let terms: BTreeSet<String> = tokenize(query).into_iter().collect();
        let mut scored: Vec<(String, f64)> = self
            .docs
            .iter()
            .filter(|d| keep(&d.id))
            .map(|d| (d.id.clone(), self.score_doc(d, &terms)))
            .collect();
        scored.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        scored.truncate(k);
        scored
    }
}

/// Query string for a spec: biographies, quest statements, participant names.
pub fn spec_query(spec: &DialogueSpec) -> String {
    let mut parts: Vec<&str> = Vec::new();
    for bio in &spec.bios {
        parts.push(&bio.entity);
        parts.extend(bio.statements.iter().map(|s| s.text.as_str()));
    }
    parts.extend(spec.quest_statements().into_iter().map(|s| s.text.as_str()));
    parts.extend(spec.participants.iter().map(|p| p.name.as_str()));
    parts.join("\n")
}

pub fn retrieve_exemplars(index: &Bm25Index, spec: &DialogueSpec, k: usize) -> Vec<(String, f64)> {
    index.rank(&spec_query(spec), k)
}

/// Indexed text of a gold dialogue: its longest trail as utterance lines.
pub fn dialogue_document(dialogue: &Dialogue) -> String {
    let trail = longest_trail(&dialogue.tree, DEFAULT_SEARCH_BUDGET).map(|h| h.ids).unwrap_or_default();
    trail
        .iter()
        .filter_map(|id| dialogue.tree.node(id))
        .map(|n| n.line())
        .collect::<Vec<_>>()
        .join("\n")
}

pub fn index_dialogues<'a>(dialogues: impl IntoIterator<Item = &'a Dialogue>) -> Result<Bm25Index, RetrievalError> {
    Bm25Index::with_defaults(dialogues.into_iter().map(|d| (d.id.clone(), dialogue_document(d))))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> Bm25Index {
        Bm25Index::with_defaults([
            ("d1", "the raptidon attacked the farm"),
            ("d2", "the boy went to the hills"),
            ("d3", "Raptidon! Raptidon hunts in the hills"),
        ])
        .unwrap()
    }

    #[test]
    fn tokenizer() {
        assert_eq!(tokenize("Raptidon's  attack,now!"), ["raptidon", "s", "attack", "now"]);
        assert!(tokenize(" ,. ").is_empty());
    }

    #[test]
    fn single_doc_vocabulary() {
        let idx = Bm25Index::with_defaults([("a", "Raptidon attack")]).unwrap();
        assert_eq!(idx.len(), 1);
        assert_eq!(idx.vocabulary().collect::<Vec<_>>(), ["attack", "raptidon"]);
    }

    #[test]
    fn empty_index() {
        let idx = Bm25Index::with_defaults(Vec::<(String, String)>::new()).unwrap();
        assert!(idx.is_empty());
        assert!(idx.rank("anything", 5).is_empty());
    }

    #[test]
    fn df_by_hand() {
        let idx = toy();
        assert_eq!(idx.doc_freq("the"), 3);
        assert_eq!(idx.doc_freq("raptidon"), 2);
        assert_eq!(idx.doc_freq("hills"), 2);
        assert_eq!(idx.doc_freq("farm"), 1);
        assert_eq!(idx.doc_freq("zebra"), 0);
        // lengths 5, 6, 6
        assert!((idx.avg_len() - 17.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn formula_by_hand() {
        let idx = Bm25Index::with_defaults([("only", "raptidon raptidon attack")]).unwrap();
        // N=1, df=1: idf = ln(1 + 0.5/1.5); len = avg so norm = 1
        let idf = (1.0f64 + 0.5 / 1.5).ln();
        let rap = idf * 2.0 * 2.2 / (2.0 + 1.2);
        let att = idf * 1.0 * 2.2 / (1.0 + 1.2);
        let got = idx.score("raptidon raptidon attack", "only").unwrap();
        assert!((got - (rap + att)).abs() < 1e-12);
    }

    #[test]
    fn absent_terms_score_zero() {
        assert_eq!(toy().score("zebra unicorn", "d1").unwrap(), 0.0);
        assert!(matches!(toy().score("x", "nope"), Err(RetrievalError::UnknownDoc(_))));
    }

    #[test]
    fn duplicates_score_identically() {
        let idx = Bm25Index::with_defaults([("a", "raptidon farm"), ("b", "raptidon farm"), ("c", "hills")]).unwrap();
        assert_eq!(idx.score("raptidon", "a").unwrap(), idx.score("raptidon", "b").unwrap());
        let ranked = idx.rank("raptidon", 3);
        assert_eq!(ranked[0].0, "a");
        assert_eq!(ranked[1].0, "b");
    }

    #[test]
    fn rejects_bad_input() {
        assert!(matches!(
            Bm25Index::with_defaults([("a", "x"), ("a", "y")]),
            Err(RetrievalError::DuplicateId(_))
        ));
        assert!(Bm25Index::build([("a", "x")], -1.0, 0.5).is_err());
        assert!(Bm25Index::build([("a", "x")], 1.0, 1.5).is_err());
    }

    #[test]
    fn k_clamps() {
        let idx = toy();
        assert!(idx.rank("raptidon", 0).is_empty());
        assert_eq!(idx.rank("raptidon", 10).len(), 3);
    }

    #[test]
    fn spec_query_mentions_entity() {
        let spec = crate::model::fixtures::spec();
        let idx = Bm25Index::with_defaults([
            ("d1", "a farmer sold grain at market"),
            ("d2", "Raptidon! Raptidon hunts"),
            ("d3", "bread was baked at dawn"),
        ])
        .unwrap();
        let ranked = retrieve_exemplars(&idx, &spec, 3);
        assert!(spec_query(&spec).contains("Raptidon"));
        assert_eq!(ranked[0].0, "d2");
        let mut brute: Vec<(String, f64)> = ["d1", "d2", "d3"]
            .iter()
            .map(|id| (id.to_string(), idx.score(&spec_query(&spec), id).unwrap()))
            .collect();
        brute.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
        assert_eq!(ranked, brute);
    }
}
