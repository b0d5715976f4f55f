//! BLEU-4 with multi-reference clipping.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

pub const MAX_ORDER: usize = 4;
pub const SMOOTHING_EPSILON: f64 = 1e-9;

/// Lowercased tokens: alphanumeric runs and single punctuation characters.
pub fn bleu_tokens(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut word = String::new();
    for c in text.chars() {
        if c.is_alphanumeric() {
            word.extend(c.to_lowercase());
            continue;
        }
        if !word.is_empty() {
            out.push(std::mem::take(&mut word));
        }
        if !c.is_whitespace() {
            out.push(c.to_string());
        }
    }
    if !word.is_empty() {
        out.push(word);
    }
    out
}

fn ngrams(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *counts.entry(w).or_insert(0) += 1;
        }
    }
    counts
}

/// Sufficient statistics of one candidate against its references.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BleuStats {
    pub matches: [usize; MAX_ORDER],
    pub totals: [usize; MAX_ORDER],
    pub candidate_len: usize,
    /// Length of the reference closest in length (shorter on ties).
    pub reference_len: usize,
}

impl BleuStats {
    pub fn compute<S: AsRef<str>>(candidate: &str, references: &[S]) -> Self {
        let cand = bleu_tokens(candidate);
        let refs: Vec<Vec<String>> = references.iter().map(|r| bleu_tokens(r.as_ref())).collect();
        let mut stats = BleuStats {
            candidate_len: cand.len(),
            reference_len: refs
                .iter()
                .map(Vec::len)
                .min_by_key(|&len| (len.abs_diff(cand.len()), len))
                .unwrap_or(0),
            ..Self::default()
        };
        for n in 1..=MAX_ORDER {
            let counts = ngrams(&cand, n);
            let mut max_ref: HashMap<&[String], usize> = HashMap::new();
            for r in &refs {
                for (g, c) in ngrams(r, n) {
                    let e = max_ref.entry(g).or_insert(0);
                    *e = (*e).max(c);
                }
            }
            stats.totals[n - 1] = cand.len().saturating_sub(n - 1);
            stats.matches[n - 1] = counts.iter().map(|(g, &c)| c.min(max_ref.get(g).copied().unwrap_or(0))).sum();
        }
        stats
    }

    pub fn add(&mut self, other: &BleuStats) {
        for n in 0..MAX_ORDER {
            self.matches[n] += other.matches[n];
            self.totals[n] += other.totals[n];
        }
        self.candidate_len += other.candidate_len;
        self.reference_len += other.reference_len;
    }

    /// Geometric mean of the four precisions times the brevity penalty. With
    /// `smooth`, zero precisions count as [`SMOOTHING_EPSILON`].
    pub fn score(&self, smooth: bool) -> f64 {
        if self.candidate_len == 0 {
            return 0.0;
        }
        let mut log_sum = 0.0;
        for n in 0..MAX_ORDER {
            let p = if self.totals[n] == 0 {
                0.0
            } else {
                self.matches[n] as f64 / self.totals[n] as f64
            };
            let p = match (p == 0.0, smooth) {
                (true, true) => SMOOTHING_EPSILON,
                (true, false) => return 0.0,
                (false, _) => p,
            };
            log_sum += p.ln();
        }
        let (c, r) = (self.candidate_len as f64, self.reference_len as f64);
        let bp = if c > r { 1.0 } else { (1.0 - r / c).exp() };
        (bp * (log_sum / MAX_ORDER as f64).exp()).clamp(0.0, 1.0)
    }
}

/// Sentence BLEU-4. An empty candidate, or an empty reference list, scores 0.
pub fn bleu4<S: AsRef<str>>(candidate: &str, references: &[S], smooth: bool) -> f64 {
    if references.is_empty() {
        return 0.0;
    }
    BleuStats::compute(candidate, references).score(smooth)
}

/// Corpus BLEU-4 from pooled statistics, unsmoothed.
pub fn corpus_bleu4<'a, I, S>(items: I) -> f64
where
    I: IntoIterator<Item = (&'a str, &'a [S])>,
    S: AsRef<str> + 'a,
{
    let mut total = BleuStats::default();
    for (cand, refs) in items {
        if !refs.is_empty() {
            total.add(&BleuStats::compute(cand, refs));
        }
    }
    total.score(false)
}
