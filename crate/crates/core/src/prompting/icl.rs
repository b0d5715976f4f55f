//! Few-shot prompt assembly under a token budget.

use std::collections::BTreeMap;

use super::render::{bio_order, quest_order, render_sections, render_task_trimmed, Trim};
use super::tokenize::{tokenizer, Tokenizer};
use super::{Prompt, PromptConfig, PromptError, PromptMode};
use crate::linearize::{longest_trail, GenerationTask, DEFAULT_SEARCH_BUDGET};
use crate::model::Dialogue;
use crate::retrieval::{dialogue_document, spec_query, Bm25Index, RetrievalError};

pub const EXEMPLAR_SEPARATOR: &str = "\n---\n\n";

/// Training dialogues available as exemplars, indexed for retrieval.
#[derive(Debug, Clone)]
pub struct ExemplarPool {
    dialogues: Vec<Dialogue>,
    trails: Vec<Vec<String>>,
    by_id: BTreeMap<String, usize>,
    index: Bm25Index,
}

impl ExemplarPool {
    pub fn new(dialogues: Vec<Dialogue>) -> Result<Self, RetrievalError> {
        let index = Bm25Index::with_defaults(dialogues.iter().map(|d| (d.id.clone(), dialogue_document(d))))?;
        let trails = dialogues
            .iter()
            .map(|d| longest_trail(&d.tree, DEFAULT_SEARCH_BUDGET).map(|h| h.ids).unwrap_or_default())
            .collect();
        let by_id = dialogues.iter().enumerate().map(|(i, d)| (d.id.clone(), i)).collect();
        Ok(Self {
            dialogues,
            trails,
            by_id,
            index,
        })
    }

    pub fn len(&self) -> usize {
        self.dialogues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dialogues.is_empty()
    }

    pub fn index(&self) -> &Bm25Index {
        &self.index
    }

    pub fn dialogue(&self, id: &str) -> Option<&Dialogue> {
        self.by_id.get(id).map(|&i| &self.dialogues[i])
    }

    /// Candidate exemplars for `task`, best first. Dialogues of the task's own
    /// quest are never offered.
    pub fn ranked_for(&self, task: &GenerationTask) -> Vec<(String, f64)> {
        self.index.rank_filtered(&spec_query(&task.spec), usize::MAX, |id| {
            id != task.dialogue_id && self.dialogue(id).is_some_and(|d| d.spec.quest_name != task.spec.quest_name)
        })
    }

    /// A gold dialogue rendered along its longest trail.
    pub fn exemplar_block(&self, id: &str, mode: PromptMode) -> Result<Option<String>, PromptError> {
        let Some(&i) = self.by_id.get(id) else {
            return Ok(None);
        };
        let d = &self.dialogues[i];
        let history: Vec<_> = self.trails[i].iter().filter_map(|n| d.tree.node(n)).collect();
        render_sections(&d.spec, &history, mode, Trim::default()).map(Some)
    }
}

fn trims_for(task: &GenerationTask, mode: PromptMode) -> Vec<Trim> {
    let bios = if mode.shows_bios() { bio_order(&task.spec).len() } else { 0 };
    let quest = if mode.shows_quest() { quest_order(&task.spec).len() } else { 0 };
    let mut out: Vec<Trim> = (0..=bios).map(|b| Trim { bios: b, quest: 0 }).collect();
    out.extend((1..=quest).map(|q| Trim { bios, quest: q }));
    out
}

/// Largest whole-line suffix of `block` that fits in `room` tokens and
/// still holds a non-blank line.
fn left_truncate(block: &str, room: usize, tok: &dyn Tokenizer) -> Option<String> {
    let lines: Vec<&str> = block.split_inclusive('\n').collect();
    (1..lines.len())
        .filter(|&s| !lines[s].trim().is_empty())
        .map(|s| lines[s..].concat())
        .find(|suffix| tok.count(suffix) <= room)
}

/// Renders the task block and fills the remaining budget with retrieved
/// exemplars.
///
/// The task block is trimmed to fit by dropping whole leading biographies,
/// then whole leading quest statement lists. Exemplars are taken by rank,
/// skipping any that do not fit, so no left-out exemplar could be added whole.
/// The best-ranked left-out exemplar is then left-truncated by whole lines
/// into the remaining room. Layout: partial exemplar, whole exemplars from
/// lowest to highest rank, task block.
pub fn build_icl_prompt(
    task: &GenerationTask,
    config: &PromptConfig,
    pool: Option<&ExemplarPool>,
) -> Result<Prompt, PromptError> {
    if config.token_budget == 0 {
        return Err(PromptError::ZeroBudget);
    }
    let tok = tokenizer(&config.tokenizer)?;
    let budget = config.token_budget;

    let mut task_block = None;
    let mut needed = 0;
    for trim in trims_for(task, config.mode) {
        let text = render_task_trimmed(task, config.mode, config.seed, trim)?;
        needed = tok.count(&text);
        if needed <= budget {
            task_block = Some((text, trim != Trim::default()));
            break;
        }
    }
    let (task_text, trimmed) = task_block.ok_or(PromptError::IrreducibleOverflow { needed, budget })?;

    let mut used = tok.count(&task_text);
    let sep_cost = tok.count(EXEMPLAR_SEPARATOR);
    let mut whole: Vec<(String, String)> = Vec::new();
    let mut first_left_out: Option<(String, String)> = None;

    if let (true, Some(pool)) = (config.allow_few_shot, pool) {
        for (id, _) in pool.ranked_for(task) {
            if used + sep_cost >= budget {
                break;
            }
            let Some(block) = pool.exemplar_block(&id, config.mode)? else {
                continue;
            };
            let cost = tok.count(&block) + sep_cost;
            if used + cost <= budget {
                used += cost;
                whole.push((id, block));
            } else if first_left_out.is_none() {
                first_left_out = Some((id, block));
            }
        }
    }

    let partial = first_left_out.and_then(|(id, block)| {
        let room = budget.checked_sub(used + sep_cost)?;
        left_truncate(&block, room, tok).map(|text| (id, text))
    });

    let mut parts: Vec<&str> = Vec::new();
    if let Some((_, text)) = &partial {
        parts.push(text);
    }
    parts.extend(whole.iter().rev().map(|(_, b)| b.as_str()));
    parts.push(&task_text);
    let text = parts.join(EXEMPLAR_SEPARATOR);
    let token_count = tok.count(&text);
    debug_assert!(token_count <= budget);

    Ok(Prompt {
        text,
        token_count,
        num_exemplars: whole.len(),
        truncated: trimmed || partial.is_some(),
        partial_leading_exemplar: partial.is_some(),
        exemplar_ids: whole.into_iter().map(|(id, _)| id).collect(),
        partial_exemplar_id: partial.map(|(id, _)| id),
    })
}
