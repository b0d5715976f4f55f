//! Section template rendering.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{PromptError, PromptMode};
use crate::linearize::GenerationTask;
use crate::model::{resolve_fact, BiographyPassage, DialogueSpec, FactRef, Statement, UtteranceNode};

pub const FACTS_HEADER: &str = "FACTS:";
pub const CONTEXT_HEADER: &str = "DIALOG CONTEXT:";
pub const KNOW_HEADER: &str = "KNOW BY THE END OF THE DIALOG:";
pub const PARTICIPANTS_HEADER: &str = "DIALOG PARTICIPANTS:";
pub const DIALOG_HEADER: &str = "DIALOG:";
pub const INDENT: &str = "   ";
pub const FACT_MARKER: &str = " fact: ";
pub const UTTERANCE_PREFIX: &str = "utterance: ";

/// Leading passages removed to fit a budget: biographies first, then quest
/// statement lists, both counted from the top of the rendered block.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Trim {
    pub bios: usize,
    pub quest: usize,
}

/// Biographies in FACTS order: non-participants as listed, then participants
/// in participant order.
pub fn bio_order(spec: &DialogueSpec) -> Vec<&BiographyPassage> {
    let mut out: Vec<&BiographyPassage> = spec.bios.iter().filter(|b| !spec.is_participant(&b.entity)).collect();
    out.extend(spec.participants.iter().filter_map(|p| spec.bio(&p.name)));
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum QuestPart {
    Context { indented: bool },
    Know,
}

/// Non-empty quest statement lists in rendering order.
pub(crate) fn quest_order(spec: &DialogueSpec) -> Vec<(QuestPart, &[Statement])> {
    let mut out = Vec::new();
    for o in &spec.in_objectives {
        out.push((QuestPart::Context { indented: false }, o.game_log.as_slice()));
        out.push((QuestPart::Context { indented: true }, o.walkthrough.as_slice()));
    }
    for o in &spec.out_objectives {
        out.push((QuestPart::Know, o.game_log.as_slice()));
    }
    out.retain(|(_, s)| !s.is_empty());
    out
}

pub fn fact_line(spec: &DialogueSpec, fact: &FactRef) -> Result<String, PromptError> {
    let stmt = resolve_fact(spec, fact).map_err(|_| PromptError::UnresolvableFact(fact.clone()))?;
    let label = spec.fact_label(fact).unwrap_or(&fact.source);
    Ok(format!("{label}{FACT_MARKER}{}", stmt.text))
}

/// Knowledge-selection history: per utterance, its fact lines then the
/// `utterance:` line; blocks separated by blank lines. Ends with a newline.
pub fn build_ks_history(spec: &DialogueSpec, history: &[&UtteranceNode]) -> Result<String, PromptError> {
    let mut blocks = Vec::with_capacity(history.len());
    for node in history {
        let mut block = String::new();
        for f in &node.support_facts {
            block.push_str(&fact_line(spec, f)?);
            block.push('\n');
        }
        block.push_str(UTTERANCE_PREFIX);
        block.push_str(&node.line());
        block.push('\n');
        blocks.push(block);
    }
    Ok(blocks.join("\n"))
}

fn section(out: &mut Vec<String>, header: &str, body: String) {
    if !body.is_empty() {
        out.push(format!("{header}\n{body}"));
    }
}

pub(crate) fn render_sections(
    spec: &DialogueSpec,
    history: &[&UtteranceNode],
    mode: PromptMode,
    trim: Trim,
) -> Result<String, PromptError> {
    let mut sections = Vec::new();
    if mode.shows_bios() {
        let mut body = String::new();
        for bio in bio_order(spec).into_iter().skip(trim.bios) {
            body.push_str(&bio.entity);
            body.push('\n');
            for s in &bio.statements {
                body.push_str(INDENT);
                body.push_str(&s.text);
                body.push('\n');
            }
        }
        section(&mut sections, FACTS_HEADER, body);
    }
    if mode.shows_quest() {
        let (mut context, mut know) = (String::new(), String::new());
        for (part, stmts) in quest_order(spec).into_iter().skip(trim.quest) {
            for s in stmts {
                match part {
                    QuestPart::Context { indented } => {
                        if indented {
                            context.push_str(INDENT);
                        }
                        context.push_str(&s.text);
                        context.push('\n');
                    }
                    QuestPart::Know => {
                        know.push_str(&s.text);
                        know.push('\n');
                    }
                }
            }
        }
        section(&mut sections, CONTEXT_HEADER, context);
        section(&mut sections, KNOW_HEADER, know);
    }
    let names = spec.participant_names().join(", ");
    sections.push(format!("{PARTICIPANTS_HEADER}\n{names}\n"));

    let dialog = if mode.is_ks() {
        build_ks_history(spec, history)?
    } else {
        history.iter().map(|n| n.line() + "\n").collect()
    };
    sections.push(format!("{DIALOG_HEADER}\n{dialog}"));
    Ok(sections.join("\n"))
}

/// One dialogue in the prompt template, ending after the last history line.
pub fn render_dialogue_block(
    spec: &DialogueSpec,
    history: &[&UtteranceNode],
    mode: PromptMode,
) -> Result<String, PromptError> {
    render_sections(spec, history, mode, Trim::default())
}

/// Gold facts for the target, in stored order.
pub fn select_oracle_facts(task: &GenerationTask) -> Result<Vec<FactRef>, PromptError> {
    task.gold_facts.clone().ok_or(PromptError::NoGoldFacts)
}

/// One gold fact chosen uniformly with `seed`.
pub fn sample_one_fact(task: &GenerationTask, seed: u64) -> Result<FactRef, PromptError> {
    let gold = task.gold_facts.as_deref().unwrap_or_default();
    if gold.is_empty() {
        return Err(PromptError::NoGoldFacts);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(gold[rng.gen_range(0..gold.len())].clone())
}

/// Facts appended after the history for the target utterance.
fn cue_facts(task: &GenerationTask, mode: PromptMode, seed: u64) -> Result<Vec<FactRef>, PromptError> {
    match mode {
        PromptMode::KsOracle => select_oracle_facts(task),
        PromptMode::KsOneFact => match task.gold_facts.as_deref() {
            None => Err(PromptError::NoGoldFacts),
            Some([]) => Ok(Vec::new()),
            Some(_) => Ok(vec![sample_one_fact(task, seed)?]),
        },
        _ => Ok(Vec::new()),
    }
}

pub(crate) fn render_task_trimmed(
    task: &GenerationTask,
    mode: PromptMode,
    seed: u64,
    trim: Trim,
) -> Result<String, PromptError> {
    let history = task.history_nodes();
    let mut text = render_sections(&task.spec, &history, mode, trim)?;
    if mode.is_ks() {
        if !history.is_empty() {
            text.push('\n');
        }
        for f in cue_facts(task, mode, seed)? {
            text.push_str(&fact_line(&task.spec, &f)?);
            text.push('\n');
        }
    }
    Ok(text)
}

/// The block for the item being generated. In knowledge-selection modes it
/// ends with a blank line (and any cue facts) so the continuation opens a new
/// block.
pub fn render_task_block(task: &GenerationTask, mode: PromptMode, seed: u64) -> Result<String, PromptError> {
    render_task_trimmed(task, mode, seed, Trim::default())
}
