//! Authoring engine for knowledge-constrained NPC dialogue trees.
//!
//! The crate is organised along the pipeline:
//!
//! * [`model`]: quest/biography ontologies, dialogue graphs and corpora.
//! * [`linearize`]: maximal-coverage histories and generation tasks.
//! * [`retrieval`]: Okapi BM25 exemplar retrieval.
//! * [`prompting`]: bit-exact prompt rendering under token budgets.
//! * [`writer`]: language-model backends, completion parsing, spine growth.
//! * [`evaluation`]: BLEU, bootstrap intervals, judgment bookkeeping.
//! * [`synthetic`]: seeded synthetic corpora for tests and demos.

pub mod evaluation;
pub mod json;
pub mod linearize;
pub mod model;
pub mod prompting;
pub mod retrieval;
pub mod seed;
pub mod synthetic;
pub mod writer;
