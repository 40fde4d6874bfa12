//! Pair generation, verbalization and simulation scoring for comparing the
//! behavior of two tabular classifiers.

pub mod data;
pub mod evaluation;
pub mod format;
pub mod llm;
pub mod models;
pub mod pairgen;
pub mod prompts;
pub mod rng;
pub mod sampling;

#[cfg(test)]
pub(crate) mod testutil;
