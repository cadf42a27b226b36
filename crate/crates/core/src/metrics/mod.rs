//! Caption metrics: corpus BLEU-4, ROUGE-L, simplified METEOR, and CIDEr.
//!
//! BLEU aggregates n-gram counts over the corpus before the geometric mean.
//! The other three average per-pair scores.

mod bleu;
mod cider;
mod eval;
mod meteor;
mod rouge;

use std::collections::BTreeMap;

pub use bleu::{bleu4, sentence_bleu4};
pub use cider::{cider, cider_pairs};
pub use eval::{evaluate, evaluate_files, MetricReport, PairScore, TextRecord, REPORT_SCHEMA_VERSION};
pub use meteor::{meteor, meteor_pair, stem};
pub use rouge::{lcs_len, rouge_l, rouge_l_pair, ROUGE_BETA};

use crate::lm::split_words;

/// A candidate with its reference texts, already tokenized.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalPair {
    pub id: String,
    pub candidate: Vec<String>,
    pub references: Vec<Vec<String>>,
}

impl EvalPair {
    /// Tokenizes with the language model's word splitter.
    pub fn from_text(id: impl Into<String>, candidate: &str, references: &[&str]) -> Self {
        Self {
            id: id.into(),
            candidate: split_words(candidate),
            references: references.iter().map(|r| split_words(r)).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricOptions {
    /// Add one to numerator and denominator of the 2- to 4-gram precisions.
    pub bleu_smoothing: bool,
    /// Let METEOR also match words that agree after suffix stripping.
    pub meteor_stem: bool,
}

pub(crate) type Counts<'a> = BTreeMap<&'a [String], usize>;

pub(crate) fn ngram_counts(tokens: &[String], n: usize) -> Counts<'_> {
    let mut counts = Counts::new();
    if n > 0 && tokens.len() >= n {
        for g in tokens.windows(n) {
            *counts.entry(g).or_insert(0) += 1;
        }
    }
    counts
}
