use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{bleu4, cider_pairs, meteor_pair, rouge_l_pair, sentence_bleu4, EvalPair, MetricOptions};
use crate::error::{Error, Result};

pub const REPORT_SCHEMA_VERSION: u32 = 1;

/// One entry of a predictions or references file. Predictions use `text`;
/// references may give several `texts` instead.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TextRecord {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub texts: Option<Vec<String>>,
}

impl TextRecord {
    pub fn single(id: impl Into<String>, text: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            text: Some(text.into()),
            texts: None,
        }
    }

    fn all_texts(&self) -> Vec<&str> {
        self.text
            .iter()
            .map(String::as_str)
            .chain(self.texts.iter().flatten().map(String::as_str))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairScore {
    pub id: String,
    pub bleu4: f64,
    pub rouge_l: f64,
    pub meteor: f64,
    pub cider: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub schema_version: u32,
    pub options: MetricOptions,
    pub n_pairs: usize,
    pub bleu4: f64,
    pub rouge_l: f64,
    pub meteor: f64,
    pub cider: f64,
    /// Sorted by id.
    pub pairs: Vec<PairScore>,
}

impl MetricReport {
    /// BLEU-4, ROUGE-L and METEOR are shown ×100; CIDEr keeps its 0 to 10 scale.
    pub fn table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{:<10}{:>10}", "metric", "score");
        for (name, v) in [
            ("BLEU-4", self.bleu4 * 100.0),
            ("ROUGE-L", self.rouge_l * 100.0),
            ("METEOR", self.meteor * 100.0),
            ("CIDEr", self.cider),
        ] {
            let _ = writeln!(out, "{name:<10}{v:>10.2}");
        }
        let _ = writeln!(out, "{:<10}{:>10}", "pairs", self.n_pairs);
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

fn index<'a>(records: &'a [TextRecord], what: &str) -> Result<BTreeMap<&'a str, &'a TextRecord>> {
    let mut map = BTreeMap::new();
    let mut dups = BTreeSet::new();
    for r in records {
        if map.insert(r.id.as_str(), r).is_some() {
            dups.insert(r.id.as_str());
        }
    }
    if !dups.is_empty() {
        return Err(Error::data(format!(
            "duplicate ids in {what}: {}",
            dups.into_iter().collect::<Vec<_>>().join(", ")
        )));
    }
    Ok(map)
}

/// Aligns predictions to references by id and scores them.
pub fn evaluate(predictions: &[TextRecord], references: &[TextRecord], opts: MetricOptions) -> Result<MetricReport> {
    if predictions.is_empty() {
        return Err(Error::Empty("prediction file has no entries".into()));
    }
    let preds = index(predictions, "predictions")?;
    let refs = index(references, "references")?;
    let missing: Vec<&str> = preds.keys().copied().filter(|id| !refs.contains_key(id)).collect();
    if !missing.is_empty() {
        return Err(Error::data(format!(
            "prediction ids without a reference: {}",
            missing.join(", ")
        )));
    }
    let mut corpus = Vec::with_capacity(preds.len());
    for (id, p) in &preds {
        let Some(text) = &p.text else {
            return Err(Error::data(format!("prediction `{id}` has no `text`")));
        };
        let ref_texts = refs[id].all_texts();
        if ref_texts.is_empty() {
            return Err(Error::data(format!("reference `{id}` has no text")));
        }
        corpus.push(EvalPair::from_text(*id, text, &ref_texts));
    }
    score_corpus(&corpus, opts)
}

fn score_corpus(corpus: &[EvalPair], opts: MetricOptions) -> Result<MetricReport> {
    let cider = cider_pairs(corpus)?;
    let pairs: Vec<PairScore> = corpus
        .par_iter()
        .zip(&cider)
        .map(|(p, &c)| PairScore {
            id: p.id.clone(),
            bleu4: sentence_bleu4(p, opts.bleu_smoothing),
            rouge_l: rouge_l_pair(p),
            meteor: meteor_pair(p, opts.meteor_stem),
            cider: c,
        })
        .collect();
    let n = pairs.len() as f64;
    let mean = |f: fn(&PairScore) -> f64| pairs.iter().map(f).sum::<f64>() / n;
    Ok(MetricReport {
        schema_version: REPORT_SCHEMA_VERSION,
        options: opts,
        n_pairs: pairs.len(),
        bleu4: bleu4(corpus, opts.bleu_smoothing),
        rouge_l: mean(|p| p.rouge_l),
        meteor: mean(|p| p.meteor),
        cider: mean(|p| p.cider),
        pairs,
    })
}

pub fn read_records(path: &Path) -> Result<Vec<TextRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::data(format!("{}: {e}", path.display())))
}

pub fn evaluate_files(predictions: &Path, references: &Path, opts: MetricOptions) -> Result<MetricReport> {
    evaluate(&read_records(predictions)?, &read_records(references)?, opts)
}
