use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;

use super::{ngram_counts, EvalPair};
use crate::error::{Error, Result};

type Vector<'a> = BTreeMap<&'a [String], f64>;

struct Idf<'a> {
    df: [BTreeMap<&'a [String], usize>; 4],
    log_n: f64,
}

impl<'a> Idf<'a> {
    fn new(corpus: &'a [EvalPair]) -> Self {
        let mut df: [BTreeMap<&[String], usize>; 4] = Default::default();
        for p in corpus {
            for (n, table) in df.iter_mut().enumerate() {
                let grams: BTreeSet<&[String]> = p
                    .references
                    .iter()
                    .flat_map(|r| ngram_counts(r, n + 1).into_keys())
                    .collect();
                for g in grams {
                    *table.entry(g).or_insert(0) += 1;
                }
            }
        }
        Self {
            df,
            log_n: (corpus.len() as f64).ln(),
        }
    }

    fn vector(&self, tokens: &'a [String], n: usize) -> Vector<'a> {
        let counts = ngram_counts(tokens, n);
        let total: usize = counts.values().sum();
        counts
            .into_iter()
            .map(|(g, c)| {
                let df = self.df[n - 1].get(g).copied().unwrap_or(0).max(1);
                (g, c as f64 / total as f64 * (self.log_n - (df as f64).ln()))
            })
            .collect()
    }
}

fn cosine(a: &Vector, b: &Vector) -> f64 {
    let dot: f64 = a.iter().filter_map(|(g, x)| b.get(g).map(|y| x * y)).sum();
    let na = a.values().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.values().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

/// Per-pair CIDEr scores on the 0 to 10 scale. Document frequencies count the
/// pairs whose reference set contains an n-gram, so at least two pairs are
/// needed.
pub fn cider_pairs(corpus: &[EvalPair]) -> Result<Vec<f64>> {
    if corpus.len() < 2 {
        return Err(Error::data(format!(
            "CIDEr needs at least 2 pairs to estimate document frequencies, got {}",
            corpus.len()
        )));
    }
    let idf = Idf::new(corpus);
    Ok(corpus
        .par_iter()
        .map(|p| {
            let mut sum = 0.0;
            for n in 1..=4 {
                let c = idf.vector(&p.candidate, n);
                let per_ref: f64 = p.references.iter().map(|r| cosine(&c, &idf.vector(r, n))).sum();
                sum += per_ref / p.references.len() as f64;
            }
            10.0 * sum / 4.0
        })
        .collect())
}

pub fn cider(corpus: &[EvalPair]) -> Result<f64> {
    let scores = cider_pairs(corpus)?;
    Ok(scores.iter().sum::<f64>() / scores.len() as f64)
}
