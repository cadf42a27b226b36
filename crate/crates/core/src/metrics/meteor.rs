use std::collections::HashMap;

use super::EvalPair;

const SUFFIXES: [&str; 4] = ["ing", "es", "ed", "s"];
/// Search nodes explored per alignment before settling for the best found.
const SEARCH_BUDGET: usize = 200_000;

/// Strips one suffix from a fixed list, keeping at least two characters.
pub fn stem(word: &str) -> &str {
    for s in SUFFIXES {
        if let Some(base) = word.strip_suffix(s) {
            if base.chars().count() >= 2 {
                return base;
            }
        }
    }
    word
}

struct Search {
    cand: Vec<usize>,
    ref_by_key: Vec<Vec<usize>>,
    cand_left: Vec<usize>,
    ref_free: Vec<usize>,
    used: Vec<bool>,
    target: usize,
    best: usize,
    nodes: usize,
}

impl Search {
    fn reachable(&self) -> usize {
        self.cand_left.iter().zip(&self.ref_free).map(|(&a, &b)| a.min(b)).sum()
    }

    // `prev` is the reference position matched at candidate position i - 1.
    fn dfs(&mut self, i: usize, matched: usize, chunks: usize, prev: Option<usize>) {
        self.nodes += 1;
        if chunks >= self.best || self.nodes > SEARCH_BUDGET {
            return;
        }
        if matched == self.target {
            self.best = chunks;
            return;
        }
        if i == self.cand.len() {
            return;
        }
        let key = self.cand[i];
        self.cand_left[key] -= 1;
        // Prefer continuing the current chunk, then other positions in order.
        let mut options: Vec<usize> = self.ref_by_key[key]
            .iter()
            .copied()
            .filter(|&j| !self.used[j])
            .collect();
        if let Some(p) = prev {
            if let Some(pos) = options.iter().position(|&j| j == p + 1) {
                options[..=pos].rotate_right(1);
            }
        }
        for j in options {
            let continues = prev.is_some_and(|p| p + 1 == j);
            self.used[j] = true;
            self.ref_free[key] -= 1;
            self.dfs(i + 1, matched + 1, chunks + usize::from(!continues), Some(j));
            self.ref_free[key] += 1;
            self.used[j] = false;
        }
        if matched + self.reachable() >= self.target {
            self.dfs(i + 1, matched, chunks, None);
        }
        self.cand_left[key] += 1;
    }
}

fn greedy_chunks(cand: &[usize], refs: &[usize]) -> usize {
    let mut used = vec![false; refs.len()];
    let mut prev: Option<usize> = None;
    let mut chunks = 0;
    for &k in cand {
        let next = prev
            .map(|p| p + 1)
            .filter(|&j| j < refs.len() && !used[j] && refs[j] == k);
        let pick = next.or_else(|| (0..refs.len()).find(|&j| !used[j] && refs[j] == k));
        match pick {
            Some(j) => {
                if next.is_none() {
                    chunks += 1;
                }
                used[j] = true;
                prev = Some(j);
            }
            None => prev = None,
        }
    }
    chunks
}

/// Maximum number of unigram matches and the fewest chunks any maximal
/// alignment needs.
fn align(cand: &[String], reference: &[String], stemmed: bool) -> (usize, usize) {
    let mut keys: HashMap<&str, usize> = HashMap::new();
    let mut ids = Vec::with_capacity(cand.len() + reference.len());
    for w in cand.iter().chain(reference) {
        let w = if stemmed { stem(w) } else { w.as_str() };
        let n = keys.len();
        ids.push(*keys.entry(w).or_insert(n));
    }
    let refs = ids.split_off(cand.len());
    let cand = ids;
    let n_keys = keys.len();
    let mut cand_left = vec![0; n_keys];
    let mut ref_free = vec![0; n_keys];
    let mut ref_by_key = vec![Vec::new(); n_keys];
    cand.iter().for_each(|&k| cand_left[k] += 1);
    for (j, &k) in refs.iter().enumerate() {
        ref_free[k] += 1;
        ref_by_key[k].push(j);
    }
    let target: usize = cand_left.iter().zip(&ref_free).map(|(&a, &b)| a.min(b)).sum();
    if target == 0 {
        return (0, 0);
    }
    let mut s = Search {
        best: greedy_chunks(&cand, &refs),
        used: vec![false; refs.len()],
        cand,
        ref_by_key,
        cand_left,
        ref_free,
        target,
        nodes: 0,
    };
    // The greedy alignment is always maximal, so it bounds the search.
    s.dfs(0, 0, 0, None);
    (target, s.best)
}

fn score(cand: &[String], reference: &[String], stemmed: bool) -> f64 {
    let (matches, chunks) = align(cand, reference, stemmed);
    if matches == 0 {
        return 0.0;
    }
    let p = matches as f64 / cand.len() as f64;
    let r = matches as f64 / reference.len() as f64;
    let f_mean = 10.0 * p * r / (r + 9.0 * p);
    let frag = chunks as f64 / matches as f64;
    f_mean * (1.0 - 0.5 * frag.powi(3))
}

/// Best score over the pair's references.
pub fn meteor_pair(pair: &EvalPair, stemmed: bool) -> f64 {
    pair.references
        .iter()
        .map(|r| score(&pair.candidate, r, stemmed))
        .fold(0.0, f64::max)
}

pub fn meteor(corpus: &[EvalPair], stemmed: bool) -> f64 {
    if corpus.is_empty() {
        return 0.0;
    }
    corpus.iter().map(|p| meteor_pair(p, stemmed)).sum::<f64>() / corpus.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    fn words(s: &str) -> Vec<String> {
        s.split_whitespace().map(String::from).collect()
    }

    #[test]
    fn worked_example() {
        let p = EvalPair::from_text("x", "turn left now", &["turn left now"]);
        let expected = 1.0 - 0.5 / 27.0;
        assert!((meteor_pair(&p, false) - expected).abs() < 1e-15);
        assert!((expected - 0.9815).abs() < 1e-4);
    }

    #[test]
    fn search_beats_greedy_on_repeated_words() {
        // Greedy pairs the first "a" with reference position 0 and splits the
        // alignment; the best alignment is one chunk.
        let (m, c) = align(&words("a b"), &words("a x a b"), false);
        assert_eq!((m, c), (2, 1));
        assert_eq!(greedy_chunks(&[0, 1], &[0, 2, 0, 1]), 2);
    }

    #[test]
    fn zero_matches_and_long_identity() {
        assert_eq!(meteor(&[EvalPair::from_text("x", "a b", &["c d"])], false), 0.0);
        let long: Vec<String> = (0..200).map(|i| format!("w{i}")).collect();
        let p = EvalPair {
            id: "x".into(),
            candidate: long.clone(),
            references: vec![long],
        };
        assert!(meteor_pair(&p, false) > 0.99999);
    }

    #[test]
    fn stemming_is_optional() {
        assert_eq!(stem("slowing"), "slow");
        assert_eq!(stem("cars"), "car");
        assert_eq!(stem("is"), "is");
        let p = EvalPair::from_text("x", "cars slowing", &["car slow"]);
        assert_eq!(meteor_pair(&p, false), 0.0);
        assert!(meteor_pair(&p, true) > 0.9);
    }
}
