use super::EvalPair;

pub const ROUGE_BETA: f64 = 1.2;

pub fn lcs_len(a: &[String], b: &[String]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y { prev[j] + 1 } else { cur[j].max(prev[j + 1]) };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

fn f_score(cand: &[String], reference: &[String]) -> f64 {
    let l = lcs_len(cand, reference);
    if l == 0 {
        return 0.0;
    }
    let p = l as f64 / cand.len() as f64;
    let r = l as f64 / reference.len() as f64;
    let b2 = ROUGE_BETA * ROUGE_BETA;
    (1.0 + b2) * p * r / (r + b2 * p)
}

/// Best LCS F-score over the pair's references; 0 for an empty candidate.
pub fn rouge_l_pair(pair: &EvalPair) -> f64 {
    pair.references
        .iter()
        .map(|r| f_score(&pair.candidate, r))
        .fold(0.0, f64::max)
}

pub fn rouge_l(corpus: &[EvalPair]) -> f64 {
    if corpus.is_empty() {
        return 0.0;
    }
    corpus.iter().map(rouge_l_pair).sum::<f64>() / corpus.len() as f64
}
