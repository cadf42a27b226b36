use super::{ngram_counts, EvalPair};

#[derive(Debug, Default, Clone, Copy)]
struct Stats {
    matches: [usize; 4],
    totals: [usize; 4],
    cand_len: usize,
    ref_len: usize,
}

fn pair_stats(p: &EvalPair) -> Stats {
    let mut s = Stats {
        cand_len: p.candidate.len(),
        ..Stats::default()
    };
    // Closest reference length; ties go to the shorter one.
    s.ref_len = p
        .references
        .iter()
        .map(|r| r.len())
        .min_by_key(|&len| (len.abs_diff(s.cand_len), len))
        .unwrap_or(0);
    for n in 1..=4 {
        let cand = ngram_counts(&p.candidate, n);
        let refs: Vec<_> = p.references.iter().map(|r| ngram_counts(r, n)).collect();
        for (g, &c) in &cand {
            let max_ref = refs.iter().map(|r| r.get(g).copied().unwrap_or(0)).max().unwrap_or(0);
            s.matches[n - 1] += c.min(max_ref);
        }
        s.totals[n - 1] = p.candidate.len().saturating_sub(n - 1);
    }
    s
}

fn score(s: &Stats, smoothing: bool) -> f64 {
    if s.cand_len == 0 {
        return 0.0;
    }
    let mut log_sum = 0.0;
    for n in 0..4 {
        let (mut num, mut den) = (s.matches[n] as f64, s.totals[n] as f64);
        if smoothing && n > 0 {
            num += 1.0;
            den += 1.0;
        }
        if num == 0.0 || den == 0.0 {
            return 0.0;
        }
        log_sum += (num / den).ln();
    }
    let bp = if s.cand_len < s.ref_len {
        (1.0 - s.ref_len as f64 / s.cand_len as f64).exp()
    } else {
        1.0
    };
    bp * (log_sum / 4.0).exp()
}

/// Corpus BLEU-4 with per-reference clipping and the closest-length
/// brevity penalty.
pub fn bleu4(corpus: &[EvalPair], smoothing: bool) -> f64 {
    let mut total = Stats::default();
    for p in corpus {
        let s = pair_stats(p);
        for n in 0..4 {
            total.matches[n] += s.matches[n];
            total.totals[n] += s.totals[n];
        }
        total.cand_len += s.cand_len;
        total.ref_len += s.ref_len;
    }
    score(&total, smoothing)
}

/// BLEU-4 of a single pair, for per-pair breakdowns.
pub fn sentence_bleu4(pair: &EvalPair, smoothing: bool) -> f64 {
    score(&pair_stats(pair), smoothing)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pair(c: &str, r: &[&str]) -> EvalPair {
        EvalPair::from_text("x", c, r)
    }

    #[test]
    fn worked_example() {
        let b = bleu4(&[pair("a b c d e", &["a b c d"])], false);
        assert!((b - 0.2f64.powf(0.25)).abs() < 1e-12);
        assert!((b - 0.6687).abs() < 1e-4);
    }

    #[test]
    fn identity_and_no_overlap() {
        assert_eq!(
            bleu4(
                &[pair("the ego vehicle is slowing", &["the ego vehicle is slowing"])],
                false
            ),
            1.0
        );
        assert_eq!(bleu4(&[pair("a b c d", &["a b c e"])], false), 0.0);
        assert!(bleu4(&[pair("a b c d", &["a b c e"])], true) > 0.0);
    }

    #[test]
    fn brevity_penalty_uses_closest_reference() {
        let p = pair("a b c d", &["a b c d e f g h", "a b c d x"]);
        let s = pair_stats(&p);
        assert_eq!(s.ref_len, 5);
        assert!((sentence_bleu4(&p, false) - (1.0f64 - 5.0 / 4.0).exp()).abs() < 1e-12);
    }

    #[test]
    fn clipping_caps_repeated_words() {
        let s = pair_stats(&pair("the the the the", &["the cat"]));
        assert_eq!(s.matches[0], 1);
        assert_eq!(s.totals[0], 4);
    }

    #[test]
    fn empty_candidate_scores_zero() {
        assert_eq!(bleu4(&[pair("", &["a b c d"])], true), 0.0);
    }
}
