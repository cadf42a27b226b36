//! Slow, direct re-implementations of the text metrics used as test oracles.
//! Inputs are pre-split token lists.

use mvfuse_core::metrics::EvalPair;

pub type Pair = (Vec<String>, Vec<Vec<String>>);

pub fn words(s: &str) -> Vec<String> {
    s.split_whitespace().map(String::from).collect()
}

pub fn pair(cand: &str, refs: &[&str]) -> Pair {
    (words(cand), refs.iter().map(|r| words(r)).collect())
}

pub fn to_eval(corpus: &[Pair]) -> Vec<EvalPair> {
    corpus
        .iter()
        .enumerate()
        .map(|(i, (c, r))| EvalPair {
            id: format!("{i:03}"),
            candidate: c.clone(),
            references: r.clone(),
        })
        .collect()
}

fn windows(t: &[String], n: usize) -> Vec<&[String]> {
    if t.len() < n {
        return Vec::new();
    }
    (0..=t.len() - n).map(|i| &t[i..i + n]).collect()
}

fn occurrences(t: &[String], g: &[String]) -> usize {
    windows(t, g.len()).into_iter().filter(|w| *w == g).count()
}

fn distinct(grams: Vec<&[String]>) -> Vec<&[String]> {
    let mut out: Vec<&[String]> = Vec::new();
    for g in grams {
        if !out.contains(&g) {
            out.push(g);
        }
    }
    out
}

pub fn bleu(corpus: &[Pair], smoothing: bool) -> f64 {
    let mut clipped = [0.0f64; 4];
    let mut total = [0.0f64; 4];
    let (mut c, mut r) = (0.0, 0.0);
    for (cand, refs) in corpus {
        c += cand.len() as f64;
        let mut best = refs[0].len();
        for x in refs {
            let (d, bd) = (x.len().abs_diff(cand.len()), best.abs_diff(cand.len()));
            if d < bd || (d == bd && x.len() < best) {
                best = x.len();
            }
        }
        r += best as f64;
        for n in 1..=4 {
            for g in distinct(windows(cand, n)) {
                let max_ref = refs.iter().map(|x| occurrences(x, g)).max().unwrap();
                clipped[n - 1] += occurrences(cand, g).min(max_ref) as f64;
            }
            total[n - 1] += windows(cand, n).len() as f64;
        }
    }
    if c == 0.0 {
        return 0.0;
    }
    let mut product = 1.0;
    for n in 0..4 {
        let add = if smoothing && n > 0 { 1.0 } else { 0.0 };
        if total[n] + add == 0.0 {
            return 0.0;
        }
        product *= (clipped[n] + add) / (total[n] + add);
    }
    let bp = if c < r { (1.0 - r / c).exp() } else { 1.0 };
    bp * product.powf(0.25)
}

fn is_subsequence(sub: &[&String], of: &[String]) -> bool {
    let mut it = of.iter();
    sub.iter().all(|w| it.any(|x| x == *w))
}

/// LCS length by trying every subsequence of `a`, longest first.
pub fn lcs(a: &[String], b: &[String]) -> usize {
    assert!(a.len() <= 16, "oracle is exponential");
    let mut best = 0;
    for mask in 0u32..(1 << a.len()) {
        let len = mask.count_ones() as usize;
        if len <= best {
            continue;
        }
        let sub: Vec<&String> = (0..a.len()).filter(|i| mask >> i & 1 == 1).map(|i| &a[i]).collect();
        if is_subsequence(&sub, b) {
            best = len;
        }
    }
    best
}

pub fn rouge_l(corpus: &[Pair]) -> f64 {
    let beta2 = 1.2f64 * 1.2;
    let mut sum = 0.0;
    for (cand, refs) in corpus {
        let mut best = 0.0f64;
        for r in refs {
            let l = lcs(cand, r) as f64;
            if l > 0.0 {
                let (p, rec) = (l / cand.len() as f64, l / r.len() as f64);
                best = best.max((1.0 + beta2) * p * rec / (rec + beta2 * p));
            }
        }
        sum += best;
    }
    sum / corpus.len() as f64
}

fn oracle_stem(w: &str) -> String {
    for s in ["ing", "es", "ed", "s"] {
        if w.ends_with(s) && w.chars().count() - s.len() >= 2 {
            return w[..w.len() - s.len()].to_string();
        }
    }
    w.to_string()
}

/// Chunks of an alignment given as `(candidate, reference)` positions in
/// candidate order.
fn chunks(links: &[(usize, usize)]) -> usize {
    let mut n = 0;
    for (k, &(i, j)) in links.iter().enumerate() {
        if k == 0 || links[k - 1] != (i - 1, j.wrapping_sub(1)) {
            n += 1;
        }
    }
    n
}

fn enumerate(
    cand: &[String],
    refs: &[String],
    i: usize,
    used: &mut Vec<bool>,
    links: &mut Vec<(usize, usize)>,
    best: &mut (usize, usize),
) {
    if i == cand.len() {
        let m = links.len();
        let c = chunks(links);
        if m > best.0 || (m == best.0 && c < best.1) {
            *best = (m, c);
        }
        return;
    }
    enumerate(cand, refs, i + 1, used, links, best);
    for j in 0..refs.len() {
        if !used[j] && cand[i] == refs[j] {
            used[j] = true;
            links.push((i, j));
            enumerate(cand, refs, i + 1, used, links, best);
            links.pop();
            used[j] = false;
        }
    }
}

pub fn meteor(corpus: &[Pair], stemmed: bool) -> f64 {
    let norm = |t: &[String]| -> Vec<String> {
        t.iter()
            .map(|w| if stemmed { oracle_stem(w) } else { w.clone() })
            .collect()
    };
    let mut sum = 0.0;
    for (cand, refs) in corpus {
        let c = norm(cand);
        let mut best_score = 0.0f64;
        for r in refs {
            let r = norm(r);
            let mut best = (0, usize::MAX);
            enumerate(&c, &r, 0, &mut vec![false; r.len()], &mut Vec::new(), &mut best);
            let (m, ch) = best;
            if m == 0 {
                continue;
            }
            let (p, rec) = (m as f64 / c.len() as f64, m as f64 / r.len() as f64);
            let f = 10.0 * p * rec / (rec + 9.0 * p);
            best_score = best_score.max(f * (1.0 - 0.5 * (ch as f64 / m as f64).powi(3)));
        }
        sum += best_score;
    }
    sum / corpus.len() as f64
}

/// Per-pair CIDEr on the 0 to 10 scale, computed from scratch.
pub fn cider(corpus: &[Pair]) -> Vec<f64> {
    let n_docs = corpus.len() as f64;
    let df = |g: &[String]| -> f64 {
        let d = corpus
            .iter()
            .filter(|(_, refs)| refs.iter().any(|r| occurrences(r, g) > 0))
            .count();
        d.max(1) as f64
    };
    let vector = |t: &[String], n: usize| -> Vec<(Vec<String>, f64)> {
        let total = windows(t, n).len() as f64;
        distinct(windows(t, n))
            .into_iter()
            .map(|g| (g.to_vec(), occurrences(t, g) as f64 / total * (n_docs / df(g)).ln()))
            .collect()
    };
    let cosine = |a: &[(Vec<String>, f64)], b: &[(Vec<String>, f64)]| -> f64 {
        let mut dot = 0.0;
        for (g, x) in a {
            for (h, y) in b {
                if g == h {
                    dot += x * y;
                }
            }
        }
        let na: f64 = a.iter().map(|(_, x)| x * x).sum::<f64>().sqrt();
        let nb: f64 = b.iter().map(|(_, x)| x * x).sum::<f64>().sqrt();
        if na == 0.0 || nb == 0.0 {
            0.0
        } else {
            dot / (na * nb)
        }
    };
    corpus
        .iter()
        .map(|(cand, refs)| {
            let mut s = 0.0;
            for n in 1..=4 {
                let c = vector(cand, n);
                let per: f64 = refs.iter().map(|r| cosine(&c, &vector(r, n))).sum();
                s += per / refs.len() as f64;
            }
            10.0 * s / 4.0
        })
        .collect()
}

/// Named metric fixtures. Corpora with a single pair are skipped for CIDEr.
pub fn fixtures() -> Vec<(&'static str, Vec<Pair>)> {
    vec![
        ("bleu_worked", vec![pair("a b c d e", &["a b c d"])]),
        ("rouge_worked", vec![pair("a b c d", &["a c b d"])]),
        ("meteor_worked", vec![pair("turn left now", &["turn left now"])]),
        (
            "cider_worked",
            vec![
                pair("red car turns left", &["red car turns left"]),
                pair("blue truck stops here", &["green bus waits there"]),
            ],
        ),
        (
            "identity",
            vec![pair(
                "the ego vehicle is going straight",
                &["the ego vehicle is going straight"],
            )],
        ),
        ("disjoint", vec![pair("a b c", &["d e f"])]),
        (
            "two_references",
            vec![pair(
                "the cat sat on the mat",
                &["the cat is on the mat", "there is a cat on the mat"],
            )],
        ),
        (
            "clipping",
            vec![pair(
                "the the the the the the the",
                &["the cat is on the mat", "there is a cat on the mat"],
            )],
        ),
        ("short_candidate", vec![pair("a b", &["a b c d e f"])]),
        ("long_candidate", vec![pair("a b c d e f g h", &["a b c d"])]),
        ("reversed", vec![pair("d c b a", &["a b c d"])]),
        ("insertion", vec![pair("a b x c d", &["a b c d"])]),
        ("repeated_reference_word", vec![pair("a b", &["a x a b"])]),
        ("inflections", vec![pair("cars slowing down", &["car slows down"])]),
        ("empty_candidate", vec![pair("", &["a b"]), pair("a b", &["a b"])]),
        (
            "ctags",
            vec![
                pair("< c1 , CAM_FRONT , 8.0 , 40.0 >", &["< c1 , CAM_FRONT , 8.0 , 24.0 >"]),
                pair("< c2 , CAM_BACK , 1.5 , 9.0 >", &["< c2 , CAM_BACK , 1.5 , 9.0 >"]),
            ],
        ),
        (
            "shared_everywhere",
            vec![pair("go left", &["go left"]), pair("go right", &["go right"])],
        ),
        (
            "mixed_corpus",
            vec![
                pair("the car ahead is braking", &["the car ahead is slowing down"]),
                pair("turn left", &["go straight", "turn left at the light"]),
                pair("there are two pedestrians", &["two pedestrians are crossing"]),
                pair("yes", &["no"]),
            ],
        ),
        (
            "single_tokens",
            vec![pair("yes", &["yes"]), pair("no", &["yes"]), pair("no", &["no"])],
        ),
        ("alternating", vec![pair("a b a b a b", &["b a b a b a"])]),
        (
            "duplicated_references",
            vec![
                pair("keep going straight", &["keep going straight", "keep going straight"]),
                pair("stop", &["stop now", "stop"]),
            ],
        ),
        (
            "length_ties",
            vec![
                pair("a b c", &["a b", "a b c d"]),
                pair("x y z w", &["x y z", "x y z w v"]),
            ],
        ),
    ]
}
