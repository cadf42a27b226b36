#![allow(dead_code)]

pub mod oracles;

use std::path::Path;
use std::time::{Duration, Instant};

use mvfuse_core::container::Dtype;
use mvfuse_core::data::{gen_synthetic, load_dataset, split_scenes, QASample, Split};
use mvfuse_core::fusion::{fuse_on_tape, GateVars};
use mvfuse_core::lm::{split_words, ModelSpec, Tokenizer};
use mvfuse_core::metrics::{bleu4, EvalPair};
use mvfuse_core::model::{Example, Model};
use mvfuse_core::rng::SeededRng;
use mvfuse_core::tensor::{grad_check, Tape, Tensor, Var};
use mvfuse_core::train::{run_stage, Checkpoint, StagePlan, TrainConfig, TrainState};
use mvfuse_core::Result;

pub const H: f64 = 1e-5;

pub fn randn(shape: &[usize], rng: &mut SeededRng) -> Tensor {
    Tensor::randn(shape, 1.0, rng).unwrap()
}

fn dim(rng: &mut SeededRng) -> usize {
    1 + rng.below(8) as usize
}

/// `Σ y ⊙ r` for a fixed random `r`, so every output element matters.
fn probe(t: &mut Tape, y: Var, r: &Tensor) -> Result<Var> {
    let r = t.constant(r.clone());
    let p = t.mul(y, r)?;
    Ok(t.sum(p))
}

fn check(x: &Tensor, f: impl Fn(&mut Tape, Var) -> Result<Var>) -> f64 {
    grad_check(f, x, H).unwrap()
}

/// Worst relative gradient error of one operation over all its inputs.
pub type OpCase = (&'static str, fn(&mut SeededRng) -> f64);

fn binary(
    rng: &mut SeededRng,
    a_shape: &[usize],
    b_shape: &[usize],
    out_shape: &[usize],
    op: fn(&mut Tape, Var, Var) -> Result<Var>,
) -> f64 {
    let (a, b, r) = (randn(a_shape, rng), randn(b_shape, rng), randn(out_shape, rng));
    let ea = check(&a, |t, x| {
        let bv = t.constant(b.clone());
        let y = op(t, x, bv)?;
        probe(t, y, &r)
    });
    let eb = check(&b, |t, x| {
        let av = t.constant(a.clone());
        let y = op(t, av, x)?;
        probe(t, y, &r)
    });
    ea.max(eb)
}

fn unary(rng: &mut SeededRng, x: Tensor, out_shape: &[usize], op: impl Fn(&mut Tape, Var) -> Result<Var>) -> f64 {
    let r = randn(out_shape, rng);
    check(&x, |t, v| {
        let y = op(t, v)?;
        probe(t, y, &r)
    })
}

pub fn op_cases() -> Vec<OpCase> {
    vec![
        ("matmul", |rng| {
            let (m, k, n) = (dim(rng), dim(rng), dim(rng));
            binary(rng, &[m, k], &[k, n], &[m, n], |t, a, b| t.matmul(a, b))
        }),
        ("matmul_nt", |rng| {
            let (m, k, n) = (dim(rng), dim(rng), dim(rng));
            binary(rng, &[m, k], &[n, k], &[m, n], |t, a, b| t.matmul_nt(a, b))
        }),
        ("add", |rng| {
            let s = [dim(rng), dim(rng)];
            binary(rng, &s, &s, &s, |t, a, b| t.add(a, b))
        }),
        ("sub", |rng| {
            let s = [dim(rng), dim(rng)];
            binary(rng, &s, &s, &s, |t, a, b| t.sub(a, b))
        }),
        ("hadamard", |rng| {
            let s = [dim(rng), dim(rng)];
            binary(rng, &s, &s, &s, |t, a, b| t.hadamard(a, b))
        }),
        ("add_bias", |rng| {
            let (m, n) = (dim(rng), dim(rng));
            binary(rng, &[m, n], &[n], &[m, n], |t, a, b| t.add_bias(a, b))
        }),
        ("scale", |rng| {
            let s = [dim(rng), dim(rng)];
            let c = rng.normal(2.0);
            let x = randn(&s, rng);
            unary(rng, x, &s, move |t, v| Ok(t.scale(v, c)))
        }),
        ("tanh", |rng| {
            let s = [dim(rng), dim(rng)];
            let x = randn(&s, rng);
            unary(rng, x, &s, |t, v| Ok(t.tanh(v)))
        }),
        ("sigmoid", |rng| {
            let s = [dim(rng), dim(rng)];
            let x = randn(&s, rng);
            unary(rng, x, &s, |t, v| Ok(t.sigmoid(v)))
        }),
        ("relu", |rng| {
            let s = [dim(rng), dim(rng)];
            // Keep inputs away from the kink so central differences are exact.
            let x = randn(&s, rng).map(|v| v.signum() * (0.1 + v.abs()));
            unary(rng, x, &s, |t, v| Ok(t.relu(v)))
        }),
        ("softmax_rows", |rng| {
            let s = [dim(rng), dim(rng)];
            let x = randn(&s, rng);
            unary(rng, x, &s, |t, v| t.softmax(v, 1))
        }),
        ("softmax_cols", |rng| {
            let s = [dim(rng), dim(rng)];
            let x = randn(&s, rng);
            unary(rng, x, &s, |t, v| t.softmax(v, 0))
        }),
        ("masked_softmax", |rng| {
            let s = [dim(rng), dim(rng)];
            let mask: Vec<bool> = (0..s[0] * s[1]).map(|_| rng.below(4) != 0).collect();
            let x = randn(&s, rng);
            unary(rng, x, &s, move |t, v| t.masked_softmax(v, &mask))
        }),
        ("layer_norm", |rng| {
            let (m, n) = (dim(rng), 1 + dim(rng));
            let (x, g, b) = (randn(&[m, n], rng), randn(&[n], rng), randn(&[n], rng));
            let r = randn(&[m, n], rng);
            let ex = check(&x, |t, v| {
                let (gv, bv) = (t.constant(g.clone()), t.constant(b.clone()));
                let y = t.layer_norm(v, gv, bv, 1e-6)?;
                probe(t, y, &r)
            });
            let eg = check(&g, |t, v| {
                let (xv, bv) = (t.constant(x.clone()), t.constant(b.clone()));
                let y = t.layer_norm(xv, v, bv, 1e-6)?;
                probe(t, y, &r)
            });
            let eb = check(&b, |t, v| {
                let (xv, gv) = (t.constant(x.clone()), t.constant(g.clone()));
                let y = t.layer_norm(xv, gv, v, 1e-6)?;
                probe(t, y, &r)
            });
            ex.max(eg).max(eb)
        }),
        ("cross_entropy", |rng| {
            let (m, n) = (dim(rng), 1 + dim(rng));
            let mut targets: Vec<usize> = (0..m).map(|_| rng.below(n as u64) as usize).collect();
            // At least one target must differ from the pad id (0).
            targets[0] = 1 + rng.below(n as u64 - 1) as usize;
            let x = randn(&[m, n], rng);
            check(&x, |t, v| t.cross_entropy(v, &targets, 0))
        }),
        ("sum", |rng| {
            let x = randn(&[dim(rng), dim(rng)], rng);
            check(&x, |t, v| {
                let sq = t.mul(v, v)?;
                Ok(t.sum(sq))
            })
        }),
        ("reshape", |rng| {
            let (m, n) = (dim(rng), dim(rng));
            let x = randn(&[m, n], rng);
            unary(rng, x, &[n * m], |t, v| {
                let n_el = t.value(v).numel();
                t.reshape(v, &[n_el])
            })
        }),
        ("transpose", |rng| {
            let (m, n) = (dim(rng), dim(rng));
            let x = randn(&[m, n], rng);
            unary(rng, x, &[n, m], |t, v| t.transpose(v))
        }),
        ("concat_rows", |rng| {
            let (m1, m2, n) = (dim(rng), dim(rng), dim(rng));
            binary(rng, &[m1, n], &[m2, n], &[m1 + m2, n], |t, a, b| t.concat_rows(&[a, b]))
        }),
        ("concat_cols", |rng| {
            let (m, n1, n2) = (dim(rng), dim(rng), dim(rng));
            binary(rng, &[m, n1], &[m, n2], &[m, n1 + n2], |t, a, b| t.concat_cols(&[a, b]))
        }),
        ("slice_rows", |rng| {
            let (m, n) = (dim(rng), dim(rng));
            let start = rng.below(m as u64) as usize;
            let len = 1 + rng.below((m - start) as u64) as usize;
            let x = randn(&[m, n], rng);
            unary(rng, x, &[len, n], move |t, v| t.slice_rows(v, start, len))
        }),
        ("slice_cols", |rng| {
            let (m, n) = (dim(rng), dim(rng));
            let start = rng.below(n as u64) as usize;
            let len = 1 + rng.below((n - start) as u64) as usize;
            let x = randn(&[m, n], rng);
            unary(rng, x, &[m, len], move |t, v| t.slice_cols(v, start, len))
        }),
        ("gather_rows", |rng| {
            let (rows, n, k) = (dim(rng), dim(rng), dim(rng));
            let ids: Vec<usize> = (0..k).map(|_| rng.below(rows as u64) as usize).collect();
            let x = randn(&[rows, n], rng);
            unary(rng, x, &[k, n], move |t, v| t.gather_rows(v, &ids))
        }),
        ("gated_pooling", |rng| {
            let (n, m, k) = (dim(rng), dim(rng), dim(rng));
            let views = randn(&[n, m], rng);
            let (w, z, g) = (randn(&[k], rng), randn(&[k, m], rng), randn(&[k, m], rng));
            let r = randn(&[1, m], rng);
            let run = |t: &mut Tape, which: usize, x: Var| -> Result<Var> {
                let mut vars = [views.clone(), w.clone(), z.clone(), g.clone()].map(|v| t.constant(v));
                vars[which] = x;
                let (_, fused) = fuse_on_tape(
                    t,
                    vars[0],
                    GateVars {
                        w: vars[1],
                        z: vars[2],
                        g: vars[3],
                    },
                )?;
                probe(t, fused, &r)
            };
            [&views, &w, &z, &g]
                .into_iter()
                .enumerate()
                .map(|(i, x)| check(x, |t, v| run(t, i, v)))
                .fold(0.0, f64::max)
        }),
    ]
}

/// Small model with unit-scale weights so every nonlinearity is exercised.
pub fn tiny_spec(gated: bool) -> ModelSpec {
    ModelSpec {
        image_size: 8,
        patch_size: 4,
        h_i: 4,
        n_views: 2,
        k: 3,
        h_t: 8,
        n_enc_layers: 1,
        n_dec_layers: 1,
        n_heads: 2,
        d_ff: 8,
        vocab_size: 9,
        max_seq: 12,
        gated_ffn: gated,
        lm_init_std: 0.5,
        init_std: 0.5,
        ..ModelSpec::desk(9)
    }
}

fn random_example(model: &Model, rng: &mut SeededRng, id: usize) -> Example {
    let spec = &model.spec;
    let ids = |rng: &mut SeededRng, len: usize| -> Vec<usize> {
        (0..len)
            .map(|_| 4 + rng.below(spec.vocab_size as u64 - 4) as usize)
            .collect()
    };
    let q_len = 1 + rng.below(3) as usize;
    let a_len = 1 + rng.below(3) as usize;
    Example {
        id: id.to_string(),
        views: randn(&[spec.n_views, spec.m()], rng),
        question: ids(rng, q_len),
        answer: ids(rng, a_len),
    }
}

fn loss_value(model: &Model, batch: &[&Example]) -> f64 {
    let mut tape = Tape::new();
    let b = model.bind(&mut tape, |_| false);
    let loss = model.batch_loss(&mut tape, &b, batch).unwrap();
    tape.value(loss).item()
}

/// Worst relative error between tape gradients of the batch loss of the
/// full fusion, projection, and language model graph and central
/// differences, sampled at a few coordinates of every parameter.
pub fn composed_grad_error(seed: u64, gated: bool, lora: bool) -> f64 {
    let mut model = Model::new(&tiny_spec(gated), seed).unwrap();
    let mut rng = SeededRng::derived(seed, 77);
    if lora {
        let targets = model.lm.default_lora_targets();
        model.lm.attach_lora(&targets, 2, 4.0, &mut rng).unwrap();
        for a in model.lm.lora_mut().values_mut() {
            a.b = randn(a.b.shape(), &mut rng);
        }
    }
    let examples: Vec<Example> = (0..2).map(|i| random_example(&model, &mut rng, i)).collect();
    let batch: Vec<&Example> = examples.iter().collect();

    let mut tape = Tape::new();
    let bound = model.bind(&mut tape, |_| true);
    let loss = model.batch_loss(&mut tape, &bound, &batch).unwrap();
    let grads = tape.backward(loss).unwrap();
    let analytic: Vec<(String, Vec<f64>)> = bound
        .iter()
        .map(|(n, _, v)| (n.to_string(), grads.raw(v).map(<[f64]>::to_vec).unwrap_or_default()))
        .collect();

    let mut worst = 0.0f64;
    for (name, g) in analytic {
        let numel = model.param_mut(&name).unwrap().numel();
        let g = if g.is_empty() { vec![0.0; numel] } else { g };
        for _ in 0..3 {
            let i = rng.below(numel as u64) as usize;
            let orig = model.param_mut(&name).unwrap().data()[i];
            model.param_mut(&name).unwrap().data_mut()[i] = orig + H;
            let up = loss_value(&model, &batch);
            model.param_mut(&name).unwrap().data_mut()[i] = orig - H;
            let down = loss_value(&model, &batch);
            model.param_mut(&name).unwrap().data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * H);
            worst = worst.max((g[i] - numeric).abs() / g[i].abs().max(1.0));
        }
    }
    worst
}

pub struct GradSuite {
    pub cases: usize,
    pub worst: f64,
    pub worst_op: &'static str,
    pub elapsed: Duration,
}

/// Every op case for each seed, plus composed-graph cases.
pub fn run_grad_suite(seeds: u64, composed_seeds: u64) -> GradSuite {
    let start = Instant::now();
    let mut s = GradSuite {
        cases: 0,
        worst: 0.0,
        worst_op: "",
        elapsed: Duration::ZERO,
    };
    for seed in 0..seeds {
        for (name, f) in op_cases() {
            let e = f(&mut SeededRng::derived(seed, name.len() as u64));
            s.cases += 1;
            if e > s.worst {
                s.worst = e;
                s.worst_op = name;
            }
        }
    }
    for seed in 0..composed_seeds {
        let e = composed_grad_error(seed, seed % 2 == 1, seed % 3 == 2);
        s.cases += 1;
        if e > s.worst {
            s.worst = e;
            s.worst_op = "composed";
        }
    }
    s.elapsed = start.elapsed();
    s
}

pub struct Synthetic {
    pub dir: tempfile::TempDir,
    pub samples: Vec<QASample>,
    pub train: Vec<QASample>,
}

pub fn synthetic(n_scenes: usize, seed: u64) -> Synthetic {
    let dir = tempfile::tempdir().unwrap();
    gen_synthetic(dir.path(), n_scenes, 1, seed).unwrap();
    let samples = load_dataset(&dir.path().join("manifest.json"), true).unwrap().samples;
    let split = split_scenes(&samples, [0.9, 0.05, 0.05], seed).unwrap();
    let train = split.filter(&samples, Split::Train).into_iter().cloned().collect();
    Synthetic { dir, samples, train }
}

pub fn vocab_for(samples: &[QASample]) -> Tokenizer {
    Tokenizer::build(samples.iter().flat_map(|s| [s.question.as_str(), s.answer.as_str()]))
}

/// Fresh checkpoint for `samples` with the desk preset.
pub fn fresh_checkpoint(samples: &[QASample], cfg: &TrainConfig) -> Checkpoint {
    let vocab = vocab_for(samples);
    let mut model = Model::new(&ModelSpec::desk(vocab.len()), cfg.seed).unwrap();
    cfg.apply_variant(&mut model).unwrap();
    Checkpoint {
        model,
        vocab,
        train: cfg.clone(),
        state: TrainState::new(cfg.seed),
        dtype: Dtype::F64,
    }
}

pub fn prepare(ck: &Checkpoint, samples: &[QASample]) -> Vec<Example> {
    let refs: Vec<&QASample> = samples.iter().collect();
    ck.model.prepare(&ck.vocab, &refs).unwrap()
}

pub fn run_stages(ck: &mut Checkpoint, data: &[Example], stages: &[u8]) {
    for &s in stages {
        let plan = StagePlan::new(s, ck.train.lora.is_some()).unwrap();
        run_stage(&mut ck.model, &plan, &ck.train, data, &mut ck.state, None).unwrap();
    }
}

pub struct OverfitResult {
    pub samples: usize,
    pub accuracy: f64,
    pub bleu4: f64,
    pub correct: usize,
    pub total: usize,
    pub elapsed: Duration,
    pub first_loss: f64,
    pub last_loss: f64,
}

/// Stage 1 then stage 2 on the training split of the 8-scene synthetic set,
/// scored on that same split. `observe` sees the model before training
/// (stage 0) and after each stage.
pub fn overfit(seed: u64, cfg: &TrainConfig, mut observe: impl FnMut(u8, &Model)) -> OverfitResult {
    let start = Instant::now();
    let data = synthetic(8, seed);
    let mut ck = fresh_checkpoint(&data.train, cfg);
    let examples = prepare(&ck, &data.train);
    observe(0, &ck.model);
    for stage in [1, 2] {
        run_stages(&mut ck, &examples, &[stage]);
        observe(stage, &ck.model);
    }
    let preds = mvfuse_core::cli::predict(&ck, &data.train, cfg.max_answer_len).unwrap();
    let mut correct = 0;
    let mut pairs = Vec::new();
    for (p, s) in preds.iter().zip(&data.train) {
        let text = p.text.as_deref().unwrap_or("");
        if split_words(text) == split_words(&s.answer) {
            correct += 1;
        }
        pairs.push(EvalPair::from_text(s.id.clone(), text, &[s.answer.as_str()]));
    }
    OverfitResult {
        samples: data.samples.len(),
        accuracy: correct as f64 / preds.len() as f64,
        bleu4: bleu4(&pairs, false),
        correct,
        total: preds.len(),
        elapsed: start.elapsed(),
        first_loss: ck.state.losses.first().map_or(f64::NAN, |r| r.mean_loss),
        last_loss: ck.state.losses.last().map_or(f64::NAN, |r| r.mean_loss),
    }
}

pub fn file_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(dir).unwrap().display().to_string();
                out.push((rel, std::fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}
