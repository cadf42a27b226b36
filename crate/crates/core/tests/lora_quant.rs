mod common;

use mvfuse_core::lm::{dequant_matmul, quantize_int8};
use mvfuse_core::model::{Example, Model};
use mvfuse_core::rng::SeededRng;
use mvfuse_core::tensor::{Tape, Tensor};
use proptest::prelude::*;
use proptest::test_runner::{Config, RngSeed};

fn example(model: &Model, rng: &mut SeededRng) -> Example {
    Example {
        id: "x".into(),
        views: common::randn(&[model.spec.n_views, model.spec.m()], rng),
        question: vec![4, 6, 5],
        answer: vec![7, 8],
    }
}

fn logits(model: &Model, ex: &Example) -> Tensor {
    let mut tape = Tape::new();
    let b = model.bind(&mut tape, |_| false);
    let (l, _) = model.sample_logits(&mut tape, &b, ex).unwrap();
    tape.value(l).clone()
}

fn with_adapters(seed: u64, rank: usize, random_b: bool) -> (Model, Model, Example) {
    let base = Model::new(&common::tiny_spec(seed.is_multiple_of(2)), seed).unwrap();
    let mut adapted = base.clone();
    let mut rng = SeededRng::derived(seed, 3);
    let targets = adapted.lm.default_lora_targets();
    adapted
        .lm
        .attach_lora(&targets, rank, 2.0 * rank as f64, &mut rng)
        .unwrap();
    if random_b {
        for a in adapted.lm.lora_mut().values_mut() {
            a.b = Tensor::randn(a.b.shape(), 0.3, &mut rng).unwrap();
        }
    }
    let ex = example(&base, &mut rng);
    (base, adapted, ex)
}

proptest! {
    #![proptest_config(Config {
        cases: 64,
        rng_seed: RngSeed::Fixed(31),
        failure_persistence: None,
        ..Config::default()
    })]

    #[test]
    fn fresh_adapters_change_nothing(seed in any::<u64>(), rank in 1usize..5) {
        let (base, adapted, ex) = with_adapters(seed, rank, false);
        prop_assert!(logits(&base, &ex).bit_eq(&logits(&adapted, &ex)));
        prop_assert_eq!(
            base.generate(&ex.views, &ex.question, 5).unwrap(),
            adapted.generate(&ex.views, &ex.question, 5).unwrap()
        );
    }

    #[test]
    fn merging_adapters_preserves_outputs(seed in any::<u64>(), rank in 1usize..5) {
        let (base, mut adapted, ex) = with_adapters(seed, rank, true);
        let before = logits(&adapted, &ex);
        prop_assert!(before.max_abs_diff(&logits(&base, &ex)) > 1e-6);
        adapted.lm.merge_lora().unwrap();
        prop_assert!(adapted.lm.lora().is_empty());
        prop_assert!(logits(&adapted, &ex).max_abs_diff(&before) < 1e-10);
    }

    #[test]
    fn int8_round_trip_is_within_half_a_step(
        seed in any::<u64>(),
        rows in 1usize..24,
        cols in 1usize..24,
        std in 1e-6f64..1e3,
    ) {
        let w = Tensor::randn(&[rows, cols], std, &mut SeededRng::new(seed)).unwrap();
        let q = quantize_int8(&w, None).unwrap();
        let back = q.dequantize();
        for (a, b) in w.data().iter().zip(back.data()) {
            prop_assert!((a - b).abs() <= q.scale / 2.0, "{a} -> {b}, scale {}", q.scale);
        }
        prop_assert!(q.values.iter().all(|&v| v >= -127));
        let peak = w.data().iter().fold(0.0f64, |m, v| m.max(v.abs()));
        prop_assert_eq!(q.values.iter().map(|v| v.unsigned_abs()).max(), Some(127));
        prop_assert!((q.scale * 127.0 - peak).abs() <= peak * 1e-15);
    }
}

#[test]
fn zero_matrix_quantizes_to_zero() {
    let q = quantize_int8(&Tensor::zeros(&[3, 2]).unwrap(), None).unwrap();
    assert_eq!(q.scale, 1.0);
    assert!(q.values.iter().all(|&v| v == 0));
}

#[test]
fn quantized_linear_applies_bias() {
    let w = Tensor::matrix(2, 2, vec![1.27, -0.5, 0.0, 0.25]).unwrap();
    let b = Tensor::vector(vec![1.0, -1.0]).unwrap();
    let q = quantize_int8(&w, Some(b)).unwrap();
    let x = Tensor::matrix(1, 2, vec![1.0, 2.0]).unwrap();
    let y = dequant_matmul(&q, &x).unwrap();
    // Scale 0.01: every weight here is an exact multiple.
    assert!((y.data()[0] - (1.27 + 1.0)).abs() < 1e-12);
    assert!((y.data()[1] - (-0.5 + 0.5 - 1.0)).abs() < 1e-12);
}

#[test]
fn quantized_models_keep_norms_in_float() {
    let mut m = Model::new(&common::tiny_spec(false), 2).unwrap();
    m.lm.quantize().unwrap();
    let q = m.lm.quantized();
    assert!(q.contains_key("lm.enc.0.attn.q"));
    assert!(!q.keys().any(|k| k.contains(".ln")));
    assert!(m.lm.merge_lora().is_err());
}
