use mvfuse_core::cost::{
    count_params, em_base, estimate_flops, from_model, from_model_spec, memory_report, q_large, t5_base, t5_large,
    ArchSpec, GbUnit, Layer, LayerKind, Norm, SeqLens, Stream,
};
use mvfuse_core::lm::ModelSpec;
use mvfuse_core::model::Model;
use proptest::prelude::*;
use proptest::test_runner::{Config, RngSeed};

fn norm() -> impl Strategy<Value = Norm> {
    prop_oneof![Just(Norm::Layer), Just(Norm::Rms), Just(Norm::None)]
}

fn kind() -> impl Strategy<Value = LayerKind> {
    let d = 1usize..64;
    prop_oneof![
        (d.clone(), d.clone()).prop_map(|(rows, dim)| LayerKind::Embedding { rows, dim }),
        (d.clone(), d.clone(), any::<bool>(), any::<bool>()).prop_map(|(d_in, d_out, bias, tied)| LayerKind::Linear {
            d_in,
            d_out,
            bias,
            tied
        }),
        (d.clone(), d.clone(), any::<bool>(), norm()).prop_map(|(d_model, inner, cross, norm)| LayerKind::Attention {
            d_model,
            inner,
            cross,
            norm
        }),
        (d.clone(), d.clone(), any::<bool>(), norm()).prop_map(|(d_model, d_ff, gated, norm)| LayerKind::FeedForward {
            d_model,
            d_ff,
            gated,
            norm
        }),
        (d.clone(), norm()).prop_map(|(dim, norm)| LayerKind::Norm { dim, norm }),
        (d.clone(), d.clone()).prop_map(|(buckets, heads)| LayerKind::RelativeBias { buckets, heads }),
        (d.clone(), d.clone(), 1usize..8).prop_map(|(k, m, n_views)| LayerKind::FusionGate { k, m, n_views }),
        (d.clone(), d.clone()).prop_map(|(h_i, h_t)| LayerKind::Projection { h_i, h_t }),
        (d.clone(), d.clone(), 1usize..9).prop_map(|(d_in, d_out, rank)| LayerKind::Lora { d_in, d_out, rank }),
    ]
}

fn stream() -> impl Strategy<Value = Stream> {
    prop_oneof![
        Just(Stream::Encoder),
        Just(Stream::Decoder),
        (1usize..50).prop_map(Stream::Tokens)
    ]
}

fn layer() -> impl Strategy<Value = Layer> {
    (kind(), stream(), 1usize..4, prop::sample::select(vec!["a", "b", "c"]))
        .prop_map(|(k, s, count, group)| Layer::new("l", group, s, k).times(count))
}

fn arch() -> impl Strategy<Value = ArchSpec> {
    prop::collection::vec(layer(), 0..8).prop_map(|layers| ArchSpec::new("random", layers))
}

fn seq() -> impl Strategy<Value = SeqLens> {
    (1usize..200, 1usize..60).prop_map(|(s_enc, s_dec)| SeqLens { s_enc, s_dec })
}

proptest! {
    #![proptest_config(Config {
        cases: 200,
        rng_seed: RngSeed::Fixed(23),
        failure_persistence: None,
        ..Config::default()
    })]

    #[test]
    fn counts_add_over_concatenation(a in arch(), b in arch(), s in seq()) {
        let mut joined = a.clone();
        joined.extend(b.clone());
        prop_assert_eq!(count_params(&joined).total, count_params(&a).total + count_params(&b).total);
        prop_assert_eq!(
            estimate_flops(&joined, s).unwrap().total,
            estimate_flops(&a, s).unwrap().total + estimate_flops(&b, s).unwrap().total
        );
        let by_group: u64 = count_params(&joined).by_group.values().sum();
        prop_assert_eq!(by_group, count_params(&joined).total);
    }

    #[test]
    fn flops_never_shrink_with_longer_sequences(a in arch(), s in seq(), de in 0usize..50, dd in 0usize..20) {
        let longer = SeqLens { s_enc: s.s_enc + de, s_dec: s.s_dec + dd };
        prop_assert!(estimate_flops(&a, longer).unwrap().total >= estimate_flops(&a, s).unwrap().total);
    }

    #[test]
    fn copies_scale_linearly(l in layer(), extra in 1usize..5, s in seq()) {
        let more = l.clone().times(l.count + extra);
        prop_assert_eq!(more.params() * l.count as u64, l.params() * more.count as u64);
        prop_assert_eq!(more.flops(s) * l.count as u64, l.flops(s) * more.count as u64);
    }

    #[test]
    fn memory_follows_bit_widths(a in arch()) {
        let mut eight = a.clone();
        eight.default_bits = 8;
        let full = memory_report(&a, GbUnit::Decimal).bytes;
        prop_assert_eq!(memory_report(&eight, GbUnit::Decimal).bytes * 4, full);
        prop_assert_eq!(full, count_params(&a).total * 4);
    }

    #[test]
    fn desk_estimate_counts_the_runnable_model(
        h in prop::sample::select(vec![4usize, 8, 12]),
        heads in prop::sample::select(vec![1usize, 2, 4]),
        layers in 0usize..3,
        d_ff in 1usize..20,
        gated in any::<bool>(),
        tied in any::<bool>(),
        lora in any::<bool>(),
    ) {
        let spec = ModelSpec {
            image_size: 8,
            patch_size: 4,
            h_i: 3,
            n_views: 2,
            k: 5,
            h_t: h,
            n_heads: heads,
            n_enc_layers: layers,
            n_dec_layers: 1,
            d_ff,
            vocab_size: 13,
            max_seq: 16,
            gated_ffn: gated,
            tie_embeddings: tied,
            ..ModelSpec::desk(13)
        };
        prop_assume!(h % heads == 0);
        let mut model = Model::new(&spec, 1).unwrap();
        prop_assert_eq!(count_params(&from_model_spec(&spec)).total, model.num_params() as u64);
        if lora {
            let targets = model.lm.default_lora_targets();
            model.lm.attach_lora(&targets, 2, 4.0, &mut mvfuse_core::rng::SeededRng::new(0)).unwrap();
            prop_assert_eq!(count_params(&from_model(&model)).total, model.num_params() as u64);
        }
    }
}

#[test]
fn published_configurations() {
    assert_eq!(count_params(&t5_base()).total, 222_903_552);
    assert_eq!(count_params(&em_base()).total, 235_525_760);
    assert_eq!(count_params(&q_large()).total, 769_361_536);
    assert!(count_params(&t5_large()).total > 700_000_000);

    let m = memory_report(&em_base(), GbUnit::Decimal);
    assert_eq!(format!("{:.2}", m.gb), "0.94");
    assert_eq!(format!("{:.2}", memory_report(&q_large(), GbUnit::Decimal).gb), "0.77");
    assert!((memory_report(&em_base(), GbUnit::Binary).gb - m.bytes as f64 / (1u64 << 30) as f64).abs() < 1e-15);
}

#[test]
fn hand_counted_layers() {
    let s = SeqLens { s_enc: 10, s_dec: 3 };
    let attn = Layer::new(
        "a",
        "g",
        Stream::Encoder,
        LayerKind::Attention {
            d_model: 4,
            inner: 6,
            cross: false,
            norm: Norm::Layer,
        },
    );
    // 4 projections of 4×6, plus gain and bias.
    assert_eq!(attn.params(), 4 * 24 + 8);
    assert_eq!(attn.flops(s), 4 * 10 * 4 * 6 + 2 * 10 * 10 * 6);
    let cross = Layer::new(
        "c",
        "g",
        Stream::Decoder,
        LayerKind::Attention {
            d_model: 4,
            inner: 6,
            cross: true,
            norm: Norm::Rms,
        },
    );
    assert_eq!(cross.params(), 4 * 24 + 4);
    assert_eq!(cross.flops(s), 2 * 3 * 4 * 6 + 2 * 10 * 4 * 6 + 2 * 3 * 10 * 6);
    let gate = Layer::new(
        "f",
        "g",
        Stream::Tokens(1),
        LayerKind::FusionGate { k: 2, m: 3, n_views: 4 },
    );
    assert_eq!(gate.params(), 2 + 2 * 6);
    assert_eq!(gate.flops(s), 4 * (2 * 2 * 3 + 2) + 4 * 3);
    let ff = Layer::new(
        "m",
        "g",
        Stream::Decoder,
        LayerKind::FeedForward {
            d_model: 4,
            d_ff: 5,
            gated: true,
            norm: Norm::None,
        },
    );
    assert_eq!(ff.params(), 3 * 20);
    assert_eq!(ff.flops(s), 3 * 3 * 20);
    let tied = Layer::new(
        "h",
        "g",
        Stream::Decoder,
        LayerKind::Linear {
            d_in: 4,
            d_out: 9,
            bias: false,
            tied: true,
        },
    );
    assert_eq!((tied.params(), tied.flops(s)), (0, 3 * 36));
}
