mod common;

use mvfuse_core::rng::SeededRng;
use proptest::prelude::*;
use proptest::test_runner::{Config, RngSeed};

const TOL: f64 = 1e-5;

fn config(cases: u32) -> Config {
    Config {
        cases,
        rng_seed: RngSeed::Fixed(0x6d76_6675),
        failure_persistence: None,
        ..Config::default()
    }
}

proptest! {
    #![proptest_config(config(128))]

    #[test]
    fn every_op_matches_central_differences(seed in any::<u64>()) {
        for (name, case) in common::op_cases() {
            let err = case(&mut SeededRng::new(seed));
            prop_assert!(err < TOL, "{name}: relative error {err:e} (seed {seed})");
        }
    }
}

proptest! {
    #![proptest_config(config(12))]

    #[test]
    fn full_model_gradients(seed in any::<u64>(), gated in any::<bool>(), lora in any::<bool>()) {
        let err = common::composed_grad_error(seed, gated, lora);
        prop_assert!(err < TOL, "relative error {err:e} (gated {gated}, lora {lora})");
    }
}

#[test]
fn full_model_with_adapters_and_gated_ffn() {
    for seed in 0..3 {
        let err = common::composed_grad_error(seed, true, true);
        assert!(err < TOL, "seed {seed}: {err:e}");
    }
}
