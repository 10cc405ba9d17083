mod common;

use common::*;
use dybm::{BinarySequence, DybmModel, ModelConfig};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn streamed_traces_match_direct_sums() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..20 {
        let n = rng.random_range(1..=3);
        let mut model = random_model(&mut rng, n, 2, 3, 7, 0.5);
        let t = rng.random_range(1..=60);
        let seq = random_sequence(&mut rng, n, t, 0.4);
        assert!(max_trace_error(&mut model, &seq) <= 1e-12);
    }
}

#[test]
fn traces_after_a_single_spike() {
    // one spike at t = 0 through a delay-3 edge
    let cfg = ModelConfig {
        synaptic_decays: vec![0.5],
        neural_decays: vec![0.5],
        ..ModelConfig::new(2).with_delays(3, 3)
    };
    let mut model = DybmModel::new(cfg).unwrap();
    model.step_advance(&[1, 0]).unwrap();
    let tr = model.traces();
    assert_eq!(tr.gamma(0, 0), 0.5);
    assert_eq!(tr.beta(0, 1, 0), 0.5);
    assert_eq!(tr.alpha(0, 1, 0), 0.0);
    model.step_advance(&[0, 0]).unwrap();
    assert_eq!(model.traces().beta(0, 1, 0), 0.25);
    model.step_advance(&[0, 0]).unwrap();
    // the spike has now left the queue
    assert_eq!(model.traces().beta(0, 1, 0), 0.0);
    assert_eq!(model.traces().alpha(0, 1, 0), 1.0);
    model.step_advance(&[0, 0]).unwrap();
    assert_eq!(model.traces().alpha(0, 1, 0), 0.5);
}

#[test]
fn fields_match_direct_energy() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..20 {
        let n = rng.random_range(1..=4);
        let mut model = random_model(&mut rng, n, 3, 2, 5, 1.0);
        let seq = random_sequence(&mut rng, n, 12, 0.5);
        let delays = model.delays();
        let (lam, mu) = (model.config().synaptic_decays.clone(), model.config().neural_decays.clone());
        for t in 0..seq.len() {
            let direct = direct_fields(&model.params, &direct_traces(&seq, t, &delays, &lam, &mu));
            let streamed = model.fields(None).unwrap();
            for (a, b) in streamed.iter().zip(&direct) {
                assert!((a - b).abs() < 1e-12, "{a} vs {b}");
            }
            model.step_advance(seq.column(t)).unwrap();
        }
    }
}

#[test]
fn sequence_nll_matches_direct_evaluation() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..10 {
        let mut model = random_model(&mut rng, 3, 3, 3, 7, 1.0);
        let seq = random_sequence(&mut rng, 3, 25, 0.3);
        let cfg = model.config().clone();
        let direct = direct_sequence_nll(&model.params, &seq, &model.delays(), &cfg.synaptic_decays, &cfg.neural_decays);
        model.reset_dynamic_state();
        let streamed = model.sequence_nll(&seq).unwrap();
        assert!((direct - streamed).abs() < 1e-10 * direct.max(1.0));
    }
}

#[test]
fn gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for _ in 0..5 {
        let n = rng.random_range(1..=3);
        let mut model = random_model(&mut rng, n, 3, 3, 4, 0.5);
        let t = rng.random_range(1..=10);
        let seq = random_sequence(&mut rng, n, t, 0.5);
        let fd = finite_difference_gradient(&model, &seq, 1e-5);
        model.reset_dynamic_state();
        let analytic = model.sequence_loglik_gradient(&seq).unwrap();
        for (c, &f) in fd.iter().enumerate() {
            let a = analytic.get(c);
            assert!((a - f).abs() <= 1e-5 * a.abs().max(1e-3), "coordinate {c}: {a} vs {f}");
        }
    }
}

#[test]
fn probabilities_sum_to_one_over_all_sequences() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut model = random_model(&mut rng, 2, 3, 3, 3, 1.5);
    let total: f64 = all_sequences(2, 3)
        .iter()
        .map(|s| {
            model.reset_dynamic_state();
            (-model.sequence_nll(s).unwrap()).exp()
        })
        .sum();
    assert!((total - 1.0).abs() < 1e-12);
}

#[test]
fn direct_oracle_sanity() {
    // all-zero parameters make every bit a fair coin
    let model = DybmModel::from_parts(ModelConfig::new(2), dybm::Parameters::zeros(2, 3, 3), &[1, 2, 3, 4]).unwrap();
    let seq = BinarySequence::from_rows(&[[1u8, 0, 1], [0, 0, 1]]).unwrap();
    let cfg = model.config();
    let nll = direct_sequence_nll(&model.params, &seq, &model.delays(), &cfg.synaptic_decays, &cfg.neural_decays);
    assert!((nll - 6.0 * std::f64::consts::LN_2).abs() < 1e-14);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn trace_equivalence_holds_for_arbitrary_inputs(
        seed in any::<u64>(),
        n in 1usize..=3,
        t in 0usize..40,
        max_delay in 1usize..=7,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut model = random_model(&mut rng, n, 2, 2, max_delay, 0.3);
        let seq = random_sequence(&mut rng, n, t, 0.5);
        prop_assert!(max_trace_error(&mut model, &seq) <= 1e-12);
    }

    #[test]
    fn traces_stay_within_geometric_bounds(seed in any::<u64>(), t in 1usize..80) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut model = random_model(&mut rng, 3, 3, 3, 7, 0.3);
        let seq = random_sequence(&mut rng, 3, t, 0.9);
        for x in seq.columns() {
            model.step_advance(x).unwrap();
        }
        let cfg = model.config().clone();
        let tr = model.traces();
        for i in 0..3 {
            for (l, &mu) in cfg.neural_decays.iter().enumerate() {
                prop_assert!(tr.gamma(i, l) >= 0.0 && tr.gamma(i, l) <= mu / (1.0 - mu) + 1e-12);
            }
            for j in 0..3 {
                for (k, &lam) in cfg.synaptic_decays.iter().enumerate() {
                    // alpha includes the newest arrival at full weight
                    prop_assert!(tr.alpha(i, j, k) >= 0.0 && tr.alpha(i, j, k) <= 1.0 / (1.0 - lam) + 1e-12);
                }
                for (l, &mu) in cfg.neural_decays.iter().enumerate() {
                    prop_assert!(tr.beta(i, j, l) >= 0.0 && tr.beta(i, j, l) <= mu / (1.0 - mu) + 1e-12);
                }
            }
        }
    }
}
