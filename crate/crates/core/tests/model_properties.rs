mod common;

use common::*;
use dwnet::model::{forward, mc_predict, Mode, ModelConfig, ModelParams};
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn graphs_are_symmetric(seed in any::<u64>()) {
        prop_assert_eq!(check_graph_symmetry(&random_sample(seed)), Ok(()));
    }

    #[test]
    fn labels_match_the_queueing_formula(seed in any::<u64>()) {
        prop_assert_eq!(check_oracle(&random_sample(seed)), Ok(()));
    }

    #[test]
    fn relabeling_is_equivariant(seed in any::<u64>(), secondary in any::<bool>()) {
        let config = ModelConfig { secondary_enabled: secondary, ..small_model() };
        let params = ModelParams::init(&config, seed).unwrap();
        prop_assert_eq!(check_equivariance(&random_sample(seed), &params, &config, seed ^ 1), Ok(()));
    }

    #[test]
    fn union_equals_separate_passes(seed in any::<u64>(), n in 1usize..5) {
        let config = small_model();
        let params = ModelParams::init(&config, seed).unwrap();
        let members: Vec<_> = (0..n as u64).map(|i| random_sample(seed.wrapping_add(i))).collect();
        prop_assert_eq!(check_union(&members, &params, &config), Ok(()));
    }

    #[test]
    fn baseline_ignores_fusion_and_secondary_weights(seed in any::<u64>()) {
        prop_assert_eq!(check_reduction_invariance(&random_sample(seed), seed), Ok(()));
    }

    #[test]
    fn zero_fusion_weight_sums_messages(seed in any::<u64>()) {
        prop_assert_eq!(check_lambda_zero(&random_sample(seed), seed), Ok(()));
    }

    #[test]
    fn predictions_are_finite_and_bounded(seed in any::<u64>()) {
        let s = random_sample(seed);
        let config = small_model();
        let params = ModelParams::init(&config, seed).unwrap();
        // Cell states stay in (-1, 1), so the readout is bounded by its weights.
        let hidden = &params.readout_hidden;
        let out = &params.readout_out;
        let selu_max = dwnet::autodiff::SELU_SCALE;
        let bound_hidden: Vec<f64> = (0..config.readout_hidden)
            .map(|j| {
                let w: f64 = (0..hidden.weight.rows()).map(|i| hidden.weight.get(i, j).abs()).sum();
                selu_max * (w + hidden.bias.get(0, j).abs()).max(dwnet::autodiff::SELU_ALPHA)
            })
            .collect();
        let bound: f64 = out.bias.item().abs()
            + bound_hidden.iter().enumerate().map(|(j, b)| b * out.weight.get(j, 0).abs()).sum::<f64>();
        for y in predictions(&s, &params, &config) {
            prop_assert!(y.is_finite());
            prop_assert!(y.abs() <= bound, "{} exceeds {}", y, bound);
        }
    }
}

#[test]
fn mc_dropout_mean_approaches_eval_output() {
    let s = random_sample(5);
    let config = small_model();
    let params = ModelParams::init(&config, 5).unwrap();
    let (x_p, x_l) = features(&s);
    let g = graph(&s);
    let eval = forward(&g, &x_p, &x_l, &params, &config, Mode::Eval, 0).unwrap();
    let mc = mc_predict(&g, &x_p, &x_l, &params, &config, 4000, 9).unwrap();
    for (e, m) in eval.iter().zip(&mc) {
        assert!(m.std > 0.0);
        // Inverted dropout keeps the expected readout equal to the eval pass.
        let stderr = m.std / (4000f64).sqrt();
        assert!((m.mean - e).abs() < 5.0 * stderr + 1e-9, "mean {} vs eval {e}", m.mean);
    }
}

#[test]
fn relabeling_keeps_labels_attached_to_paths() {
    let s = random_sample(3);
    let mut rng = rand::SeedableRng::seed_from_u64(4);
    let order = shuffled(s.routing.n_paths(), &mut rng);
    let moved = relabel(&s, &(0..s.topology.n_links()).collect::<Vec<_>>(), &order);
    assert_eq!(check_oracle(&moved), Ok(()));
}
