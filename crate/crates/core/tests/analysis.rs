use khm_core::analysis::{evenly_spaced_targets, influence_of, walsh_influence_targets};
use khm_core::kernel::gram;
use khm_core::training::TrainConfig;
use khm_core::{
    bimodality_stats, fit_power_law, generate_patterns, gini, klr_train, walsh_influence, DualWeights, Execution,
    Network, RngSeed,
};
use ndarray::Array2;
use proptest::prelude::*;
use rand::Rng;
use rand_distr::{Distribution, Normal};

fn exhaustive_influence(f: impl Fn(&[i8]) -> f64, n: usize) -> Vec<f64> {
    let mut counts = vec![0usize; n];
    for code in 0u32..(1 << n) {
        let s: Vec<i8> = (0..n).map(|i| if code >> i & 1 == 1 { 1 } else { -1 }).collect();
        let base = f(&s) >= 0.0;
        for (i, c) in counts.iter_mut().enumerate() {
            let mut t = s.clone();
            t[i] = -t[i];
            if (f(&t) >= 0.0) != base {
                *c += 1;
            }
        }
    }
    counts.into_iter().map(|c| c as f64 / (1u32 << n) as f64).collect()
}

#[test]
fn walsh_estimates_match_exhaustive_enumeration() {
    let n = 10;
    let ps = generate_patterns(n, 12, &mut RngSeed::new(1).stream(0, "patterns")).unwrap();
    let ctx = gram(&ps, 0.1).unwrap();
    let w = klr_train(&ps, &ctx, &TrainConfig::l2(1e-3)).unwrap().weights;
    let net = Network::new(&ps, &ctx, &w).unwrap();
    let target = 3;
    let exact = exhaustive_influence(|s| net.potential(&khm_core::NetworkState::new(s.to_vec()).unwrap()).unwrap()[target], n);
    let est = walsh_influence(&net, target, 20_000, &mut RngSeed::new(2).stream(0, "influence")).unwrap();
    for (i, (&e, &x)) in est.influence.iter().zip(&exact).enumerate() {
        let se = (x * (1.0 - x) / 20_000.0).sqrt();
        assert!((e - x).abs() <= 4.0 * se + 1e-3, "coordinate {i}: {e} vs {x}");
    }
}

#[test]
fn batched_influence_agrees_with_generic_hook() {
    let ps = generate_patterns(20, 30, &mut RngSeed::new(3).stream(0, "patterns")).unwrap();
    let ctx = gram(&ps, 0.05).unwrap();
    let mut rng = RngSeed::new(4).stream(0, "w");
    let w = DualWeights::new(Array2::from_shape_fn((30, 20), |_| rng.random_range(-1.0..1.0))).unwrap();
    let net = Network::new(&ps, &ctx, &w).unwrap();
    let target = 7;
    let batched = walsh_influence(&net, target, 500, &mut RngSeed::new(5).stream(0, "i")).unwrap();
    let generic = influence_of(
        |s| net.potential(&khm_core::NetworkState::new(s.to_vec()).unwrap()).unwrap()[target],
        20,
        500,
        &mut RngSeed::new(5).stream(0, "i"),
    )
    .unwrap();
    assert_eq!(batched.influence, generic);
}

#[test]
fn influence_is_reproducible_across_execution_modes() {
    let ps = generate_patterns(30, 60, &mut RngSeed::new(6).stream(0, "patterns")).unwrap();
    let ctx = gram(&ps, 0.03).unwrap();
    let w = klr_train(&ps, &ctx, &TrainConfig::l2(0.006)).unwrap().weights;
    let net = Network::new(&ps, &ctx, &w).unwrap();
    let targets = evenly_spaced_targets(30, 4);
    let a = walsh_influence_targets(&net, &targets, 300, &mut RngSeed::new(7).stream(0, "i"), Execution::Sequential).unwrap();
    let b = walsh_influence_targets(&net, &targets, 300, &mut RngSeed::new(7).stream(0, "i"), Execution::Parallel).unwrap();
    assert_eq!(a, b);
    assert!(walsh_influence_targets(&net, &[30], 10, &mut RngSeed::new(7).stream(0, "i"), Execution::Sequential).is_err());
    assert!(walsh_influence_targets(&net, &targets, 0, &mut RngSeed::new(7).stream(0, "i"), Execution::Sequential).is_err());
}

#[test]
fn gini_known_values() {
    assert_eq!(gini(&[1.0; 8]).unwrap(), 0.0);
    let mut one_hot = vec![0.0; 10];
    one_hot[4] = 3.0;
    assert!((gini(&one_hot).unwrap() - 0.9).abs() <= 1e-12);
    assert!(gini(&[]).is_err());
    assert!(gini(&[0.0, 0.0]).is_err());
    assert!(gini(&[1.0, -1.0]).is_err());
}

fn naive_gini(x: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let s: f64 = x.iter().flat_map(|a| x.iter().map(move |b| (a - b).abs())).sum();
    s / (2.0 * n * n * mean)
}

proptest! {
    #[test]
    fn gini_matches_pairwise_form_and_is_scale_invariant(
        x in proptest::collection::vec(0.0f64..10.0, 1..60),
        c in 0.01f64..100.0,
    ) {
        prop_assume!(x.iter().sum::<f64>() > 0.0);
        let g = gini(&x).unwrap();
        prop_assert!((0.0..=1.0).contains(&g));
        prop_assert!((g - naive_gini(&x)).abs() <= 1e-10);
        let scaled: Vec<f64> = x.iter().map(|v| v * c).collect();
        prop_assert!((gini(&scaled).unwrap() - g).abs() <= 1e-10);
    }

    #[test]
    fn planted_power_laws_are_recovered(beta in -3.0f64..3.0, a in 0.01f64..100.0) {
        let x: Vec<f64> = (1..=12).map(|i| 1.7f64.powi(i) * 1e-4).collect();
        let y: Vec<f64> = x.iter().map(|v| a * v.powf(beta)).collect();
        let fit = fit_power_law(&x, &y).unwrap();
        prop_assert!((fit.slope - beta).abs() <= 1e-9);
        prop_assert!((fit.intercept - a.ln()).abs() <= 1e-8);
        prop_assert!(fit.r_squared >= 1.0 - 1e-9 || beta.abs() < 1e-12);
        prop_assert_eq!(fit.points_used, 12);
    }
}

#[test]
fn power_law_fit_skips_nonpositive_points() {
    let x = [1.0, 2.0, 4.0, 8.0, 0.0, 3.0];
    let y = [2.0, 8.0, 32.0, 128.0, 5.0, -1.0];
    let fit = fit_power_law(&x, &y).unwrap();
    assert_eq!(fit.points_used, 4);
    assert!((fit.slope - 2.0).abs() <= 1e-12);
    assert!(fit_power_law(&[1.0, 2.0], &[1.0, -2.0]).is_err());
    assert!(fit_power_law(&[2.0, 2.0, 2.0], &[1.0, 3.0, 5.0]).is_err());
}

#[test]
fn normal_samples_are_not_bimodal() {
    let mut rng = RngSeed::new(8).stream(0, "normal");
    let dist = Normal::new(0.0, 1.0).unwrap();
    let values: Vec<f64> = (0..20_000).map(|_| dist.sample(&mut rng)).collect();
    let stats = bimodality_stats(&values, 101).unwrap();
    assert!(!stats.is_bimodal(), "{stats:?}");
}

#[test]
fn separated_clusters_are_bimodal() {
    let mut rng = RngSeed::new(9).stream(0, "mix");
    let dist = Normal::new(0.0, 0.2).unwrap();
    let values: Vec<f64> = (0..20_000)
        .map(|i| dist.sample(&mut rng) + if i % 2 == 0 { -2.0 } else { 2.0 })
        .collect();
    let stats = bimodality_stats(&values, 101).unwrap();
    assert!(stats.is_bimodal() && stats.modes_opposite_sign(), "{stats:?}");
    assert!((stats.mode_low + 2.0).abs() < 0.2 && (stats.mode_high - 2.0).abs() < 0.2);
    assert!(stats.central_mass < 0.01);
    assert!(bimodality_stats(&values, 9).is_err());
}
