use khm_core::kernel::gram;
use khm_core::training::TrainConfig;
use khm_core::{
    bit_accuracy, generate_patterns, klr_train, recall_accuracy, stability_margin, DualWeights, Execution, Network,
    PatternSet, RngSeed,
};
use ndarray::Array2;
use rand::Rng;

fn trained(seed: u64, n: usize, p: usize, gamma: f64) -> (PatternSet, khm_core::KernelContext, DualWeights) {
    let ps = generate_patterns(n, p, &mut RngSeed::new(seed).stream(0, "patterns")).unwrap();
    let ctx = gram(&ps, gamma).unwrap();
    let w = klr_train(&ps, &ctx, &TrainConfig::l2(1e-4 * p as f64)).unwrap().weights;
    (ps, ctx, w)
}

fn naive_scores(ps: &PatternSet, k: &Array2<f64>, a: &Array2<f64>) -> (f64, f64) {
    let (p, n) = (ps.p(), ps.n());
    let mut correct = 0usize;
    let mut margin = 0.0;
    for nu in 0..p {
        for i in 0..n {
            let h: f64 = (0..p).map(|mu| a[[mu, i]] * k[[nu, mu]]).sum();
            let x = f64::from(ps.row(nu)[i]);
            let sign = if h >= 0.0 { 1.0 } else { -1.0 };
            if sign == x {
                correct += 1;
            }
            margin += x * h;
        }
    }
    let total = (p * n) as f64;
    (correct as f64 / total, margin / total)
}

#[test]
fn accuracy_and_margin_match_naive_loops() {
    let ps = generate_patterns(30, 50, &mut RngSeed::new(1).stream(0, "patterns")).unwrap();
    let ctx = gram(&ps, 0.02).unwrap();
    let mut rng = RngSeed::new(2).stream(0, "w");
    let w = DualWeights::new(Array2::from_shape_fn((50, 30), |_| rng.random_range(-1.0..1.0))).unwrap();
    let net = Network::new(&ps, &ctx, &w).unwrap();
    let (acc, margin) = naive_scores(&ps, ctx.gram(), w.alpha());
    assert_eq!(bit_accuracy(&net), acc);
    assert!((stability_margin(&net) - margin).abs() <= 1e-12);
}

#[test]
fn negated_weights_complement_accuracy() {
    let (ps, ctx, w) = trained(3, 40, 100, 0.01);
    let neg = w.negated();
    let a = bit_accuracy(&Network::new(&ps, &ctx, &w).unwrap());
    let b = bit_accuracy(&Network::new(&ps, &ctx, &neg).unwrap());
    // potentials are never exactly zero for trained weights, so sign(0) never matters
    assert!((a + b - 1.0).abs() <= 1e-12);
}

#[test]
fn metrics_are_invariant_to_neuron_order() {
    let (ps, ctx, w) = trained(4, 30, 60, 0.02);
    let order: Vec<usize> = (0..30).map(|c| (c * 7) % 30).collect();
    let permuted = ps.permute_columns(&order).unwrap();
    let pctx = gram(&permuted, 0.02).unwrap();
    let pw = DualWeights::new(Array2::from_shape_fn((60, 30), |(mu, c)| w.alpha()[[mu, order[c]]])).unwrap();
    let a = Network::new(&ps, &ctx, &w).unwrap();
    let b = Network::new(&permuted, &pctx, &pw).unwrap();
    assert_eq!(bit_accuracy(&a), bit_accuracy(&b));
    assert!((stability_margin(&a) - stability_margin(&b)).abs() <= 1e-12);
}

#[test]
fn clean_cues_recall_perfectly_on_a_perfect_model() {
    let (ps, ctx, w) = trained(5, 100, 300, 0.03);
    let net = Network::new(&ps, &ctx, &w).unwrap();
    assert_eq!(bit_accuracy(&net), 1.0);
    let stats = recall_accuracy(&net, 0.0, 300, 100, &mut RngSeed::new(6).stream(0, "r"), Execution::default()).unwrap();
    assert_eq!(stats.mean, 1.0);
    assert_eq!(stats.std, 0.0);
    assert_eq!(stats.trials, 300);
}

#[test]
fn half_flipped_cues_recall_near_chance() {
    let (ps, ctx, w) = trained(7, 100, 300, 0.03);
    let net = Network::new(&ps, &ctx, &w).unwrap();
    let stats = recall_accuracy(&net, 0.5, 300, 100, &mut RngSeed::new(8).stream(0, "r"), Execution::default()).unwrap();
    assert!((0.4..=0.65).contains(&stats.mean), "mean {}", stats.mean);
}

#[test]
fn recall_is_identical_across_execution_modes() {
    let (ps, ctx, w) = trained(9, 60, 120, 0.03);
    let net = Network::new(&ps, &ctx, &w).unwrap();
    let a = recall_accuracy(&net, 0.25, 120, 100, &mut RngSeed::new(10).stream(0, "r"), Execution::Sequential).unwrap();
    let b = recall_accuracy(&net, 0.25, 120, 100, &mut RngSeed::new(10).stream(0, "r"), Execution::Parallel).unwrap();
    assert_eq!(a, b);
    assert!(recall_accuracy(&net, 0.2, 0, 100, &mut RngSeed::new(1).stream(0, "r"), Execution::Sequential).is_err());
    assert!(recall_accuracy(&net, 1.5, 5, 100, &mut RngSeed::new(1).stream(0, "r"), Execution::Sequential).is_err());
}
