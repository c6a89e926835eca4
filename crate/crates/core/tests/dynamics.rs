use khm_core::kernel::gram;
use khm_core::pattern::flip_noise;
use khm_core::training::TrainConfig;
use khm_core::{generate_patterns, klr_train, DualWeights, Network, NetworkState, PatternSet, RecallStatus, RngSeed};
use ndarray::Array2;
use rand::Rng;

fn naive_potential(ps: &PatternSet, a: &Array2<f64>, s: &[i8], gamma: f64) -> Vec<f64> {
    (0..ps.n())
        .map(|i| {
            (0..ps.p())
                .map(|mu| {
                    let d = ps.row(mu).iter().zip(s).filter(|(x, y)| x != y).count();
                    a[[mu, i]] * (-4.0 * gamma * d as f64).exp()
                })
                .sum()
        })
        .collect()
}

fn random_weights(p: usize, n: usize, seed: u64) -> DualWeights {
    let mut rng = RngSeed::new(seed).stream(0, "weights");
    DualWeights::new(Array2::from_shape_fn((p, n), |_| rng.random_range(-2.0..2.0))).unwrap()
}

fn random_state(n: usize, rng: &mut impl Rng) -> NetworkState {
    NetworkState::new((0..n).map(|_| if rng.random::<bool>() { 1 } else { -1 }).collect()).unwrap()
}

#[test]
fn potential_matches_naive_sum() {
    let ps = generate_patterns(30, 12, &mut RngSeed::new(1).stream(0, "patterns")).unwrap();
    let ctx = gram(&ps, 0.04).unwrap();
    let w = random_weights(12, 30, 2);
    let net = Network::new(&ps, &ctx, &w).unwrap();
    let mut rng = RngSeed::new(3).stream(0, "states");
    for _ in 0..20 {
        let s = random_state(30, &mut rng);
        let h = net.potential(&s).unwrap();
        let want = naive_potential(&ps, w.alpha(), s.as_slice(), 0.04);
        for (a, b) in h.iter().zip(&want) {
            assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0));
        }
    }
}

#[test]
fn potential_is_linear_in_weights() {
    let ps = generate_patterns(25, 10, &mut RngSeed::new(4).stream(0, "patterns")).unwrap();
    let ctx = gram(&ps, 0.05).unwrap();
    let a = random_weights(10, 25, 5);
    let b = random_weights(10, 25, 6);
    let (ca, cb) = (0.7, -1.3);
    let combo = DualWeights::new(a.alpha() * ca + b.alpha() * cb).unwrap();
    let s = random_state(25, &mut RngSeed::new(7).stream(0, "s"));
    let ha = Network::new(&ps, &ctx, &a).unwrap().potential(&s).unwrap();
    let hb = Network::new(&ps, &ctx, &b).unwrap().potential(&s).unwrap();
    let hc = Network::new(&ps, &ctx, &combo).unwrap().potential(&s).unwrap();
    for i in 0..25 {
        assert!((hc[i] - (ca * ha[i] + cb * hb[i])).abs() <= 1e-12);
    }
}

#[test]
fn zero_weights_drive_every_state_to_all_positive() {
    let ps = generate_patterns(16, 4, &mut RngSeed::new(8).stream(0, "patterns")).unwrap();
    let ctx = gram(&ps, 0.1).unwrap();
    let w = DualWeights::zeros(4, 16).unwrap();
    let net = Network::new(&ps, &ctx, &w).unwrap();
    let s = random_state(16, &mut RngSeed::new(9).stream(0, "s"));
    assert_eq!(net.update_sync(&s).unwrap(), NetworkState::all_positive(16));
    let out = net.recall(&s, 100).unwrap();
    assert_eq!(out.status, RecallStatus::FixedPoint);
    assert_eq!(out.state, NetworkState::all_positive(16));
}

#[test]
fn single_pattern_with_unit_weight_is_an_attractor() {
    let ps = generate_patterns(40, 1, &mut RngSeed::new(10).stream(0, "patterns")).unwrap();
    let ctx = gram(&ps, 0.02).unwrap();
    let w = DualWeights::new(ps.to_f64()).unwrap();
    let net = Network::new(&ps, &ctx, &w).unwrap();
    let target = ps.state(0);
    assert_eq!(net.update_sync(&target).unwrap(), target);
    let mut rng = RngSeed::new(11).stream(0, "noise");
    let cue = flip_noise(&target, 0.3, &mut rng).unwrap();
    let out = net.recall(&cue, 100).unwrap();
    assert_eq!(out.state, target);
    assert_eq!(out.status, RecallStatus::FixedPoint);
}

#[test]
fn trained_ridge_model_stores_and_corrects() {
    let ps = generate_patterns(100, 300, &mut RngSeed::new(1).stream(0, "patterns")).unwrap();
    let ctx = gram(&ps, 0.03).unwrap();
    let w = klr_train(&ps, &ctx, &TrainConfig::l2(0.03)).unwrap().require_converged().unwrap();
    let net = Network::new(&ps, &ctx, &w).unwrap();
    for mu in 0..300 {
        let s = ps.state(mu);
        assert_eq!(net.update_sync(&s).unwrap(), s, "pattern {mu}");
    }
    let mut rng = RngSeed::new(12).stream(0, "noise");
    for mu in (0..300).step_by(15) {
        let cue = flip_noise(&ps.state(mu), 0.2, &mut rng).unwrap();
        let out = net.recall(&cue, 100).unwrap();
        assert!(out.state.hamming(ps.row(mu).as_slice().unwrap()) <= 15, "pattern {mu}");
    }
}

#[test]
fn recall_returns_at_most_max_iters() {
    let ps = generate_patterns(30, 40, &mut RngSeed::new(13).stream(0, "patterns")).unwrap();
    let ctx = gram(&ps, 0.01).unwrap();
    let w = random_weights(40, 30, 14);
    let net = Network::new(&ps, &ctx, &w).unwrap();
    let mut rng = RngSeed::new(15).stream(0, "s");
    for _ in 0..50 {
        let s = random_state(30, &mut rng);
        let out = net.recall(&s, 3).unwrap();
        assert!(out.iterations <= 3);
        if out.status == RecallStatus::FixedPoint {
            assert_eq!(net.update_sync(&out.state).unwrap(), out.state);
        }
    }
    assert!(net.recall(&random_state(30, &mut rng), 0).is_err());
    assert!(net.recall(&NetworkState::all_positive(29), 10).is_err());
}
