use khm_core::kernel::{gram, kernel_vector, packed_hamming, rbf, BitVector, KernelTable};
use khm_core::{generate_patterns, NetworkState, PatternSet, RngSeed};
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::Rng;

fn naive_kernel(x: &[i8], y: &[i8], gamma: f64) -> f64 {
    let sq: f64 = x.iter().zip(y).map(|(&a, &b)| (f64::from(a) - f64::from(b)).powi(2)).sum();
    (-gamma * sq).exp()
}

fn rows(ps: &PatternSet) -> Vec<Vec<i8>> {
    (0..ps.p()).map(|mu| ps.row(mu).to_vec()).collect()
}

#[test]
fn gram_matches_naive_double_loop() {
    let ps = generate_patterns(20, 5, &mut RngSeed::new(1).stream(0, "patterns")).unwrap();
    let r = rows(&ps);
    for gamma in [0.005, 0.05, 0.3] {
        let ctx = gram(&ps, gamma).unwrap();
        for mu in 0..5 {
            for nu in 0..5 {
                let want = naive_kernel(&r[mu], &r[nu], gamma);
                assert!((ctx.gram()[[mu, nu]] - want).abs() <= 1e-12);
            }
        }
    }
}

#[test]
fn kernel_vector_matches_naive() {
    let mut rng = RngSeed::new(2).stream(0, "kv");
    let ps = generate_patterns(77, 9, &mut rng).unwrap();
    let s = NetworkState::new((0..77).map(|_| if rng.random::<bool>() { 1 } else { -1 }).collect()).unwrap();
    let k = kernel_vector(&s, &ps, 0.02).unwrap();
    for (mu, row) in rows(&ps).iter().enumerate() {
        assert!((k[mu] - naive_kernel(s.as_slice(), row, 0.02)).abs() <= 1e-12);
    }
}

#[test]
fn gram_is_positive_semidefinite() {
    for (seed, gamma) in [(3u64, 0.005), (4, 0.03), (5, 0.2)] {
        let ps = generate_patterns(40, 60, &mut RngSeed::new(seed).stream(0, "patterns")).unwrap();
        let ctx = gram(&ps, gamma).unwrap();
        let g = ctx.gram();
        let m = DMatrix::from_fn(60, 60, |i, j| g[[i, j]]);
        let min = m.symmetric_eigenvalues().min();
        assert!(min >= -1e-10, "gamma {gamma}: min eigenvalue {min}");
        let largest = m.symmetric_eigenvalues().max();
        let est = ctx.largest_eigenvalue();
        // a Rayleigh quotient never overshoots; clustered spectra converge slowly
        assert!(est <= largest * (1.0 + 1e-12) && est >= largest * (1.0 - 1e-3), "gamma {gamma}: {est} vs {largest}");
    }
}

#[test]
fn packed_hamming_matches_unpacked_on_random_pairs() {
    let mut rng = RngSeed::new(6).stream(0, "hamming");
    for _ in 0..10_000 {
        let n = rng.random_range(1..=256);
        let a: Vec<i8> = (0..n).map(|_| if rng.random::<bool>() { 1 } else { -1 }).collect();
        let b: Vec<i8> = (0..n).map(|_| if rng.random::<bool>() { 1 } else { -1 }).collect();
        let want = a.iter().zip(&b).filter(|(x, y)| x != y).count();
        let got = packed_hamming(&BitVector::from_signs(a.iter().copied()), &BitVector::from_signs(b.iter().copied())).unwrap();
        assert_eq!(got, want, "n = {n}");
    }
}

#[test]
fn dimension_and_gamma_errors() {
    assert!(rbf(&[1, -1], &[1], 0.1).is_err());
    assert!(rbf(&[1], &[1], 0.0).is_err());
    assert!(rbf(&[1], &[1], f64::NAN).is_err());
    assert!(KernelTable::new(-1.0, 4).is_err());
    let a = BitVector::from_signs([1, -1, 1]);
    let b = BitVector::from_signs([1, -1]);
    assert!(packed_hamming(&a, &b).is_err());
}

fn bipolar(n: usize) -> impl Strategy<Value = Vec<i8>> {
    proptest::collection::vec(prop_oneof![Just(1i8), Just(-1i8)], n)
}

proptest! {
    #[test]
    fn kernel_is_bounded_symmetric_and_one_on_diagonal(
        (x, y) in (1usize..130).prop_flat_map(|n| (bipolar(n), bipolar(n))),
        gamma in 1e-4f64..2.0,
    ) {
        let k = rbf(&x, &y, gamma).unwrap();
        prop_assert!(k > 0.0 && k <= 1.0);
        prop_assert_eq!(k, rbf(&y, &x, gamma).unwrap());
        prop_assert_eq!(rbf(&x, &x, gamma).unwrap(), 1.0);
        prop_assert!((k - naive_kernel(&x, &y, gamma)).abs() <= 1e-12);
    }

    #[test]
    fn kernel_decreases_with_distance(n in 2usize..200, gamma in 1e-4f64..1.0) {
        let table = KernelTable::new(gamma, n).unwrap();
        for d in 0..n {
            prop_assert!(table.get(d + 1) <= table.get(d));
        }
    }

    #[test]
    fn complement_distance_is_n_minus_d((x, y) in (1usize..200).prop_flat_map(|n| (bipolar(n), bipolar(n)))) {
        let a = BitVector::from_signs(x.iter().copied());
        let b = BitVector::from_signs(y.iter().copied());
        let d = packed_hamming(&a, &b).unwrap();
        prop_assert_eq!(packed_hamming(&a, &b.complement()).unwrap(), x.len() - d);
        prop_assert_eq!(a.unpack(), x);
    }
}
