//! Stored patterns, network states and the dual-weight matrix.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use rand::seq::index;
use rand::{Rng, RngCore};

use crate::error::{invalid, Error, Result};
use crate::kernel::PackedPatterns;

/// Upper bound on `P * N`; larger requests are rejected before allocating.
pub const MAX_ENTRIES: usize = 1 << 32;

/// `P` bipolar patterns of dimension `N`, stored row-major (row = pattern).
#[derive(Debug, Clone, PartialEq)]
pub struct PatternSet {
    data: Array2<i8>,
    packed: PackedPatterns,
}

impl PatternSet {
    pub fn new(data: Array2<i8>) -> Result<Self> {
        let (p, n) = data.dim();
        check_dims(n, p)?;
        for ((row, col), &v) in data.indexed_iter() {
            if v != 1 && v != -1 {
                return Err(Error::NotBipolar {
                    row,
                    col,
                    value: v as i64,
                });
            }
        }
        let packed = PackedPatterns::pack(data.view());
        Ok(Self { data, packed })
    }

    pub fn from_rows(rows: &[Vec<i8>]) -> Result<Self> {
        let p = rows.len();
        let n = rows.first().map_or(0, Vec::len);
        check_dims(n, p)?;
        let mut flat = Vec::with_capacity(p * n);
        for row in rows {
            if row.len() != n {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    found: row.len(),
                });
            }
            flat.extend_from_slice(row);
        }
        let data = Array2::from_shape_vec((p, n), flat)
            .map_err(|e| Error::InvalidDimensions(e.to_string()))?;
        Self::new(data)
    }

    /// Number of stored patterns.
    pub fn p(&self) -> usize {
        self.data.nrows()
    }

    /// Neuron count.
    pub fn n(&self) -> usize {
        self.data.ncols()
    }

    pub fn load(&self) -> f64 {
        self.p() as f64 / self.n() as f64
    }

    pub fn data(&self) -> ArrayView2<'_, i8> {
        self.data.view()
    }

    pub fn row(&self, mu: usize) -> ArrayView1<'_, i8> {
        self.data.row(mu)
    }

    pub fn packed(&self) -> &PackedPatterns {
        &self.packed
    }

    pub fn to_f64(&self) -> Array2<f64> {
        self.data.mapv(f64::from)
    }

    pub fn state(&self, mu: usize) -> NetworkState {
        NetworkState {
            s: self.data.row(mu).to_vec(),
        }
    }

    /// The pattern set with every entry sign-flipped.
    pub fn negated(&self) -> Self {
        let data = self.data.mapv(|v| -v);
        let packed = PackedPatterns::pack(data.view());
        Self { data, packed }
    }

    /// Reorders columns (neurons) so that new column `c` is old column `order[c]`.
    pub fn permute_columns(&self, order: &[usize]) -> Result<Self> {
        if order.len() != self.n() {
            return Err(Error::DimensionMismatch {
                expected: self.n(),
                found: order.len(),
            });
        }
        let data = Array2::from_shape_fn(self.data.dim(), |(r, c)| self.data[[r, order[c]]]);
        Self::new(data)
    }
}

pub fn check_dims(n: usize, p: usize) -> Result<()> {
    if n == 0 || p == 0 {
        return Err(Error::InvalidDimensions(format!(
            "need n >= 1 and p >= 1, got n = {n}, p = {p}"
        )));
    }
    match n.checked_mul(p) {
        Some(total) if total <= MAX_ENTRIES => Ok(()),
        _ => Err(Error::InvalidDimensions(format!(
            "{p} x {n} exceeds the {MAX_ENTRIES}-entry limit"
        ))),
    }
}

/// A bipolar network state `s ∈ {-1, +1}^N`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct NetworkState {
    s: Vec<i8>,
}

impl NetworkState {
    pub fn new(s: Vec<i8>) -> Result<Self> {
        if s.is_empty() {
            return Err(Error::InvalidDimensions("empty state".into()));
        }
        if let Some((col, &v)) = s.iter().enumerate().find(|(_, &v)| v != 1 && v != -1) {
            return Err(Error::NotBipolar {
                row: 0,
                col,
                value: v as i64,
            });
        }
        Ok(Self { s })
    }

    /// Builds a state from real values with `sign(0) = +1`.
    pub fn from_signs(h: ArrayView1<'_, f64>) -> Self {
        Self {
            s: h.iter().map(|&x| if x >= 0.0 { 1 } else { -1 }).collect(),
        }
    }

    pub fn all_positive(n: usize) -> Self {
        Self { s: vec![1; n] }
    }

    pub fn len(&self) -> usize {
        self.s.len()
    }

    pub fn is_empty(&self) -> bool {
        self.s.is_empty()
    }

    pub fn as_slice(&self) -> &[i8] {
        &self.s
    }

    pub fn to_f64(&self) -> Array1<f64> {
        self.s.iter().map(|&v| f64::from(v)).collect()
    }

    pub fn hamming(&self, other: &[i8]) -> usize {
        self.s.iter().zip(other).filter(|(a, b)| a != b).count()
    }

    pub fn negated(&self) -> Self {
        Self {
            s: self.s.iter().map(|v| -v).collect(),
        }
    }

    pub fn flip(&mut self, i: usize) {
        self.s[i] = -self.s[i];
    }
}

/// The `P x N` matrix of dual variables `alpha[mu][i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DualWeights {
    alpha: Array2<f64>,
}

impl DualWeights {
    pub fn new(alpha: Array2<f64>) -> Result<Self> {
        let (p, n) = alpha.dim();
        check_dims(n, p)?;
        if let Some(((row, col), _)) = alpha.indexed_iter().find(|(_, v)| !v.is_finite()) {
            return Err(Error::NonFinite { row, col });
        }
        let alpha = if alpha.is_standard_layout() {
            alpha
        } else {
            alpha.as_standard_layout().into_owned()
        };
        Ok(Self { alpha })
    }

    pub fn zeros(p: usize, n: usize) -> Result<Self> {
        check_dims(n, p)?;
        Ok(Self {
            alpha: Array2::zeros((p, n)),
        })
    }

    pub fn p(&self) -> usize {
        self.alpha.nrows()
    }

    pub fn n(&self) -> usize {
        self.alpha.ncols()
    }

    pub fn alpha(&self) -> &Array2<f64> {
        &self.alpha
    }

    pub fn into_inner(self) -> Array2<f64> {
        self.alpha
    }

    pub fn len(&self) -> usize {
        self.alpha.len()
    }

    pub fn is_empty(&self) -> bool {
        self.alpha.is_empty()
    }

    pub fn negated(&self) -> Self {
        Self {
            alpha: -&self.alpha,
        }
    }

    /// Checks that these weights were trained on `patterns`.
    pub fn check_matches(&self, patterns: &PatternSet) -> Result<()> {
        if self.p() != patterns.p() {
            return Err(Error::DimensionMismatch {
                expected: patterns.p(),
                found: self.p(),
            });
        }
        if self.n() != patterns.n() {
            return Err(Error::DimensionMismatch {
                expected: patterns.n(),
                found: self.n(),
            });
        }
        Ok(())
    }

    /// Values in row-major order.
    pub fn values(&self) -> impl Iterator<Item = f64> + '_ {
        self.alpha.iter().copied()
    }
}

/// Draws `p` i.i.d. uniform bipolar patterns of dimension `n`.
pub fn generate_patterns<R: RngCore + ?Sized>(n: usize, p: usize, rng: &mut R) -> Result<PatternSet> {
    check_dims(n, p)?;
    let mut flat = Vec::with_capacity(n * p);
    for _ in 0..p {
        let mut remaining = n;
        while remaining > 0 {
            let word = rng.next_u64();
            let take = remaining.min(64);
            flat.extend((0..take).map(|b| if word >> b & 1 == 1 { 1i8 } else { -1i8 }));
            remaining -= take;
        }
    }
    let data = Array2::from_shape_vec((p, n), flat).expect("shape checked above");
    PatternSet::new(data)
}

/// Flips exactly `round(rho * N)` distinct positions chosen uniformly.
pub fn flip_noise<R: Rng + ?Sized>(
    pattern: &NetworkState,
    rho: f64,
    rng: &mut R,
) -> Result<NetworkState> {
    if !(0.0..=1.0).contains(&rho) {
        return Err(invalid("rho", format!("must lie in [0, 1], got {rho}")));
    }
    let n = pattern.len();
    let count = flip_count(n, rho);
    let mut out = pattern.clone();
    for i in index::sample(rng, n, count) {
        out.flip(i);
    }
    Ok(out)
}

/// Number of positions `flip_noise` changes.
pub fn flip_count(n: usize, rho: f64) -> usize {
    ((rho * n as f64).round() as usize).min(n)
}

#[cfg(test)]
mod tests {
    use ndarray::array;

    use super::*;
    use crate::rng::RngSeed;

    #[test]
    fn rejects_non_bipolar_entries() {
        let err = PatternSet::new(array![[1, 0, -1]]).unwrap_err();
        assert!(matches!(err, Error::NotBipolar { col: 1, .. }));
        assert!(NetworkState::new(vec![1, 2]).is_err());
    }

    #[test]
    fn rejects_bad_dimensions() {
        let mut rng = RngSeed::new(1).stream(0, "t");
        assert!(generate_patterns(0, 3, &mut rng).is_err());
        assert!(generate_patterns(3, 0, &mut rng).is_err());
        assert!(generate_patterns(usize::MAX, 2, &mut rng).is_err());
        assert!(generate_patterns(1 << 20, 1 << 20, &mut rng).is_err());
    }

    #[test]
    fn small_pattern_set_is_bipolar() {
        let mut rng = RngSeed::new(1).stream(0, "t");
        let ps = generate_patterns(4, 1, &mut rng).unwrap();
        assert_eq!(ps.data().dim(), (1, 4));
        assert!(ps.data().iter().all(|&v| v == 1 || v == -1));
    }

    #[test]
    fn generation_is_deterministic() {
        let seed = RngSeed::new(99);
        let a = generate_patterns(70, 9, &mut seed.stream(2, "patterns")).unwrap();
        let b = generate_patterns(70, 9, &mut seed.stream(2, "patterns")).unwrap();
        assert_eq!(a.data().as_slice().unwrap(), b.data().as_slice().unwrap());
    }

    #[test]
    fn entries_are_balanced() {
        let mut rng = RngSeed::new(5).stream(0, "patterns");
        let ps = generate_patterns(100, 300, &mut rng).unwrap();
        let sum: i64 = ps.data().iter().map(|&v| v as i64).sum();
        let mean = sum as f64 / 30_000.0;
        assert!(mean.abs() <= 0.02, "mean {mean}");
    }

    #[test]
    fn flip_noise_edge_cases() {
        let mut rng = RngSeed::new(3).stream(0, "noise");
        let ps = generate_patterns(100, 1, &mut rng).unwrap();
        let s = ps.state(0);
        assert_eq!(flip_noise(&s, 0.0, &mut rng).unwrap(), s);
        assert_eq!(flip_noise(&s, 1.0, &mut rng).unwrap(), s.negated());
        let noisy = flip_noise(&s, 0.2, &mut rng).unwrap();
        assert_eq!(noisy.hamming(s.as_slice()), 20);
        assert!(flip_noise(&s, -0.1, &mut rng).is_err());
        assert!(flip_noise(&s, 1.5, &mut rng).is_err());
    }
}
