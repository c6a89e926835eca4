//! RBF kernel over bipolar vectors with a bit-packed Hamming fast path.
//!
//! For `x, y ∈ {-1, +1}^N`, `‖x − y‖² = 4·d_H(x, y)`, so every kernel value
//! is `exp(−4γ·d)` for an integer distance `d ∈ [0, N]`. Distances are counted
//! with XOR + popcount on packed words and the exponentials are memoized per
//! distance, which makes the packed and naive paths agree bit for bit.

use ndarray::{Array1, Array2, ArrayView2};

use crate::error::{invalid, Error, Result};
use crate::pattern::{NetworkState, PatternSet};

const WORD_BITS: usize = 64;

/// Signs packed into machine words: bit `b` is set iff component `b` is `+1`.
/// Padding bits beyond `n` are always zero.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BitVector {
    n: usize,
    words: Vec<u64>,
}

impl BitVector {
    pub fn from_signs(signs: impl IntoIterator<Item = i8>) -> Self {
        let mut words = Vec::new();
        let mut n = 0;
        for (i, s) in signs.into_iter().enumerate() {
            if i % WORD_BITS == 0 {
                words.push(0);
            }
            if s > 0 {
                words[i / WORD_BITS] |= 1 << (i % WORD_BITS);
            }
            n = i + 1;
        }
        Self { n, words }
    }

    pub fn from_state(state: &NetworkState) -> Self {
        Self::from_signs(state.as_slice().iter().copied())
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn words(&self) -> &[u64] {
        &self.words
    }

    pub fn sign(&self, i: usize) -> i8 {
        if self.words[i / WORD_BITS] >> (i % WORD_BITS) & 1 == 1 {
            1
        } else {
            -1
        }
    }

    pub fn unpack(&self) -> Vec<i8> {
        (0..self.n).map(|i| self.sign(i)).collect()
    }

    /// Every logical bit inverted; padding stays zero.
    pub fn complement(&self) -> Self {
        let mut words: Vec<u64> = self.words.iter().map(|w| !w).collect();
        let tail = self.n % WORD_BITS;
        if tail != 0 {
            if let Some(last) = words.last_mut() {
                *last &= (1u64 << tail) - 1;
            }
        }
        Self { n: self.n, words }
    }

    #[inline]
    fn hamming_unchecked(&self, other: &Self) -> usize {
        self.words
            .iter()
            .zip(&other.words)
            .map(|(a, b)| (a ^ b).count_ones() as usize)
            .sum()
    }
}

/// Hamming distance between two packed vectors of equal logical length.
pub fn packed_hamming(a: &BitVector, b: &BitVector) -> Result<usize> {
    if a.n != b.n {
        return Err(Error::DimensionMismatch {
            expected: a.n,
            found: b.n,
        });
    }
    Ok(a.hamming_unchecked(b))
}

/// One [`BitVector`] per stored pattern.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PackedPatterns {
    n: usize,
    rows: Vec<BitVector>,
}

impl PackedPatterns {
    pub fn pack(data: ArrayView2<'_, i8>) -> Self {
        let rows = data
            .rows()
            .into_iter()
            .map(|r| BitVector::from_signs(r.iter().copied()))
            .collect();
        Self {
            n: data.ncols(),
            rows,
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn entry(&self, mu: usize) -> &BitVector {
        &self.rows[mu]
    }

    pub fn unpack(&self) -> Array2<i8> {
        let mut out = Array2::zeros((self.rows.len(), self.n));
        for (mu, row) in self.rows.iter().enumerate() {
            for i in 0..self.n {
                out[[mu, i]] = row.sign(i);
            }
        }
        out
    }

    /// Distances from `x` to every stored pattern.
    pub fn distances_to(&self, x: &BitVector) -> Result<Vec<u32>> {
        if x.n != self.n {
            return Err(Error::DimensionMismatch {
                expected: self.n,
                found: x.n,
            });
        }
        Ok(self
            .rows
            .iter()
            .map(|r| r.hamming_unchecked(x) as u32)
            .collect())
    }
}

/// `exp(−4γd)`; the single evaluation both kernel paths go through.
#[inline]
pub fn kernel_from_distance(gamma: f64, d: usize) -> f64 {
    (-4.0 * gamma * d as f64).exp()
}

fn check_gamma(gamma: f64) -> Result<()> {
    if gamma > 0.0 && gamma.is_finite() {
        Ok(())
    } else {
        Err(invalid("gamma", format!("must be positive and finite, got {gamma}")))
    }
}

/// `K(x, y) = exp(−γ‖x − y‖²)` for bipolar vectors.
pub fn rbf(x: &[i8], y: &[i8], gamma: f64) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch {
            expected: x.len(),
            found: y.len(),
        });
    }
    check_gamma(gamma)?;
    let d = x.iter().zip(y).filter(|(a, b)| a != b).count();
    Ok(kernel_from_distance(gamma, d))
}

/// Memoized `exp(−4γd)` for `d = 0..=n`.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelTable {
    gamma: f64,
    values: Vec<f64>,
}

impl KernelTable {
    pub fn new(gamma: f64, n: usize) -> Result<Self> {
        check_gamma(gamma)?;
        Ok(Self {
            gamma,
            values: (0..=n).map(|d| kernel_from_distance(gamma, d)).collect(),
        })
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    #[inline]
    pub fn get(&self, d: usize) -> f64 {
        self.values[d]
    }
}

/// Kernel locality plus the Gram matrix over the stored patterns.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelContext {
    gamma: f64,
    gram: Array2<f64>,
    table: KernelTable,
}

impl KernelContext {
    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn gram(&self) -> &Array2<f64> {
        &self.gram
    }

    pub fn table(&self) -> &KernelTable {
        &self.table
    }

    pub fn p(&self) -> usize {
        self.gram.nrows()
    }

    /// Kernel vector `K(s, ξ^μ)` for every stored pattern.
    pub fn kernel_vector(&self, s: &NetworkState, patterns: &PatternSet) -> Result<Array1<f64>> {
        self.check_patterns(patterns)?;
        let packed = patterns.packed();
        if s.len() != packed.n() {
            return Err(Error::DimensionMismatch {
                expected: packed.n(),
                found: s.len(),
            });
        }
        self.kernel_vector_packed(&BitVector::from_state(s), patterns)
    }

    pub fn kernel_vector_packed(&self, s: &BitVector, patterns: &PatternSet) -> Result<Array1<f64>> {
        let d = patterns.packed().distances_to(s)?;
        Ok(d.into_iter().map(|d| self.table.get(d as usize)).collect())
    }

    pub(crate) fn check_patterns(&self, patterns: &PatternSet) -> Result<()> {
        if patterns.p() != self.p() || self.table.values.len() != patterns.n() + 1 {
            return Err(Error::DimensionMismatch {
                expected: self.p(),
                found: patterns.p(),
            });
        }
        Ok(())
    }

    /// Largest eigenvalue of the Gram matrix by power iteration.
    pub fn largest_eigenvalue(&self) -> f64 {
        let p = self.p();
        let mut v = Array1::from_elem(p, 1.0 / (p as f64).sqrt());
        let mut lambda = 0.0;
        for _ in 0..1000 {
            let w = self.gram.dot(&v);
            let norm = w.dot(&w).sqrt();
            if norm == 0.0 {
                return 0.0;
            }
            let next = w.dot(&v);
            v = w / norm;
            if (next - lambda).abs() <= 1e-12 * next.abs() {
                return next;
            }
            lambda = next;
        }
        lambda
    }
}

/// Builds the Gram matrix `K[μ][ν] = K(ξ^μ, ξ^ν)`.
pub fn gram(patterns: &PatternSet, gamma: f64) -> Result<KernelContext> {
    let table = KernelTable::new(gamma, patterns.n())?;
    let packed = patterns.packed();
    let p = patterns.p();
    let mut gram = Array2::zeros((p, p));
    for mu in 0..p {
        gram[[mu, mu]] = table.get(0);
        for nu in mu + 1..p {
            let d = packed.entry(mu).hamming_unchecked(packed.entry(nu));
            let k = table.get(d);
            gram[[mu, nu]] = k;
            gram[[nu, mu]] = k;
        }
    }
    Ok(KernelContext { gamma, gram, table })
}

/// `K(s, ξ^μ)` for every stored pattern, without a prebuilt context.
pub fn kernel_vector(s: &NetworkState, patterns: &PatternSet, gamma: f64) -> Result<Array1<f64>> {
    let table = KernelTable::new(gamma, patterns.n())?;
    if s.len() != patterns.n() {
        return Err(Error::DimensionMismatch {
            expected: patterns.n(),
            found: s.len(),
        });
    }
    let d = patterns.packed().distances_to(&BitVector::from_state(s))?;
    Ok(d.into_iter().map(|d| table.get(d as usize)).collect())
}

#[cfg(test)]
mod tests {
    use approx::assert_relative_eq;

    use super::*;
    use crate::pattern::generate_patterns;
    use crate::rng::RngSeed;

    #[test]
    fn rbf_closed_form_values() {
        let x = [1, 1, -1, -1];
        assert_eq!(rbf(&x, &x, 0.3).unwrap(), 1.0);
        let y = [1, -1, 1, -1];
        assert_relative_eq!(rbf(&x, &y, 0.25).unwrap(), 0.135_335_283_236_612_7, epsilon = 1e-15);
        let a = [1i8; 10];
        let b = [-1i8; 10];
        assert_relative_eq!(rbf(&a, &b, 0.02).unwrap(), 0.449_328_964_117_221_6, epsilon = 1e-15);
    }

    #[test]
    fn rbf_rejects_bad_input() {
        assert!(rbf(&[1, 1], &[1], 0.1).is_err());
        assert!(rbf(&[1], &[1], 0.0).is_err());
        assert!(rbf(&[1], &[1], f64::NAN).is_err());
    }

    #[test]
    fn gram_of_single_and_duplicate_patterns() {
        let one = PatternSet::from_rows(&[vec![1, -1, 1]]).unwrap();
        assert_eq!(gram(&one, 0.1).unwrap().gram().as_slice().unwrap(), &[1.0]);
        let dup = PatternSet::from_rows(&[vec![1, -1, 1], vec![1, -1, 1]]).unwrap();
        assert!(gram(&dup, 0.1).unwrap().gram().iter().all(|&k| k == 1.0));
    }

    #[test]
    fn self_kernel_and_small_gamma_limit() {
        let mut rng = RngSeed::new(4).stream(0, "t");
        let ps = generate_patterns(30, 6, &mut rng).unwrap();
        let ctx = gram(&ps, 0.05).unwrap();
        let k = ctx.kernel_vector(&ps.state(0), &ps).unwrap();
        assert_eq!(k[0], 1.0);
        let tiny = kernel_vector(&ps.state(2), &ps, 1e-300).unwrap();
        assert!(tiny.iter().all(|&v| v == 1.0));
    }

    #[test]
    fn packed_hamming_word_boundaries() {
        let signs: Vec<i8> = (0..65).map(|i| if i % 3 == 0 { 1 } else { -1 }).collect();
        let a = BitVector::from_signs(signs.iter().copied());
        assert_eq!(packed_hamming(&a, &a).unwrap(), 0);
        assert_eq!(packed_hamming(&a, &a.complement()).unwrap(), 65);
        assert_eq!(a.complement().unpack(), signs.iter().map(|s| -s).collect::<Vec<_>>());
        let short = BitVector::from_signs([1i8; 64]);
        assert!(packed_hamming(&a, &short).is_err());
    }

    #[test]
    fn unpack_recovers_patterns() {
        let mut rng = RngSeed::new(8).stream(0, "t");
        let ps = generate_patterns(130, 5, &mut rng).unwrap();
        assert_eq!(ps.packed().unpack(), ps.data());
    }

    #[test]
    fn power_iteration_matches_identity() {
        let ps = PatternSet::from_rows(&[vec![1; 8], vec![-1; 8]]).unwrap();
        // off-diagonal exp(-4 * 2 * 8) ~ 1.6e-28
        let ctx = gram(&ps, 2.0).unwrap();
        assert_relative_eq!(ctx.largest_eigenvalue(), 1.0, epsilon = 1e-12);
    }
}
