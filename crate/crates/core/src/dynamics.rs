//! Synchronous recall dynamics.
//!
//! `h_i(s) = Σ_μ α_μi K(s, ξ^μ)` and every neuron updates at once to
//! `sign(h_i)`, with `sign(0) = +1`.

use ndarray::{Array1, Array2};

use crate::error::{invalid, Result};
use crate::kernel::{BitVector, KernelContext};
use crate::pattern::{DualWeights, NetworkState, PatternSet};

pub const DEFAULT_MAX_RECALL_ITERS: usize = 100;

/// Borrowed view of a trained (possibly compressed) network.
#[derive(Debug, Clone, Copy)]
pub struct Network<'a> {
    patterns: &'a PatternSet,
    ctx: &'a KernelContext,
    weights: &'a DualWeights,
}

impl<'a> Network<'a> {
    pub fn new(patterns: &'a PatternSet, ctx: &'a KernelContext, weights: &'a DualWeights) -> Result<Self> {
        ctx.check_patterns(patterns)?;
        weights.check_matches(patterns)?;
        Ok(Self { patterns, ctx, weights })
    }

    /// Same patterns and kernel, different weights.
    pub fn with_weights<'b>(&self, weights: &'b DualWeights) -> Result<Network<'b>>
    where
        'a: 'b,
    {
        Network::new(self.patterns, self.ctx, weights)
    }

    pub fn patterns(&self) -> &'a PatternSet {
        self.patterns
    }

    pub fn context(&self) -> &'a KernelContext {
        self.ctx
    }

    pub fn weights(&self) -> &'a DualWeights {
        self.weights
    }

    pub fn n(&self) -> usize {
        self.patterns.n()
    }

    pub fn potential(&self, s: &NetworkState) -> Result<Array1<f64>> {
        let k = self.ctx.kernel_vector(s, self.patterns)?;
        Ok(self.weights.alpha().t().dot(&k))
    }

    fn potential_packed(&self, s: &BitVector) -> Result<Array1<f64>> {
        let k = self.ctx.kernel_vector_packed(s, self.patterns)?;
        Ok(self.weights.alpha().t().dot(&k))
    }

    /// Potentials at every stored pattern, `K·A` (row `μ` is `h(ξ^μ)`).
    pub fn stored_potentials(&self) -> Array2<f64> {
        self.ctx.gram().dot(self.weights.alpha())
    }

    pub fn update_sync(&self, s: &NetworkState) -> Result<NetworkState> {
        Ok(NetworkState::from_signs(self.potential(s)?.view()))
    }

    pub fn recall(&self, init: &NetworkState, max_iters: usize) -> Result<RecallOutcome> {
        if init.len() != self.n() {
            return Err(crate::Error::DimensionMismatch {
                expected: self.n(),
                found: init.len(),
            });
        }
        if max_iters == 0 {
            return Err(invalid("max_iters", "must be at least 1"));
        }
        let mut before = BitVector::from_state(init);
        let mut current = before.clone();
        for it in 1..=max_iters {
            let h = self.potential_packed(&current)?;
            let next = BitVector::from_signs(h.iter().map(|&v| if v >= 0.0 { 1 } else { -1 }));
            if next == current {
                return Ok(RecallOutcome::new(&next, it, RecallStatus::FixedPoint));
            }
            if it >= 2 && next == before {
                return Ok(RecallOutcome::new(&next, it, RecallStatus::CycleDetected));
            }
            before = std::mem::replace(&mut current, next);
        }
        Ok(RecallOutcome::new(&current, max_iters, RecallStatus::MaxIters))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RecallStatus {
    FixedPoint,
    CycleDetected,
    MaxIters,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RecallOutcome {
    pub state: NetworkState,
    pub iterations: usize,
    pub status: RecallStatus,
}

impl RecallOutcome {
    fn new(bits: &BitVector, iterations: usize, status: RecallStatus) -> Self {
        Self {
            state: NetworkState::new(bits.unpack()).expect("bit vectors unpack to bipolar values"),
            iterations,
            status,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::gram;
    use crate::training::{klr_train, TrainConfig};

    fn trained(rows: &[Vec<i8>], gamma: f64) -> (PatternSet, KernelContext, DualWeights) {
        let ps = PatternSet::from_rows(rows).unwrap();
        let ctx = gram(&ps, gamma).unwrap();
        let w = klr_train(&ps, &ctx, &TrainConfig::l2(1e-3)).unwrap().require_converged().unwrap();
        (ps, ctx, w)
    }

    #[test]
    fn stored_pattern_is_a_fixed_point() {
        let rows = vec![vec![1, -1, 1, -1, 1, 1], vec![-1, -1, 1, 1, 1, -1]];
        let (ps, ctx, w) = trained(&rows, 0.1);
        let net = Network::new(&ps, &ctx, &w).unwrap();
        let out = net.recall(&ps.state(0), 100).unwrap();
        assert_eq!(out.status, RecallStatus::FixedPoint);
        assert_eq!(out.iterations, 1);
        assert_eq!(out.state, ps.state(0));
    }

    #[test]
    fn zero_potential_maps_to_plus_one() {
        let rows = vec![vec![1, -1, 1, -1]];
        let ps = PatternSet::from_rows(&rows).unwrap();
        let ctx = gram(&ps, 0.1).unwrap();
        let w = DualWeights::zeros(1, 4).unwrap();
        let net = Network::new(&ps, &ctx, &w).unwrap();
        let s = net.update_sync(&ps.state(0)).unwrap();
        assert!(s.as_slice().iter().all(|&v| v == 1));
    }

    #[test]
    fn two_cycle_is_detected() {
        // each stored pattern pushes towards the other one
        let rows = vec![vec![1, 1, 1, 1], vec![-1, -1, -1, -1]];
        let ps = PatternSet::from_rows(&rows).unwrap();
        let ctx = gram(&ps, 0.1).unwrap();
        let mut a = Array2::from_elem((2, 4), 1.0);
        a.row_mut(0).fill(-1.0);
        let w = DualWeights::new(a).unwrap();
        let net = Network::new(&ps, &ctx, &w).unwrap();
        let out = net.recall(&ps.state(0), 100).unwrap();
        assert_eq!(out.status, RecallStatus::CycleDetected);
        assert_eq!(out.iterations, 2);
    }

    #[test]
    fn mismatched_state_is_rejected() {
        let rows = vec![vec![1, -1, 1, -1]];
        let (ps, ctx, w) = trained(&rows, 0.1);
        let net = Network::new(&ps, &ctx, &w).unwrap();
        assert!(net.recall(&NetworkState::all_positive(3), 10).is_err());
        assert!(net.potential(&NetworkState::all_positive(5)).is_err());
    }
}
