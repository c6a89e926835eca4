//! Bit accuracy, stability margin and noisy-recall accuracy.

use rand::Rng;

use crate::dynamics::Network;
use crate::error::{invalid, Result};
use crate::par::{map_indexed, Execution};
use crate::pattern::{flip_noise, NetworkState};

/// Fraction of `(μ, i)` with `sign(h_i(ξ^μ)) = ξ^μ_i`, using `sign(0) = +1`.
pub fn bit_accuracy(net: &Network<'_>) -> f64 {
    let h = net.stored_potentials();
    let data = net.patterns().data();
    let hits = h
        .iter()
        .zip(data.iter())
        .filter(|(&h, &x)| (if h >= 0.0 { 1 } else { -1 }) == x)
        .count();
    hits as f64 / h.len() as f64
}

/// Mean alignment `h_i(ξ^μ)·ξ^μ_i`.
pub fn stability_margin(net: &Network<'_>) -> f64 {
    let h = net.stored_potentials();
    let data = net.patterns().data();
    let total: f64 = h.iter().zip(data.iter()).map(|(&h, &x)| h * f64::from(x)).sum();
    total / h.len() as f64
}

/// `baseline − compressed`; positive means performance was lost.
pub fn degradation(baseline: f64, compressed: f64) -> f64 {
    baseline - compressed
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RecallStats {
    pub mean: f64,
    /// Population standard deviation over trials.
    pub std: f64,
    pub trials: usize,
}

/// Mean and population standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Noisy-cue recall. Trial `t` targets pattern `t mod P`, flips
/// `round(ρ·N)` bits drawn from `rng`, runs the dynamics and scores the
/// fraction of bits matching the target in the final state.
///
/// All cues are drawn from `rng` up front, so two networks given equal
/// streams see identical cues.
pub fn recall_accuracy<R: Rng + ?Sized>(
    net: &Network<'_>,
    rho: f64,
    trials: usize,
    max_iters: usize,
    rng: &mut R,
    exec: Execution,
) -> Result<RecallStats> {
    if trials == 0 {
        return Err(invalid("trials", "must be at least 1"));
    }
    let patterns = net.patterns();
    let cues: Vec<(usize, NetworkState)> = (0..trials)
        .map(|t| {
            let mu = t % patterns.p();
            flip_noise(&patterns.state(mu), rho, rng).map(|s| (mu, s))
        })
        .collect::<Result<_>>()?;
    let scores = map_indexed(exec, trials, |t| -> Result<f64> {
        let (mu, cue) = &cues[t];
        let out = net.recall(cue, max_iters)?;
        let target = patterns.row(*mu);
        let n = target.len();
        let wrong = out.state.hamming(target.as_slice().expect("pattern rows are contiguous"));
        Ok((n - wrong) as f64 / n as f64)
    });
    let scores = scores.into_iter().collect::<Result<Vec<_>>>()?;
    let (mean, std) = mean_std(&scores);
    Ok(RecallStats { mean, std, trials })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricsReport {
    pub bit_accuracy: f64,
    pub stability_margin: f64,
    pub recall: Option<RecallStats>,
}

impl MetricsReport {
    pub fn evaluate(net: &Network<'_>) -> Self {
        Self {
            bit_accuracy: bit_accuracy(net),
            stability_margin: stability_margin(net),
            recall: None,
        }
    }

    pub fn with_recall(mut self, recall: RecallStats) -> Self {
        self.recall = Some(recall);
        self
    }
}

#[cfg(test)]
mod tests {
    use approx::assert_relative_eq;
    use ndarray::Array2;

    use super::*;
    use crate::kernel::gram;
    use crate::pattern::{DualWeights, PatternSet};
    use crate::rng::RngSeed;

    fn single() -> (PatternSet, DualWeights) {
        let ps = PatternSet::from_rows(&[vec![1, -1, -1, 1, 1]]).unwrap();
        let a = ps.to_f64();
        (ps, DualWeights::new(a).unwrap())
    }

    #[test]
    fn aligned_and_anti_aligned() {
        let (ps, w) = single();
        let ctx = gram(&ps, 0.1).unwrap();
        let net = Network::new(&ps, &ctx, &w).unwrap();
        assert_eq!(bit_accuracy(&net), 1.0);
        assert_relative_eq!(stability_margin(&net), 1.0);
        let neg = w.negated();
        let net = net.with_weights(&neg).unwrap();
        assert_eq!(bit_accuracy(&net), 0.0);
        assert_relative_eq!(stability_margin(&net), -1.0);
    }

    #[test]
    fn zero_weights_have_zero_margin() {
        let (ps, _) = single();
        let ctx = gram(&ps, 0.1).unwrap();
        let w = DualWeights::new(Array2::zeros((1, 5))).unwrap();
        assert_eq!(stability_margin(&Network::new(&ps, &ctx, &w).unwrap()), 0.0);
    }

    #[test]
    fn noiseless_recall_is_perfect() {
        let (ps, w) = single();
        let ctx = gram(&ps, 0.1).unwrap();
        let net = Network::new(&ps, &ctx, &w).unwrap();
        let mut rng = RngSeed::new(1).stream(0, "recall");
        let r = recall_accuracy(&net, 0.0, 4, 100, &mut rng, Execution::Sequential).unwrap();
        assert_eq!((r.mean, r.std, r.trials), (1.0, 0.0, 4));
        assert!(recall_accuracy(&net, 1.5, 4, 100, &mut rng, Execution::Sequential).is_err());
        assert!(recall_accuracy(&net, 0.1, 0, 100, &mut rng, Execution::Sequential).is_err());
    }

    #[test]
    fn degradation_is_a_difference() {
        assert_eq!(degradation(0.7, 0.7), 0.0);
        assert_relative_eq!(degradation(1.0, 0.9), 0.1, epsilon = 1e-15);
    }

    #[test]
    fn population_std() {
        let (m, s) = mean_std(&[1.0, 3.0]);
        assert_eq!((m, s), (2.0, 1.0));
    }
}
