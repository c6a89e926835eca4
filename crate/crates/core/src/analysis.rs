//! Walsh influence, Gini coefficient, weight-distribution bimodality and
//! power-law fits.

use ndarray::Array2;
use rand::{Rng, RngCore};

use crate::dynamics::Network;
use crate::error::{invalid, Error, Result};
use crate::kernel::BitVector;
use crate::par::{map_indexed, Execution};

/// Per-coordinate sign-flip probabilities for one output neuron.
#[derive(Debug, Clone, PartialEq)]
pub struct InfluenceProfile {
    pub target: usize,
    pub influence: Vec<f64>,
    pub samples: usize,
    /// Whether summaries drop the self term `i = target`.
    pub cross_only: bool,
}

impl InfluenceProfile {
    /// Influence values used in summaries.
    pub fn summary_values(&self) -> Vec<f64> {
        self.influence
            .iter()
            .enumerate()
            .filter(|&(i, _)| !(self.cross_only && i == self.target))
            .map(|(_, &v)| v)
            .collect()
    }
}

#[inline]
fn sign(v: f64) -> bool {
    v >= 0.0
}

fn random_states<R: RngCore + ?Sized>(n: usize, m: usize, rng: &mut R) -> Vec<Vec<i8>> {
    (0..m)
        .map(|_| (0..n).map(|_| if rng.random::<bool>() { 1 } else { -1 }).collect())
        .collect()
}

/// Monte Carlo influence of every coordinate on `sign(f)` over uniform states.
///
/// The same `m` base states serve every coordinate.
pub fn influence_of<F, R>(f: F, n: usize, m: usize, rng: &mut R) -> Result<Vec<f64>>
where
    F: Fn(&[i8]) -> f64,
    R: Rng + ?Sized,
{
    if n == 0 || m == 0 {
        return Err(invalid("samples", "need n >= 1 and m >= 1"));
    }
    let mut counts = vec![0usize; n];
    for mut s in random_states(n, m, rng) {
        let base = sign(f(&s));
        for (i, count) in counts.iter_mut().enumerate() {
            s[i] = -s[i];
            if sign(f(&s)) != base {
                *count += 1;
            }
            s[i] = -s[i];
        }
    }
    Ok(counts.into_iter().map(|c| c as f64 / m as f64).collect())
}

/// Influence profiles of the network potential for several target neurons.
///
/// For a base state `s` the kernel values of all `N` single-bit neighbours
/// follow from the base distances (each changes by one), so each sample
/// costs one `N x P` by `P x T` product.
pub fn walsh_influence_targets<R: RngCore + ?Sized>(
    net: &Network<'_>,
    targets: &[usize],
    m: usize,
    rng: &mut R,
    exec: Execution,
) -> Result<Vec<InfluenceProfile>> {
    let n = net.n();
    if m == 0 {
        return Err(invalid("samples", "must be at least 1"));
    }
    if targets.is_empty() {
        return Err(invalid("targets", "need at least one target neuron"));
    }
    if let Some(&bad) = targets.iter().find(|&&j| j >= n) {
        return Err(invalid("targets", format!("neuron {bad} out of range for N = {n}")));
    }
    let patterns = net.patterns();
    let table = net.context().table();
    let p = patterns.p();
    let data = patterns.data();
    let alpha = net.weights().alpha();
    let sub = Array2::from_shape_fn((p, targets.len()), |(mu, t)| alpha[[mu, targets[t]]]);

    let states = random_states(n, m, rng);
    let per_sample = map_indexed(exec, m, |k| -> Result<Vec<u32>> {
        let s = &states[k];
        let dist = patterns.packed().distances_to(&BitVector::from_signs(s.iter().copied()))?;
        let base_k = ndarray::Array1::from_shape_fn(p, |mu| table.get(dist[mu] as usize));
        let base_h = base_k.dot(&sub);
        let flipped = Array2::from_shape_fn((n, p), |(i, mu)| {
            let d = dist[mu] as usize;
            table.get(if s[i] == data[[mu, i]] { d + 1 } else { d - 1 })
        });
        let h = flipped.dot(&sub);
        let mut flips = vec![0u32; n * targets.len()];
        for t in 0..targets.len() {
            let b = sign(base_h[t]);
            for i in 0..n {
                if sign(h[[i, t]]) != b {
                    flips[t * n + i] = 1;
                }
            }
        }
        Ok(flips)
    });
    let mut totals = vec![0u64; n * targets.len()];
    for flips in per_sample {
        for (acc, f) in totals.iter_mut().zip(flips?) {
            *acc += u64::from(f);
        }
    }
    Ok(targets
        .iter()
        .enumerate()
        .map(|(t, &target)| InfluenceProfile {
            target,
            influence: totals[t * n..(t + 1) * n].iter().map(|&c| c as f64 / m as f64).collect(),
            samples: m,
            cross_only: true,
        })
        .collect())
}

pub fn walsh_influence<R: RngCore + ?Sized>(
    net: &Network<'_>,
    target: usize,
    m: usize,
    rng: &mut R,
) -> Result<InfluenceProfile> {
    let mut v = walsh_influence_targets(net, &[target], m, rng, Execution::Sequential)?;
    Ok(v.remove(0))
}

/// `count` targets spread evenly over `0..n`.
pub fn evenly_spaced_targets(n: usize, count: usize) -> Vec<usize> {
    let count = count.clamp(1, n.max(1));
    (0..count).map(|t| t * n / count).collect()
}

/// Summary values of every profile, concatenated.
pub fn pooled_influence(profiles: &[InfluenceProfile]) -> Vec<f64> {
    profiles.iter().flat_map(InfluenceProfile::summary_values).collect()
}

/// Gini coefficient `Σ_a Σ_b |x_a − x_b| / (2 n² mean)` via the sorted form.
pub fn gini(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(invalid("values", "empty input"));
    }
    if values.iter().any(|&v| !(v >= 0.0 && v.is_finite())) {
        return Err(invalid("values", "entries must be finite and nonnegative"));
    }
    let mut sorted = values.to_vec();
    sorted.sort_unstable_by(f64::total_cmp);
    let total: f64 = sorted.iter().sum();
    if total == 0.0 {
        return Err(Error::Degenerate("gini of an all-zero vector".into()));
    }
    let n = sorted.len() as f64;
    let weighted: f64 = sorted
        .iter()
        .enumerate()
        .map(|(i, &x)| (2.0 * (i as f64 + 1.0) - n - 1.0) * x)
        .sum();
    Ok(weighted / (n * total))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    pub min: f64,
    pub max: f64,
    pub counts: Vec<usize>,
}

impl Histogram {
    /// Equal-width bins over `[min, max]`; the top edge belongs to the last bin.
    pub fn new(values: &[f64], bins: usize) -> Result<Self> {
        if bins == 0 {
            return Err(invalid("bins", "must be at least 1"));
        }
        if values.is_empty() {
            return Err(invalid("values", "empty input"));
        }
        let (min, max) = values
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
        let mut counts = vec![0usize; bins];
        let width = (max - min) / bins as f64;
        for &v in values {
            let b = if width > 0.0 {
                (((v - min) / width) as usize).min(bins - 1)
            } else {
                bins / 2
            };
            counts[b] += 1;
        }
        Ok(Self { min, max, counts })
    }

    pub fn bins(&self) -> usize {
        self.counts.len()
    }

    pub fn center(&self, bin: usize) -> f64 {
        if self.max == self.min {
            return self.min;
        }
        let width = (self.max - self.min) / self.bins() as f64;
        self.min + (bin as f64 + 0.5) * width
    }

    pub fn edges(&self, bin: usize) -> (f64, f64) {
        let width = (self.max - self.min) / self.bins() as f64;
        (self.min + bin as f64 * width, self.min + (bin + 1) as f64 * width)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BimodalityStats {
    pub mode_low: f64,
    pub mode_high: f64,
    /// Fraction of entries with `|x| < 0.1·max|x|`.
    pub central_mass: f64,
    /// Smallest count between the modes over the smaller mode's count.
    pub valley_depth: f64,
}

impl BimodalityStats {
    pub const VALLEY_THRESHOLD: f64 = 0.5;

    pub fn is_unimodal(&self) -> bool {
        self.mode_low == self.mode_high
    }

    /// Two distinct modes separated by a valley at most half the smaller peak.
    pub fn is_bimodal(&self) -> bool {
        !self.is_unimodal() && self.valley_depth <= Self::VALLEY_THRESHOLD
    }

    pub fn modes_opposite_sign(&self) -> bool {
        self.mode_low < 0.0 && self.mode_high > 0.0
    }
}

fn local_maxima(c: &[usize]) -> Vec<usize> {
    (0..c.len())
        .filter(|&i| {
            c[i] > 0 && (i == 0 || c[i] > c[i - 1]) && (i + 1 == c.len() || c[i] >= c[i + 1])
        })
        .collect()
}

/// Histogram-based bimodality summary over raw (unsmoothed) counts.
///
/// The first mode is the tallest bin. The second is the local maximum with
/// the largest prominence against it, i.e. the largest drop from the smaller
/// peak down to the lowest bin between them.
pub fn bimodality_stats(values: &[f64], bins: usize) -> Result<BimodalityStats> {
    if bins < 10 {
        return Err(invalid("bins", format!("need at least 10 bins, got {bins}")));
    }
    let hist = Histogram::new(values, bins)?;
    let c = &hist.counts;
    let peak = (0..c.len()).fold(0, |best, i| if c[i] > c[best] { i } else { best });
    let valley_between = |a: usize, b: usize| {
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        c[lo..=hi].iter().copied().min().unwrap_or(0)
    };
    let second = local_maxima(c)
        .into_iter()
        .filter(|&m| m != peak)
        .map(|m| {
            let valley = valley_between(peak, m);
            (m, c[m].min(c[peak]) - valley)
        })
        .filter(|&(_, prominence)| prominence > 0)
        .fold(None, |best: Option<(usize, usize)>, cand| match best {
            Some(b) if b.1 >= cand.1 => Some(b),
            _ => Some(cand),
        });

    let max_abs = values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let central = values.iter().filter(|v| v.abs() < 0.1 * max_abs).count();
    let central_mass = central as f64 / values.len() as f64;

    Ok(match second {
        None => BimodalityStats {
            mode_low: hist.center(peak),
            mode_high: hist.center(peak),
            central_mass,
            valley_depth: 1.0,
        },
        Some((m, _)) => {
            let (lo, hi) = if peak < m { (peak, m) } else { (m, peak) };
            BimodalityStats {
                mode_low: hist.center(lo),
                mode_high: hist.center(hi),
                central_mass,
                valley_depth: valley_between(lo, hi) as f64 / c[lo].min(c[hi]) as f64,
            }
        }
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PowerLawFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub points_used: usize,
}

impl PowerLawFit {
    pub fn predict(&self, x: f64) -> f64 {
        (self.intercept + self.slope * x.ln()).exp()
    }
}

/// OLS of `ln y` on `ln x` over pairs with both coordinates strictly positive.
pub fn fit_power_law(x: &[f64], y: &[f64]) -> Result<PowerLawFit> {
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch {
            expected: x.len(),
            found: y.len(),
        });
    }
    let pts: Vec<(f64, f64)> = x
        .iter()
        .zip(y)
        .filter(|(&a, &b)| a > 0.0 && b > 0.0 && a.is_finite() && b.is_finite())
        .map(|(&a, &b)| (a.ln(), b.ln()))
        .collect();
    if pts.len() < 2 {
        return Err(Error::FitUnavailable(format!(
            "{} strictly positive points, need at least 2",
            pts.len()
        )));
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    if sxx == 0.0 {
        return Err(Error::FitUnavailable("all retained x values are equal".into()));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_tot: f64 = pts.iter().map(|p| (p.1 - my).powi(2)).sum();
    let ss_res: f64 = pts.iter().map(|p| (p.1 - intercept - slope * p.0).powi(2)).sum();
    let r_squared = if ss_tot > 0.0 {
        1.0 - ss_res / ss_tot
    } else if ss_res == 0.0 {
        1.0
    } else {
        0.0
    };
    Ok(PowerLawFit {
        slope,
        intercept,
        r_squared,
        points_used: pts.len(),
    })
}

#[cfg(test)]
mod tests {
    use approx::assert_relative_eq;

    use super::*;
    use crate::rng::RngSeed;

    #[test]
    fn dictator_and_constant_functions() {
        let mut rng = RngSeed::new(3).stream(0, "influence");
        let inf = influence_of(|s| f64::from(s[0]), 6, 500, &mut rng).unwrap();
        assert_eq!(inf, vec![1.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        let inf = influence_of(|_| -2.0, 6, 500, &mut rng).unwrap();
        assert!(inf.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn gini_hand_values() {
        assert_eq!(gini(&[2.0, 2.0, 2.0]).unwrap(), 0.0);
        assert_relative_eq!(gini(&[0.0, 1.0]).unwrap(), 0.5, epsilon = 1e-15);
        assert!(gini(&[0.0, 0.0]).is_err());
        assert!(gini(&[1.0, -1.0]).is_err());
        assert!(gini(&[]).is_err());
    }

    #[test]
    fn point_masses_are_bimodal() {
        let v: Vec<f64> = (0..1000).map(|i| if i % 2 == 0 { 3.0 } else { -3.0 }).collect();
        let b = bimodality_stats(&v, 101).unwrap();
        assert!(b.is_bimodal() && b.modes_opposite_sign());
        assert!((b.mode_low + 3.0).abs() < 0.1 && (b.mode_high - 3.0).abs() < 0.1);
        assert_eq!(b.central_mass, 0.0);
        assert_eq!(b.valley_depth, 0.0);
    }

    #[test]
    fn constant_values_are_unimodal() {
        let b = bimodality_stats(&[1.0; 20], 11).unwrap();
        assert!(b.is_unimodal());
        assert!(bimodality_stats(&[1.0; 20], 9).is_err());
    }

    #[test]
    fn exact_power_laws() {
        let x: Vec<f64> = (1..8).map(|k| 4f64.powi(-k)).collect();
        for beta in [0.5, 0.8, 1.0] {
            let y: Vec<f64> = x.iter().map(|v| 0.3 * v.powf(beta)).collect();
            let fit = fit_power_law(&x, &y).unwrap();
            assert!((fit.slope - beta).abs() < 1e-12);
            assert!((fit.r_squared - 1.0).abs() < 1e-12);
            assert_eq!(fit.points_used, 7);
        }
    }

    #[test]
    fn fit_filters_nonpositive_points() {
        let fit = fit_power_law(&[1.0, 2.0, 4.0, 8.0], &[1.0, -1.0, 0.0, 8.0]).unwrap();
        assert_eq!(fit.points_used, 2);
        assert_relative_eq!(fit.slope, 1.0, epsilon = 1e-12);
        assert!(matches!(fit_power_law(&[1.0, 2.0], &[0.0, 1.0]), Err(Error::FitUnavailable(_))));
        assert!(fit_power_law(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn target_spacing() {
        assert_eq!(evenly_spaced_targets(100, 4), vec![0, 25, 50, 75]);
        assert_eq!(evenly_spaced_targets(3, 16), vec![0, 1, 2]);
    }
}
