//! Post-training weight transforms: uniform k-bit quantization, 1-bit
//! binarization and magnitude pruning.

use std::fmt;

use ndarray::Array2;

use crate::error::{invalid, Error, Result};
use crate::pattern::DualWeights;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum Center {
    #[default]
    Mean,
    Median,
}

impl Center {
    pub fn tag(self) -> &'static str {
        match self {
            Center::Mean => "mean",
            Center::Median => "median",
        }
    }
}

impl std::str::FromStr for Center {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "mean" => Ok(Center::Mean),
            "median" => Ok(Center::Median),
            other => Err(invalid("center", format!("expected mean or median, got {other}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CompressionSpec {
    None,
    Quantize { bits: u32 },
    Binarize { center: Center },
    Prune { sparsity: f64 },
}

impl CompressionSpec {
    pub fn quantize(bits: u32) -> Result<Self> {
        let spec = CompressionSpec::Quantize { bits };
        spec.validate()?;
        Ok(spec)
    }

    pub fn prune(sparsity: f64) -> Result<Self> {
        let spec = CompressionSpec::Prune { sparsity };
        spec.validate()?;
        Ok(spec)
    }

    /// `bits = 1` maps to binarization, `2..=32` to uniform quantization.
    pub fn from_bits(bits: u32, center: Center) -> Result<Self> {
        if bits == 1 {
            Ok(CompressionSpec::Binarize { center })
        } else {
            Self::quantize(bits)
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            CompressionSpec::Quantize { bits } if !(2..=32).contains(&bits) => {
                Err(invalid("bits", format!("quantization needs 2..=32 bits, got {bits}")))
            }
            CompressionSpec::Prune { sparsity } if !(0.0..1.0).contains(&sparsity) => {
                Err(invalid("sparsity", format!("must lie in [0, 1), got {sparsity}")))
            }
            _ => Ok(()),
        }
    }

    pub fn apply(&self, weights: &DualWeights) -> Result<DualWeights> {
        self.validate()?;
        match *self {
            CompressionSpec::None => Ok(weights.clone()),
            CompressionSpec::Quantize { bits } => Ok(quantize_uniform(weights, bits)?.weights),
            CompressionSpec::Binarize { center } => binarize(weights, center),
            CompressionSpec::Prune { sparsity } => prune_magnitude(weights, sparsity),
        }
    }
}

impl fmt::Display for CompressionSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CompressionSpec::None => write!(f, "none"),
            CompressionSpec::Quantize { bits } => write!(f, "quantize:{bits}"),
            CompressionSpec::Binarize { center } => write!(f, "binarize:{}", center.tag()),
            CompressionSpec::Prune { sparsity } => write!(f, "prune:{sparsity}"),
        }
    }
}

impl std::str::FromStr for CompressionSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (kind, arg) = s.split_once(':').unwrap_or((s, ""));
        let bad = || Error::Format(format!("unrecognized compression spec {s:?}"));
        let spec = match kind {
            "none" => CompressionSpec::None,
            "quantize" => CompressionSpec::Quantize { bits: arg.parse().map_err(|_| bad())? },
            "binarize" => CompressionSpec::Binarize { center: arg.parse()? },
            "prune" => CompressionSpec::Prune { sparsity: arg.parse().map_err(|_| bad())? },
            _ => return Err(bad()),
        };
        spec.validate()?;
        Ok(spec)
    }
}

#[derive(Debug, Clone)]
pub struct Quantized {
    pub weights: DualWeights,
    /// Lattice step; `0` flags a constant matrix returned unchanged.
    pub delta: f64,
    pub min: f64,
    pub max: f64,
}

impl Quantized {
    pub fn is_degenerate(&self) -> bool {
        self.delta == 0.0
    }
}

fn min_max(values: impl Iterator<Item = f64>) -> (f64, f64) {
    values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)))
}

/// Quantization step for `k` bits over `[min, max]`.
pub fn quantization_step(min: f64, max: f64, bits: u32) -> f64 {
    (max - min) / ((1u64 << bits) - 1) as f64
}

/// Map one value onto the lattice `min + m·Δ`, `m ∈ [0, 2^k − 1]`.
#[inline]
pub fn quantize_value(x: f64, min: f64, max: f64, delta: f64, levels: f64) -> f64 {
    if x == min || x == max {
        return x;
    }
    // f64::round is half-away-from-zero
    let m = ((x - min) / delta).round().clamp(0.0, levels);
    if m == levels {
        max
    } else {
        min + m * delta
    }
}

/// Uniform `k`-bit quantization with one global range over the whole matrix.
pub fn quantize_uniform(weights: &DualWeights, bits: u32) -> Result<Quantized> {
    CompressionSpec::Quantize { bits }.validate()?;
    let (min, max) = min_max(weights.values());
    if min == max {
        return Ok(Quantized {
            weights: weights.clone(),
            delta: 0.0,
            min,
            max,
        });
    }
    let delta = quantization_step(min, max, bits);
    let levels = ((1u64 << bits) - 1) as f64;
    let q = weights.alpha().mapv(|x| quantize_value(x, min, max, delta, levels));
    Ok(Quantized {
        weights: DualWeights::new(q)?,
        delta,
        min,
        max,
    })
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_unstable_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Two-level reconstruction `c ± s` with `s` the mean absolute deviation from `c`.
pub fn binarize(weights: &DualWeights, center: Center) -> Result<DualWeights> {
    let n = weights.len() as f64;
    let c = match center {
        Center::Mean => weights.values().sum::<f64>() / n,
        Center::Median => median(&mut weights.values().collect::<Vec<_>>()),
    };
    let s = weights.values().map(|x| (x - c).abs()).sum::<f64>() / n;
    let out = weights.alpha().mapv(|x| if x - c >= 0.0 { c + s } else { c - s });
    DualWeights::new(out)
}

/// Indices of entries ordered by `(|x|, index)`.
fn magnitude_order(alpha: &Array2<f64>) -> Vec<usize> {
    let flat: Vec<f64> = alpha.iter().map(|x| x.abs()).collect();
    let mut order: Vec<usize> = (0..flat.len()).collect();
    order.sort_by(|&a, &b| flat[a].total_cmp(&flat[b]).then(a.cmp(&b)));
    order
}

/// Nearest-rank `S`-quantile of the magnitudes: the `⌈S·n⌉`-th smallest.
pub fn magnitude_threshold(weights: &DualWeights, sparsity: f64) -> Result<f64> {
    CompressionSpec::Prune { sparsity }.validate()?;
    let rank = (sparsity * weights.len() as f64).ceil() as usize;
    if rank == 0 {
        return Ok(0.0);
    }
    let mut mags: Vec<f64> = weights.values().map(f64::abs).collect();
    mags.sort_unstable_by(f64::total_cmp);
    Ok(mags[rank - 1])
}

/// Zero the `S` fraction of entries with the smallest magnitude.
///
/// The threshold `τ` is the nearest-rank quantile, so exactly `⌈S·n⌉`
/// entries are removed: all with `|x| < τ` plus entries tied at `τ` in index
/// order. The zero set therefore only grows with `S`.
pub fn prune_magnitude(weights: &DualWeights, sparsity: f64) -> Result<DualWeights> {
    CompressionSpec::Prune { sparsity }.validate()?;
    let rank = (sparsity * weights.len() as f64).ceil() as usize;
    let mut out = weights.alpha().clone();
    if rank == 0 {
        return DualWeights::new(out);
    }
    let order = magnitude_order(weights.alpha());
    let slice = out.as_slice_mut().expect("owned arrays are contiguous");
    for &idx in &order[..rank] {
        slice[idx] = 0.0;
    }
    DualWeights::new(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuantizationErrorStats {
    pub mse: f64,
    pub predicted: f64,
    /// `mse / predicted`; NaN when `Δ = 0`.
    pub ratio: f64,
    pub delta: f64,
}

impl QuantizationErrorStats {
    pub fn is_degenerate(&self) -> bool {
        self.delta == 0.0
    }
}

/// Empirical quantization MSE against the uniform-error prediction `Δ²/12`.
pub fn quantization_error_stats(weights: &DualWeights, bits: u32) -> Result<QuantizationErrorStats> {
    let q = quantize_uniform(weights, bits)?;
    let n = weights.len() as f64;
    let mse = weights
        .values()
        .zip(q.weights.values())
        .map(|(x, y)| (y - x) * (y - x))
        .sum::<f64>()
        / n;
    let predicted = q.delta * q.delta / 12.0;
    let ratio = if q.is_degenerate() { f64::NAN } else { mse / predicted };
    Ok(QuantizationErrorStats {
        mse,
        predicted,
        ratio,
        delta: q.delta,
    })
}
