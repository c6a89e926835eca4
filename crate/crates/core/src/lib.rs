//! Kernel logistic-regression Hopfield memories and their behaviour under
//! weight compression.
//!
//! Patterns are bipolar vectors stored through dual weights `α` (one column
//! per neuron) over an RBF kernel on Hamming distance. The crate covers
//! training, synchronous recall, quantization / binarization / pruning,
//! metrics, Walsh influence analysis and the experiment sweeps built from
//! them.

pub mod analysis;
pub mod compression;
pub mod dynamics;
pub mod experiments;
pub mod error;
pub mod io;
pub mod kernel;
pub mod metrics;
pub mod par;
pub mod pattern;
pub mod rng;
pub mod training;

pub use analysis::{bimodality_stats, fit_power_law, gini, walsh_influence, BimodalityStats, InfluenceProfile, PowerLawFit};
pub use compression::{binarize, prune_magnitude, quantize_uniform, Center, CompressionSpec};
pub use dynamics::{Network, RecallOutcome, RecallStatus};
pub use experiments::{ExperimentConfig, Manifest, SweepResult};
pub use error::{Error, Result};
pub use io::{WeightsFile, WeightsHeader};
pub use kernel::{gram, kernel_vector, rbf, BitVector, KernelContext, PackedPatterns};
pub use metrics::{bit_accuracy, recall_accuracy, stability_margin, MetricsReport, RecallStats};
pub use par::Execution;
pub use pattern::{flip_noise, generate_patterns, DualWeights, NetworkState, PatternSet};
pub use rng::RngSeed;
pub use training::{klr_train, lasso_train, train, Regularizer, TrainConfig, TrainReport};
