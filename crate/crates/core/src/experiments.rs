//! Seeded multi-trial sweeps, γ calibration and result persistence.
//!
//! Every trial draws its patterns from its own keyed stream and trains a
//! fresh model; all compression variants inside a trial share that model, so
//! degradations are paired. Trials run concurrently and are merged by trial
//! index, so results do not depend on the worker count.

use std::collections::HashMap;
use std::fmt::{self, Display};
use std::fs;
use std::path::Path;

use crate::analysis::{
    bimodality_stats, evenly_spaced_targets, fit_power_law, gini, pooled_influence, walsh_influence_targets,
    BimodalityStats, Histogram, InfluenceProfile, PowerLawFit,
};
use crate::compression::{quantize_uniform, Center, CompressionSpec};
use crate::dynamics::Network;
use crate::error::{invalid, Error, Result};
use crate::kernel::{gram, KernelContext};
use crate::metrics::{bit_accuracy, mean_std, recall_accuracy, stability_margin, MetricsReport};
use crate::par::{map_indexed, with_workers, Execution};
use crate::pattern::{generate_patterns, DualWeights, PatternSet};
use crate::rng::{tags, RngSeed};
use crate::training::{train, zero_fraction, Regularizer, TrainConfig, TrainReport};

/// Axis value under which unquantized (float64) results are recorded.
pub const FULL_PRECISION_BITS: f64 = 64.0;
/// Reference pooled cross-influence Gini values for the L2 and L1 models.
pub const REFERENCE_GINI_L2: f64 = 0.305;
pub const REFERENCE_GINI_L1: f64 = 0.347;

pub const DEFAULT_GAMMA_GRID: [f64; 10] = [0.005, 0.0075, 0.01, 0.015, 0.02, 0.03, 0.04, 0.05, 0.07, 0.1];

#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationConfig {
    pub candidates: Vec<f64>,
    pub trials: usize,
    /// Noise level of the basin check.
    pub probe_noise: f64,
    /// Minimum mean recall at `probe_noise` for a candidate to qualify.
    pub min_recall: f64,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        Self {
            candidates: DEFAULT_GAMMA_GRID.to_vec(),
            trials: 3,
            probe_noise: 0.25,
            min_recall: 0.999,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub n: usize,
    /// `P / N`.
    pub load: f64,
    /// Kernel locality; `None` means calibrate.
    pub gamma: Option<f64>,
    /// L2 strength; `None` means `1e-4 * P`.
    pub lambda: Option<f64>,
    pub l1_lambda: f64,
    pub trials: usize,
    pub seed: u64,
    pub bits: Vec<u32>,
    pub sparsity: Vec<f64>,
    pub noise: Vec<f64>,
    pub gammas: Vec<f64>,
    pub scaling_bits: Vec<u32>,
    pub local_gamma: f64,
    pub max_iters: usize,
    pub tol: f64,
    /// Noisy cues per trained model; `None` means one per stored pattern.
    pub recall_trials: Option<usize>,
    pub recall_max_iters: usize,
    pub center: Center,
    pub workers: Option<usize>,
    pub calibration: CalibrationConfig,
    pub influence_samples: usize,
    pub influence_targets: usize,
    pub bins: usize,
    pub exclude_nonconverged: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            n: 100,
            load: 3.0,
            gamma: None,
            lambda: None,
            l1_lambda: 0.4,
            trials: 10,
            seed: 1,
            bits: vec![32, 16, 8, 4, 3, 2, 1],
            sparsity: vec![0.0, 0.05, 0.1, 0.2, 0.3, 0.5],
            noise: vec![0.0, 0.05, 0.1, 0.15, 0.2, 0.25, 0.3],
            gammas: DEFAULT_GAMMA_GRID.to_vec(),
            scaling_bits: vec![16, 12, 10, 8, 7, 6, 5, 4, 3, 2],
            local_gamma: 0.1,
            max_iters: TrainConfig::DEFAULT_MAX_ITERS,
            tol: TrainConfig::DEFAULT_TOL,
            recall_trials: None,
            recall_max_iters: crate::dynamics::DEFAULT_MAX_RECALL_ITERS,
            center: Center::Mean,
            workers: None,
            calibration: CalibrationConfig::default(),
            influence_samples: 4096,
            influence_targets: 16,
            bins: 101,
            exclude_nonconverged: false,
        }
    }
}

fn list<T: Display>(v: &[T]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

fn parse_list<T: std::str::FromStr>(name: &'static str, s: &str) -> Result<Vec<T>> {
    s.split(',')
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(|t| t.parse().map_err(|_| invalid(name, format!("cannot parse {t:?}"))))
        .collect()
}

fn parse_one<T: std::str::FromStr>(name: &'static str, s: &str) -> Result<T> {
    s.trim().parse().map_err(|_| invalid(name, format!("cannot parse {s:?}")))
}

fn optional<T: std::str::FromStr>(name: &'static str, s: &str) -> Result<Option<T>> {
    match s.trim() {
        "" | "auto" | "none" => Ok(None),
        v => parse_one(name, v).map(Some),
    }
}

impl ExperimentConfig {
    /// `round(load * n)`.
    pub fn p(&self) -> usize {
        (self.load * self.n as f64).round() as usize
    }

    pub fn lambda_value(&self) -> f64 {
        self.lambda.unwrap_or_else(|| TrainConfig::default_lambda(self.p()))
    }

    pub fn train_config(&self, regularizer: Regularizer) -> TrainConfig {
        let lambda = match regularizer {
            Regularizer::L2 => self.lambda_value(),
            Regularizer::L1 => self.l1_lambda,
        };
        TrainConfig {
            regularizer,
            lambda,
            max_iters: self.max_iters,
            tol: self.tol,
        }
    }

    pub fn recall_trials_value(&self) -> usize {
        self.recall_trials.unwrap_or_else(|| self.p())
    }

    pub fn rng_seed(&self) -> RngSeed {
        RngSeed::new(self.seed)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(invalid("n", "must be at least 1"));
        }
        if !(self.load > 0.0 && self.load.is_finite()) {
            return Err(invalid("load", format!("must be positive, got {}", self.load)));
        }
        if self.p() == 0 {
            return Err(invalid("load", "round(load * n) must be at least 1"));
        }
        crate::pattern::check_dims(self.n, self.p())?;
        if self.trials == 0 {
            return Err(invalid("trials", "must be at least 1"));
        }
        if let Some(g) = self.gamma {
            positive("gamma", g)?;
        }
        if let Some(l) = self.lambda {
            nonnegative("lambda", l)?;
        }
        nonnegative("l1_lambda", self.l1_lambda)?;
        for &b in &self.bits {
            if !(1..=32).contains(&b) {
                return Err(invalid("bits", format!("each bit depth must lie in 1..=32, got {b}")));
            }
        }
        for &b in &self.scaling_bits {
            if !(2..=32).contains(&b) {
                return Err(invalid("scaling_bits", format!("each bit depth must lie in 2..=32, got {b}")));
            }
        }
        for &s in &self.sparsity {
            if !(0.0..1.0).contains(&s) {
                return Err(invalid("sparsity", format!("each value must lie in [0, 1), got {s}")));
            }
        }
        for &r in &self.noise {
            if !(0.0..=1.0).contains(&r) {
                return Err(invalid("noise", format!("each value must lie in [0, 1], got {r}")));
            }
        }
        for &g in &self.gammas {
            positive("gammas", g)?;
        }
        positive("local_gamma", self.local_gamma)?;
        self.train_config(Regularizer::L2).validate()?;
        if self.recall_trials == Some(0) {
            return Err(invalid("recall_trials", "must be at least 1"));
        }
        if self.recall_max_iters == 0 {
            return Err(invalid("recall_max_iters", "must be at least 1"));
        }
        if self.workers == Some(0) {
            return Err(invalid("workers", "must be at least 1"));
        }
        let cal = &self.calibration;
        if cal.candidates.len() < 3 {
            return Err(invalid("calibration_candidates", "need at least 3 candidates"));
        }
        for &g in &cal.candidates {
            positive("calibration_candidates", g)?;
        }
        if cal.trials == 0 {
            return Err(invalid("calibration_trials", "must be at least 1"));
        }
        if !(0.0..=1.0).contains(&cal.probe_noise) {
            return Err(invalid("calibration_probe_noise", "must lie in [0, 1]"));
        }
        if !(0.0..=1.0).contains(&cal.min_recall) {
            return Err(invalid("calibration_min_recall", "must lie in [0, 1]"));
        }
        if self.influence_samples == 0 {
            return Err(invalid("influence_samples", "must be at least 1"));
        }
        if self.influence_targets == 0 {
            return Err(invalid("influence_targets", "must be at least 1"));
        }
        if self.bins < 10 {
            return Err(invalid("bins", "must be at least 10"));
        }
        Ok(())
    }

    /// Set one field from its `key = value` text form. Keys accept `-` or `_`.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let key = key.trim().replace('-', "_");
        match key.as_str() {
            "n" => self.n = parse_one("n", value)?,
            "load" => self.load = parse_one("load", value)?,
            "gamma" => self.gamma = optional("gamma", value)?,
            "lambda" => self.lambda = optional("lambda", value)?,
            "l1_lambda" => self.l1_lambda = parse_one("l1_lambda", value)?,
            "trials" => self.trials = parse_one("trials", value)?,
            "seed" => self.seed = parse_one("seed", value)?,
            "bits" => self.bits = parse_list("bits", value)?,
            "sparsity" => self.sparsity = parse_list("sparsity", value)?,
            "noise" => self.noise = parse_list("noise", value)?,
            "gammas" => self.gammas = parse_list("gammas", value)?,
            "scaling_bits" => self.scaling_bits = parse_list("scaling_bits", value)?,
            "local_gamma" => self.local_gamma = parse_one("local_gamma", value)?,
            "max_iters" => self.max_iters = parse_one("max_iters", value)?,
            "tol" => self.tol = parse_one("tol", value)?,
            "recall_trials" => self.recall_trials = optional("recall_trials", value)?,
            "recall_max_iters" => self.recall_max_iters = parse_one("recall_max_iters", value)?,
            "binarize_center" | "center" => self.center = value.trim().parse()?,
            "workers" => self.workers = optional("workers", value)?,
            "calibration_candidates" => self.calibration.candidates = parse_list("calibration_candidates", value)?,
            "calibration_trials" => self.calibration.trials = parse_one("calibration_trials", value)?,
            "calibration_probe_noise" => self.calibration.probe_noise = parse_one("calibration_probe_noise", value)?,
            "calibration_min_recall" => self.calibration.min_recall = parse_one("calibration_min_recall", value)?,
            "influence_samples" => self.influence_samples = parse_one("influence_samples", value)?,
            "influence_targets" => self.influence_targets = parse_one("influence_targets", value)?,
            "bins" => self.bins = parse_one("bins", value)?,
            "exclude_nonconverged" => self.exclude_nonconverged = parse_one("exclude_nonconverged", value)?,
            _ => return Err(Error::Format(format!("unknown configuration key {key:?}"))),
        }
        Ok(())
    }

    /// Apply a `key = value` text file; `#` starts a comment.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (lineno, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Format(format!("line {}: expected key = value", lineno + 1)))?;
            self.set(k, v)
                .map_err(|e| Error::Format(format!("line {}: {e}", lineno + 1)))?;
        }
        Ok(())
    }

    /// Every field as `key = value`, in the same form [`set`](Self::set) reads.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let opt = |v: Option<String>| v.unwrap_or_else(|| "auto".into());
        vec![
            ("n", self.n.to_string()),
            ("load", self.load.to_string()),
            ("p", self.p().to_string()),
            ("gamma", opt(self.gamma.map(|g| g.to_string()))),
            ("lambda", opt(self.lambda.map(|l| l.to_string()))),
            ("lambda_effective", self.lambda_value().to_string()),
            ("l1_lambda", self.l1_lambda.to_string()),
            ("trials", self.trials.to_string()),
            ("seed", self.seed.to_string()),
            ("bits", list(&self.bits)),
            ("sparsity", list(&self.sparsity)),
            ("noise", list(&self.noise)),
            ("gammas", list(&self.gammas)),
            ("scaling_bits", list(&self.scaling_bits)),
            ("local_gamma", self.local_gamma.to_string()),
            ("max_iters", self.max_iters.to_string()),
            ("tol", self.tol.to_string()),
            ("recall_trials", opt(self.recall_trials.map(|r| r.to_string()))),
            ("recall_max_iters", self.recall_max_iters.to_string()),
            ("binarize_center", self.center.tag().into()),
            ("workers", opt(self.workers.map(|w| w.to_string()))),
            ("calibration_candidates", list(&self.calibration.candidates)),
            ("calibration_trials", self.calibration.trials.to_string()),
            ("calibration_probe_noise", self.calibration.probe_noise.to_string()),
            ("calibration_min_recall", self.calibration.min_recall.to_string()),
            ("influence_samples", self.influence_samples.to_string()),
            ("influence_targets", self.influence_targets.to_string()),
            ("bins", self.bins.to_string()),
            ("exclude_nonconverged", self.exclude_nonconverged.to_string()),
        ]
    }

    pub fn manifest(&self) -> Manifest {
        let mut m = Manifest::default();
        m.set("version", env!("CARGO_PKG_VERSION"));
        for (k, v) in self.entries() {
            m.set(&format!("config.{k}"), v);
        }
        m.set("binarize_rule", "center +/- mean |x - center|, sign(0) = +1");
        m.set("influence_measure", "uniform over {-1,+1}^N, common random numbers");
        m.set("noise_model", "exact-count flips, round(rho * N) positions");
        m.set("std", "population (ddof = 0) over trials");
        m
    }

    fn run<T: Send>(&self, f: impl Fn(usize) -> Result<T> + Sync + Send) -> Result<Vec<T>> {
        with_workers(self.workers, || map_indexed(Execution::Parallel, self.trials, f))
            .into_iter()
            .collect()
    }
}

fn positive(name: &'static str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(invalid(name, format!("must be positive and finite, got {v}")))
    }
}

fn nonnegative(name: &'static str, v: f64) -> Result<()> {
    if v >= 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(invalid(name, format!("must be finite and >= 0, got {v}")))
    }
}

/// Ordered `key = value` record of a run.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Manifest {
    entries: Vec<(String, String)>,
}

impl Manifest {
    pub fn set(&mut self, key: &str, value: impl Display) {
        let value = value.to_string().replace('\n', " ");
        match self.entries.iter_mut().find(|(k, _)| k == key) {
            Some(entry) => entry.1 = value,
            None => self.entries.push((key.to_string(), value)),
        }
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn extend(&mut self, other: &Manifest) {
        for (k, v) in &other.entries {
            self.set(k, v);
        }
    }

    pub fn entries(&self) -> &[(String, String)] {
        &self.entries
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut m = Manifest::default();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once(" = ")
                .ok_or_else(|| Error::Format(format!("manifest line {}: expected key = value", i + 1)))?;
            m.set(k.trim(), v.trim());
        }
        Ok(m)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_string())?;
        Ok(())
    }
}

impl Display for Manifest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (k, v) in &self.entries {
            writeln!(f, "{k} = {v}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub axis_value: f64,
    pub metric: String,
    pub mean: f64,
    pub std: f64,
    pub trial_count: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RawRow {
    pub trial: usize,
    pub axis_value: f64,
    pub metric: String,
    pub value: f64,
}

impl RawRow {
    pub fn new(trial: usize, axis_value: f64, metric: &str, value: f64) -> Self {
        Self {
            trial,
            axis_value,
            metric: metric.to_string(),
            value,
        }
    }
}

pub const SUMMARY_HEADER: &str = "axis_value,metric_name,mean,std,trial_count";
pub const RAW_HEADER: &str = "trial,axis_value,metric_name,value";

/// Aggregated sweep output plus per-trial values and the run manifest.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub name: String,
    pub axis: String,
    pub summary: Vec<SummaryRow>,
    pub raw: Vec<RawRow>,
    pub manifest: Manifest,
}

impl SweepResult {
    /// Groups raw rows by `(metric, axis value)` in order of first appearance.
    pub fn from_raw(name: &str, axis: &str, raw: Vec<RawRow>, manifest: Manifest) -> Self {
        let mut order: Vec<(String, u64)> = Vec::new();
        let mut groups: HashMap<(String, u64), Vec<f64>> = HashMap::new();
        for r in &raw {
            let key = (r.metric.clone(), r.axis_value.to_bits());
            groups
                .entry(key.clone())
                .or_insert_with(|| {
                    order.push(key);
                    Vec::new()
                })
                .push(r.value);
        }
        let summary = order
            .into_iter()
            .map(|key| {
                let values = &groups[&key];
                let (mean, std) = mean_std(values);
                SummaryRow {
                    axis_value: f64::from_bits(key.1),
                    metric: key.0,
                    mean,
                    std,
                    trial_count: values.len(),
                }
            })
            .collect();
        Self {
            name: name.to_string(),
            axis: axis.to_string(),
            summary,
            raw,
            manifest,
        }
    }

    pub fn get(&self, metric: &str, axis_value: f64) -> Option<&SummaryRow> {
        self.summary
            .iter()
            .find(|r| r.metric == metric && r.axis_value == axis_value)
    }

    pub fn mean(&self, metric: &str, axis_value: f64) -> Option<f64> {
        self.get(metric, axis_value).map(|r| r.mean)
    }

    pub fn series(&self, metric: &str) -> Vec<&SummaryRow> {
        self.summary.iter().filter(|r| r.metric == metric).collect()
    }

    /// Per-trial values of one metric at one axis value, in trial order.
    pub fn raw_values(&self, metric: &str, axis_value: f64) -> Vec<f64> {
        self.raw
            .iter()
            .filter(|r| r.metric == metric && r.axis_value == axis_value)
            .map(|r| r.value)
            .collect()
    }

    pub fn summary_csv(&self) -> String {
        let mut s = String::from(SUMMARY_HEADER);
        s.push('\n');
        for r in &self.summary {
            s.push_str(&format!("{},{},{},{},{}\n", r.axis_value, r.metric, r.mean, r.std, r.trial_count));
        }
        s
    }

    pub fn raw_csv(&self) -> String {
        let mut s = String::from(RAW_HEADER);
        s.push('\n');
        for r in &self.raw {
            s.push_str(&format!("{},{},{},{}\n", r.trial, r.axis_value, r.metric, r.value));
        }
        s
    }

    /// Writes `<stem>.csv` and `<stem>_raw.csv` into `dir`.
    pub fn write_csv(&self, dir: impl AsRef<Path>, stem: &str) -> Result<()> {
        let dir = dir.as_ref();
        fs::write(dir.join(format!("{stem}.csv")), self.summary_csv())?;
        fs::write(dir.join(format!("{stem}_raw.csv")), self.raw_csv())?;
        Ok(())
    }
}

/// One trial's patterns, kernel and trained model.
#[derive(Debug, Clone)]
pub struct TrainedModel {
    pub trial: usize,
    pub patterns: PatternSet,
    pub ctx: KernelContext,
    pub report: TrainReport,
}

impl TrainedModel {
    pub fn weights(&self) -> &DualWeights {
        &self.report.weights
    }

    pub fn network(&self) -> Network<'_> {
        Network::new(&self.patterns, &self.ctx, self.weights()).expect("model is self-consistent")
    }
}

pub fn trial_patterns(cfg: &ExperimentConfig, trial: usize, tag: &str) -> Result<PatternSet> {
    generate_patterns(cfg.n, cfg.p(), &mut cfg.rng_seed().stream(trial as u64, tag))
}

fn fit_model(patterns: PatternSet, gamma: f64, trial: usize, tc: &TrainConfig) -> Result<TrainedModel> {
    let ctx = gram(&patterns, gamma)?;
    let report = train(&patterns, &ctx, tc)?;
    Ok(TrainedModel {
        trial,
        patterns,
        ctx,
        report,
    })
}

/// Fresh patterns for `trial`, trained at `gamma`.
pub fn train_trial(cfg: &ExperimentConfig, gamma: f64, trial: usize, regularizer: Regularizer) -> Result<TrainedModel> {
    let patterns = trial_patterns(cfg, trial, tags::PATTERNS)?;
    fit_model(patterns, gamma, trial, &cfg.train_config(regularizer))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CandidateScore {
    pub gamma: f64,
    pub mean_margin: f64,
    pub min_bit_accuracy: f64,
    pub mean_bit_accuracy: f64,
    pub mean_recall: f64,
    pub converged: bool,
}

impl CandidateScore {
    pub fn qualifies(&self, min_recall: f64) -> bool {
        self.min_bit_accuracy == 1.0 && self.mean_recall >= min_recall
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Calibration {
    pub gamma_star: f64,
    /// Set when no candidate met every constraint.
    pub warning: Option<String>,
    pub candidates: Vec<CandidateScore>,
}

impl Calibration {
    pub fn record(&self, m: &mut Manifest) {
        m.set("calibration.gamma_star", self.gamma_star);
        m.set("calibration.warning", self.warning.as_deref().unwrap_or("none"));
        for c in &self.candidates {
            m.set(
                &format!("calibration.candidate.{}", c.gamma),
                format!(
                    "margin={} min_acc={} mean_acc={} recall={} converged={}",
                    c.mean_margin, c.min_bit_accuracy, c.mean_bit_accuracy, c.mean_recall, c.converged
                ),
            );
        }
    }
}

/// Highest mean margin among candidates that reach bit accuracy 1.0 in every
/// calibration trial and keep mean noisy recall at or above `min_recall`.
///
/// Fallbacks carry a warning: the best-recall candidate among those with
/// accuracy 1.0, otherwise the best mean accuracy.
pub fn select_gamma(scores: &[CandidateScore], min_recall: f64) -> Result<(f64, Option<String>)> {
    if scores.is_empty() {
        return Err(invalid("candidates", "no candidates to select from"));
    }
    let best_by = |pool: Vec<&CandidateScore>, key: fn(&CandidateScore) -> f64| {
        pool.into_iter()
            .fold(None::<&CandidateScore>, |best, c| match best {
                Some(b) if key(b) >= key(c) => Some(b),
                _ => Some(c),
            })
            .map(|c| c.gamma)
    };
    let passing: Vec<_> = scores.iter().filter(|c| c.qualifies(min_recall)).collect();
    if let Some(g) = best_by(passing, |c| c.mean_margin) {
        return Ok((g, None));
    }
    let perfect: Vec<_> = scores.iter().filter(|c| c.min_bit_accuracy == 1.0).collect();
    if let Some(g) = best_by(perfect, |c| c.mean_recall) {
        return Ok((g, Some(format!("no candidate reached mean recall {min_recall} at the probe noise"))));
    }
    let g = best_by(scores.iter().collect(), |c| c.mean_bit_accuracy).expect("non-empty");
    Ok((g, Some("no candidate reached bit accuracy 1.0".into())))
}

/// Choose γ on dedicated calibration patterns (independent of sweep trials).
pub fn calibrate_gamma(cfg: &ExperimentConfig) -> Result<Calibration> {
    cfg.validate()?;
    let cal = &cfg.calibration;
    let tc = cfg.train_config(Regularizer::L2);
    let jobs: Vec<(usize, usize)> = (0..cal.candidates.len())
        .flat_map(|c| (0..cal.trials).map(move |t| (c, t)))
        .collect();
    let results = with_workers(cfg.workers, || {
        map_indexed(Execution::Parallel, jobs.len(), |k| -> Result<(f64, f64, f64, bool)> {
            let (c, t) = jobs[k];
            let patterns = trial_patterns(cfg, t, tags::CALIBRATION_PATTERNS)?;
            let model = fit_model(patterns, cal.candidates[c], t, &tc)?;
            let net = model.network();
            let mut rng = cfg.rng_seed().stream(t as u64, tags::CALIBRATION_NOISE);
            let recall = recall_accuracy(
                &net,
                cal.probe_noise,
                cfg.recall_trials_value(),
                cfg.recall_max_iters,
                &mut rng,
                Execution::Sequential,
            )?;
            Ok((bit_accuracy(&net), stability_margin(&net), recall.mean, model.report.converged()))
        })
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;

    let candidates: Vec<CandidateScore> = cal
        .candidates
        .iter()
        .enumerate()
        .map(|(c, &gamma)| {
            let rows = &results[c * cal.trials..(c + 1) * cal.trials];
            let t = rows.len() as f64;
            CandidateScore {
                gamma,
                mean_margin: rows.iter().map(|r| r.1).sum::<f64>() / t,
                min_bit_accuracy: rows.iter().map(|r| r.0).fold(f64::INFINITY, f64::min),
                mean_bit_accuracy: rows.iter().map(|r| r.0).sum::<f64>() / t,
                mean_recall: rows.iter().map(|r| r.2).sum::<f64>() / t,
                converged: rows.iter().all(|r| r.3),
            }
        })
        .collect();
    let (gamma_star, warning) = select_gamma(&candidates, cal.min_recall)?;
    Ok(Calibration {
        gamma_star,
        warning,
        candidates,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct GammaChoice {
    pub gamma: f64,
    pub calibration: Option<Calibration>,
}

impl GammaChoice {
    pub fn record(&self, m: &mut Manifest) {
        m.set("gamma", self.gamma);
        match &self.calibration {
            None => m.set("gamma_source", "explicit"),
            Some(c) => {
                m.set("gamma_source", "calibrated");
                c.record(m);
            }
        }
    }
}

/// The configured γ, or a fresh calibration when none is set.
pub fn resolve_gamma(cfg: &ExperimentConfig) -> Result<GammaChoice> {
    match cfg.gamma {
        Some(gamma) => Ok(GammaChoice {
            gamma,
            calibration: None,
        }),
        None => {
            let c = calibrate_gamma(cfg)?;
            Ok(GammaChoice {
                gamma: c.gamma_star,
                calibration: Some(c),
            })
        }
    }
}

struct TrialRows {
    trial: usize,
    converged: bool,
    rows: Vec<RawRow>,
}

fn assemble(name: &str, axis: &str, cfg: &ExperimentConfig, mut manifest: Manifest, trials: Vec<TrialRows>) -> SweepResult {
    let failed: Vec<usize> = trials.iter().filter(|t| !t.converged).map(|t| t.trial).collect();
    manifest.set("sweep", name);
    manifest.set("axis", axis);
    manifest.set("nonconverged_trials", if failed.is_empty() { "none".into() } else { list(&failed) });
    manifest.set(
        "excluded_trials",
        if cfg.exclude_nonconverged && !failed.is_empty() { list(&failed) } else { "none".into() },
    );
    let raw = trials
        .into_iter()
        .filter(|t| t.converged || !cfg.exclude_nonconverged)
        .flat_map(|t| t.rows)
        .collect();
    SweepResult::from_raw(name, axis, raw, manifest)
}

fn start(cfg: &ExperimentConfig) -> Result<(GammaChoice, Manifest)> {
    cfg.validate()?;
    let choice = resolve_gamma(cfg)?;
    let mut manifest = cfg.manifest();
    choice.record(&mut manifest);
    Ok((choice, manifest))
}

fn push_bimodality(rows: &mut Vec<RawRow>, trial: usize, axis: f64, b: &BimodalityStats) {
    rows.push(RawRow::new(trial, axis, "central_mass", b.central_mass));
    rows.push(RawRow::new(trial, axis, "bimodal", if b.is_bimodal() { 1.0 } else { 0.0 }));
    rows.push(RawRow::new(
        trial,
        axis,
        "modes_opposite_sign",
        if b.modes_opposite_sign() { 1.0 } else { 0.0 },
    ));
    rows.push(RawRow::new(trial, axis, "mode_low", b.mode_low));
    rows.push(RawRow::new(trial, axis, "mode_high", b.mode_high));
    rows.push(RawRow::new(trial, axis, "valley_depth", b.valley_depth));
}

/// Bit accuracy and margin per bit depth. Axis value 64 holds the unquantized
/// model together with its weight-distribution statistics; depth 1 is
/// binarization.
pub fn run_quantization_sweep(cfg: &ExperimentConfig) -> Result<SweepResult> {
    let (choice, manifest) = start(cfg)?;
    let trials = cfg.run(|t| {
        let model = train_trial(cfg, choice.gamma, t, Regularizer::L2)?;
        let net = model.network();
        let base = MetricsReport::evaluate(&net);
        let mut rows = vec![
            RawRow::new(t, FULL_PRECISION_BITS, "bit_accuracy", base.bit_accuracy),
            RawRow::new(t, FULL_PRECISION_BITS, "stability_margin", base.stability_margin),
        ];
        let values: Vec<f64> = model.weights().values().collect();
        push_bimodality(&mut rows, t, FULL_PRECISION_BITS, &bimodality_stats(&values, cfg.bins)?);
        for &k in &cfg.bits {
            let w = CompressionSpec::from_bits(k, cfg.center)?.apply(model.weights())?;
            let m = MetricsReport::evaluate(&net.with_weights(&w)?);
            rows.push(RawRow::new(t, f64::from(k), "bit_accuracy", m.bit_accuracy));
            rows.push(RawRow::new(t, f64::from(k), "stability_margin", m.stability_margin));
        }
        Ok(TrialRows {
            trial: t,
            converged: model.report.converged(),
            rows,
        })
    })?;
    Ok(assemble("quantization", "bits", cfg, manifest, trials))
}

/// Bit accuracy, margin and realized zero fraction per sparsity level.
pub fn run_pruning_sweep(cfg: &ExperimentConfig) -> Result<SweepResult> {
    let (choice, manifest) = start(cfg)?;
    let trials = cfg.run(|t| {
        let model = train_trial(cfg, choice.gamma, t, Regularizer::L2)?;
        let net = model.network();
        let mut rows = Vec::new();
        for &s in &cfg.sparsity {
            let w = CompressionSpec::prune(s)?.apply(model.weights())?;
            let m = MetricsReport::evaluate(&net.with_weights(&w)?);
            rows.push(RawRow::new(t, s, "bit_accuracy", m.bit_accuracy));
            rows.push(RawRow::new(t, s, "stability_margin", m.stability_margin));
            rows.push(RawRow::new(t, s, "zero_fraction", zero_fraction(&w)));
        }
        Ok(TrialRows {
            trial: t,
            converged: model.report.converged(),
            rows,
        })
    })?;
    Ok(assemble("pruning", "sparsity", cfg, manifest, trials))
}

/// Noisy-cue recall of the full-precision and 2-bit models on identical cues.
pub fn run_noise_sweep(cfg: &ExperimentConfig) -> Result<SweepResult> {
    let (choice, manifest) = start(cfg)?;
    let trials = cfg.run(|t| {
        let model = train_trial(cfg, choice.gamma, t, Regularizer::L2)?;
        let net = model.network();
        let q2 = quantize_uniform(model.weights(), 2)?.weights;
        let net_q2 = net.with_weights(&q2)?;
        let mut rows = Vec::new();
        for &rho in &cfg.noise {
            let stream = cfg.rng_seed().stream(t as u64, &tags::recall_noise(rho));
            let recall = |n: &Network<'_>| {
                recall_accuracy(
                    n,
                    rho,
                    cfg.recall_trials_value(),
                    cfg.recall_max_iters,
                    &mut stream.clone(),
                    Execution::Sequential,
                )
            };
            let full = recall(&net)?.mean;
            let quant = recall(&net_q2)?.mean;
            rows.push(RawRow::new(t, rho, "recall_full", full));
            rows.push(RawRow::new(t, rho, "recall_q2", quant));
            rows.push(RawRow::new(t, rho, "recall_gap", full - quant));
        }
        Ok(TrialRows {
            trial: t,
            converged: model.report.converged(),
            rows,
        })
    })?;
    Ok(assemble("noise", "noise", cfg, manifest, trials))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Regime {
    /// The calibrated γ*.
    Ridge,
    /// `cfg.local_gamma`.
    Local,
}

impl Regime {
    pub fn tag(self) -> &'static str {
        match self {
            Regime::Ridge => "ridge",
            Regime::Local => "local",
        }
    }
}

impl std::str::FromStr for Regime {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ridge" => Ok(Regime::Ridge),
            "local" => Ok(Regime::Local),
            other => Err(invalid("regime", format!("expected ridge or local, got {other}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScalingResult {
    pub sweep: SweepResult,
    pub gamma: f64,
    /// Fit over every per-trial point with positive degradation.
    pub fit: Option<PowerLawFit>,
    /// Why the fit is missing, if it is.
    pub fit_error: Option<String>,
    /// Fit over per-bit-depth trial means with positive mean degradation.
    pub fit_of_means: Option<PowerLawFit>,
}

/// Margin degradation against `Δ²` per bit depth, with a log-log fit over
/// all per-trial points whose degradation is positive.
///
/// At high bit depths the sign of a trial's degradation is rounding noise, so
/// which per-depth means come out positive is close to arbitrary; pooling the
/// trial points keeps the estimate stable. The fit of the means is reported
/// alongside.
pub fn run_scaling_experiment(cfg: &ExperimentConfig, regime: Regime) -> Result<ScalingResult> {
    cfg.validate()?;
    let (gamma, mut manifest) = match regime {
        Regime::Ridge => {
            let (choice, m) = start(cfg)?;
            (choice.gamma, m)
        }
        Regime::Local => {
            let mut m = cfg.manifest();
            m.set("gamma", cfg.local_gamma);
            m.set("gamma_source", "local regime");
            (cfg.local_gamma, m)
        }
    };
    manifest.set("regime", regime.tag());
    let trials = cfg.run(|t| {
        let model = train_trial(cfg, gamma, t, Regularizer::L2)?;
        let net = model.network();
        let baseline = stability_margin(&net);
        let mut rows = vec![RawRow::new(t, FULL_PRECISION_BITS, "stability_margin", baseline)];
        for &k in &cfg.scaling_bits {
            let q = quantize_uniform(model.weights(), k)?;
            let margin = stability_margin(&net.with_weights(&q.weights)?);
            rows.push(RawRow::new(t, f64::from(k), "delta_squared", q.delta * q.delta));
            rows.push(RawRow::new(t, f64::from(k), "stability_margin", margin));
            rows.push(RawRow::new(t, f64::from(k), "margin_degradation", baseline - margin));
        }
        Ok(TrialRows {
            trial: t,
            converged: model.report.converged(),
            rows,
        })
    })?;
    let mut sweep = assemble("scaling", "bits", cfg, manifest, trials);
    let pairs = |rows: &[&RawRow], metric: &str| -> Vec<f64> {
        rows.iter().filter(|r| r.metric == metric).map(|r| r.value).collect()
    };
    let scaled: Vec<&RawRow> = sweep.raw.iter().filter(|r| r.axis_value != FULL_PRECISION_BITS).collect();
    let (fit, fit_error) = match fit_power_law(&pairs(&scaled, "delta_squared"), &pairs(&scaled, "margin_degradation")) {
        Ok(f) => (Some(f), None),
        Err(e) => (None, Some(e.to_string())),
    };
    let (mx, my): (Vec<f64>, Vec<f64>) = cfg
        .scaling_bits
        .iter()
        .filter_map(|&k| {
            let k = f64::from(k);
            Some((sweep.mean("delta_squared", k)?, sweep.mean("margin_degradation", k)?))
        })
        .unzip();
    let fit_of_means = fit_power_law(&mx, &my).ok();
    for (prefix, f) in [("fit", &fit), ("fit_of_means", &fit_of_means)] {
        match f {
            Some(f) => {
                sweep.manifest.set(&format!("{prefix}.beta"), f.slope);
                sweep.manifest.set(&format!("{prefix}.intercept"), f.intercept);
                sweep.manifest.set(&format!("{prefix}.r_squared"), f.r_squared);
                sweep.manifest.set(&format!("{prefix}.points_used"), f.points_used);
            }
            None => sweep.manifest.set(&format!("{prefix}.error"), "fewer than 2 positive points"),
        }
    }
    sweep.manifest.set("fit.points", "per-trial (delta^2, degradation) pairs with positive degradation");
    Ok(ScalingResult {
        sweep,
        gamma,
        fit,
        fit_error,
        fit_of_means,
    })
}

/// Full-precision and 2-bit accuracy per γ on shared per-trial patterns.
pub fn run_gamma_sweep(cfg: &ExperimentConfig) -> Result<SweepResult> {
    cfg.validate()?;
    if cfg.gammas.is_empty() {
        return Err(invalid("gammas", "need at least one value"));
    }
    let mut manifest = cfg.manifest();
    if let Some(g) = cfg.gamma {
        manifest.set("gamma_star", g);
    }
    let tc = cfg.train_config(Regularizer::L2);
    let trials = cfg.run(|t| {
        let patterns = trial_patterns(cfg, t, tags::PATTERNS)?;
        let mut rows = Vec::new();
        let mut converged = true;
        for &gamma in &cfg.gammas {
            let model = fit_model(patterns.clone(), gamma, t, &tc)?;
            converged &= model.report.converged();
            let net = model.network();
            let q2 = quantize_uniform(model.weights(), 2)?.weights;
            let base = bit_accuracy(&net);
            let quant = bit_accuracy(&net.with_weights(&q2)?);
            rows.push(RawRow::new(t, gamma, "baseline_bit_accuracy", base));
            rows.push(RawRow::new(t, gamma, "q2_bit_accuracy", quant));
            rows.push(RawRow::new(t, gamma, "accuracy_degradation", base - quant));
            rows.push(RawRow::new(t, gamma, "baseline_stability_margin", stability_margin(&net)));
        }
        Ok(TrialRows { trial: t, converged, rows })
    })?;
    Ok(assemble("gamma", "gamma", cfg, manifest, trials))
}

#[derive(Debug, Clone, PartialEq)]
pub struct WalshResult {
    /// Axis value is the norm order of the regularizer: 2 (L2) or 1 (L1).
    pub sweep: SweepResult,
    pub gini_l2: f64,
    pub gini_l1: f64,
    /// Trial-0 profiles.
    pub profiles_l2: Vec<InfluenceProfile>,
    pub profiles_l1: Vec<InfluenceProfile>,
}

/// Cross-influence inequality of L2- and L1-trained models on identical
/// patterns and identical influence samples.
pub fn run_walsh_experiment(cfg: &ExperimentConfig) -> Result<WalshResult> {
    let (choice, mut manifest) = start(cfg)?;
    manifest.set("reference_gini_l2", REFERENCE_GINI_L2);
    manifest.set("reference_gini_l1", REFERENCE_GINI_L1);
    let targets = evenly_spaced_targets(cfg.n, cfg.influence_targets);
    manifest.set("influence_targets_used", list(&targets));
    let outputs = cfg.run(|t| {
        let patterns = trial_patterns(cfg, t, tags::PATTERNS)?;
        let stream = cfg.rng_seed().stream(t as u64, tags::INFLUENCE);
        let mut rows = Vec::new();
        let mut profiles = Vec::new();
        let mut converged = true;
        for (axis, reg) in [(2.0, Regularizer::L2), (1.0, Regularizer::L1)] {
            let model = fit_model(patterns.clone(), choice.gamma, t, &cfg.train_config(reg))?;
            converged &= model.report.converged();
            let net = model.network();
            let prof = walsh_influence_targets(
                &net,
                &targets,
                cfg.influence_samples,
                &mut stream.clone(),
                Execution::Sequential,
            )?;
            let pooled = pooled_influence(&prof);
            let g = gini(&pooled).unwrap_or(f64::NAN);
            rows.push(RawRow::new(t, axis, "gini", g));
            rows.push(RawRow::new(t, axis, "mean_cross_influence", pooled.iter().sum::<f64>() / pooled.len() as f64));
            rows.push(RawRow::new(t, axis, "bit_accuracy", bit_accuracy(&net)));
            rows.push(RawRow::new(t, axis, "zero_fraction", zero_fraction(model.weights())));
            profiles.push(prof);
        }
        let profiles_l1 = profiles.pop().expect("two models");
        let profiles_l2 = profiles.pop().expect("two models");
        Ok((TrialRows { trial: t, converged, rows }, profiles_l2, profiles_l1))
    })?;
    let mut trials = Vec::with_capacity(outputs.len());
    let mut first = None;
    for (rows, l2, l1) in outputs {
        if first.is_none() {
            first = Some((l2, l1));
        }
        trials.push(rows);
    }
    let (profiles_l2, profiles_l1) = first.expect("at least one trial");
    let sweep = assemble("walsh", "regularizer_order", cfg, manifest, trials);
    let gini_l2 = sweep.mean("gini", 2.0).unwrap_or(f64::NAN);
    let gini_l1 = sweep.mean("gini", 1.0).unwrap_or(f64::NAN);
    Ok(WalshResult {
        sweep,
        gini_l2,
        gini_l1,
        profiles_l2,
        profiles_l1,
    })
}

/// Influence profiles as CSV: `target,coordinate,influence_l2,influence_l1`.
pub fn influence_csv(l2: &[InfluenceProfile], l1: &[InfluenceProfile]) -> String {
    let mut s = String::from("target,coordinate,influence_l2,influence_l1\n");
    for (a, b) in l2.iter().zip(l1) {
        for (i, (x, y)) in a.influence.iter().zip(&b.influence).enumerate() {
            s.push_str(&format!("{},{},{},{}\n", a.target, i, x, y));
        }
    }
    s
}

/// Quantization and pruning sweeps at load 2.0.
pub fn run_replication_pn2(cfg: &ExperimentConfig) -> Result<(SweepResult, SweepResult)> {
    let cfg2 = ExperimentConfig {
        load: 2.0,
        ..cfg.clone()
    };
    cfg2.validate()?;
    let cfg2 = match cfg2.gamma {
        Some(_) => cfg2,
        None => ExperimentConfig {
            gamma: Some(calibrate_gamma(&cfg2)?.gamma_star),
            ..cfg2
        },
    };
    Ok((run_quantization_sweep(&cfg2)?, run_pruning_sweep(&cfg2)?))
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeightHistogram {
    pub histogram: Histogram,
    pub stats: BimodalityStats,
    pub gamma: f64,
    pub manifest: Manifest,
}

impl WeightHistogram {
    /// `bin_low,bin_high,count`.
    pub fn csv(&self) -> String {
        let mut s = String::from("bin_low,bin_high,count\n");
        for (b, c) in self.histogram.counts.iter().enumerate() {
            let (lo, hi) = self.histogram.edges(b);
            s.push_str(&format!("{lo},{hi},{c}\n"));
        }
        s
    }
}

/// Histogram of the trial-0 trained weights.
pub fn weight_histogram(cfg: &ExperimentConfig) -> Result<WeightHistogram> {
    let (choice, mut manifest) = start(cfg)?;
    let model = train_trial(cfg, choice.gamma, 0, Regularizer::L2)?;
    let values: Vec<f64> = model.weights().values().collect();
    let histogram = Histogram::new(&values, cfg.bins)?;
    let stats = bimodality_stats(&values, cfg.bins)?;
    manifest.set("central_mass", stats.central_mass);
    manifest.set("mode_low", stats.mode_low);
    manifest.set("mode_high", stats.mode_high);
    manifest.set("valley_depth", stats.valley_depth);
    manifest.set("bimodal", stats.is_bimodal());
    Ok(WeightHistogram {
        histogram,
        stats,
        gamma: choice.gamma,
        manifest,
    })
}
