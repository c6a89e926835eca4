//! Argument parsing and subcommand dispatch.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use khm_core::experiments::{
    calibrate_gamma, influence_csv, resolve_gamma, run_gamma_sweep, run_noise_sweep, run_pruning_sweep,
    run_quantization_sweep, run_replication_pn2, run_scaling_experiment, run_walsh_experiment, train_trial,
    weight_histogram, Regime, FULL_PRECISION_BITS,
};
use khm_core::training::zero_fraction;
use khm_core::{ExperimentConfig, Manifest, MetricsReport, Regularizer, SweepResult, WeightsFile, WeightsHeader};

use crate::plot::{write_plot, FitLine, PlotSpec, Series};

#[derive(Debug, Parser)]
#[command(
    name = "khm",
    version,
    args_override_self = true,
    about = "Kernel Hopfield memory experiments: training, compression sweeps and analysis",
    long_about = "Runs seeded multi-trial experiments on kernel logistic regression Hopfield \
                  networks and writes summary CSV, per-trial CSV, an SVG plot and a run manifest \
                  into the output directory.\n\nFlags override values read from --config; \
                  leaving --gamma unset calibrates it first."
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train one model (trial 0) and save its weights.
    Train(Common),
    /// Bit accuracy and stability margin against quantization bit depth.
    QuantizeSweep(Common),
    /// Bit accuracy and stability margin against pruning sparsity.
    PruneSweep(Common),
    /// Noisy-cue recall of full-precision and 2-bit models.
    NoiseSweep(Common),
    /// Margin degradation against squared quantization step, with a log-log fit.
    Scaling {
        #[command(flatten)]
        common: Common,
        /// Regime: ridge (calibrated gamma) or local (--local-gamma).
        #[arg(long, default_value = "ridge", value_name = "ridge|local")]
        regime: String,
    },
    /// 2-bit accuracy degradation against kernel locality.
    GammaSweep(Common),
    /// Input influence inequality of L2- and L1-trained models.
    Walsh(Common),
    /// Quantization and pruning sweeps at load 2.0.
    ReplicatePn2(Common),
    /// Select gamma on dedicated calibration patterns.
    Calibrate(Common),
    /// Histogram and bimodality statistics of trained weights.
    Histogram(Common),
    /// Re-render plots and print summaries for CSVs already in --out.
    Report {
        /// Directory holding results from earlier runs.
        #[arg(long, default_value = "results")]
        out: PathBuf,
    },
}

/// Flags shared by every computing subcommand. Each maps onto one
/// configuration key and overrides the same key from `--config`.
#[derive(Debug, Clone, Default, Args)]
pub struct Common {
    /// key = value configuration file applied before the flags.
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, default_value = "results")]
    pub out: PathBuf,
    /// Neuron count N.
    #[arg(long, value_name = "N")]
    pub n: Option<String>,
    /// Storage load P/N.
    #[arg(long)]
    pub load: Option<String>,
    /// Kernel locality; omit (or "auto") to calibrate.
    #[arg(long)]
    pub gamma: Option<String>,
    /// L2 regularization strength (default 1e-4 * P).
    #[arg(long)]
    pub lambda: Option<String>,
    /// L1 regularization strength.
    #[arg(long)]
    pub l1_lambda: Option<String>,
    /// Trials per sweep point.
    #[arg(long)]
    pub trials: Option<String>,
    /// Base random seed.
    #[arg(long)]
    pub seed: Option<String>,
    /// Worker threads (default: all cores).
    #[arg(long)]
    pub workers: Option<String>,
    /// Bit depths, comma separated (1 = binarize).
    #[arg(long, value_name = "LIST")]
    pub bits: Option<String>,
    /// Pruning sparsity levels in [0, 1), comma separated.
    #[arg(long, value_name = "LIST")]
    pub sparsity: Option<String>,
    /// Noise levels in [0, 1], comma separated.
    #[arg(long, value_name = "LIST")]
    pub noise: Option<String>,
    /// Kernel localities for gamma-sweep, comma separated.
    #[arg(long, value_name = "LIST")]
    pub gammas: Option<String>,
    /// Bit depths for the scaling experiment, comma separated.
    #[arg(long, value_name = "LIST")]
    pub scaling_bits: Option<String>,
    /// Kernel locality of the local scaling regime.
    #[arg(long)]
    pub local_gamma: Option<String>,
    /// Regularizer for train: l2 or l1.
    #[arg(long, value_name = "l2|l1")]
    pub reg: Option<String>,
    /// Binarization center: mean or median.
    #[arg(long, value_name = "mean|median")]
    pub binarize_center: Option<String>,
    /// Training iteration cap per column.
    #[arg(long)]
    pub max_iters: Option<String>,
    /// Training tolerance (scaled by P).
    #[arg(long)]
    pub tol: Option<String>,
    /// Noisy cues per trained model (default P).
    #[arg(long)]
    pub recall_trials: Option<String>,
    /// Update cap per recall.
    #[arg(long)]
    pub recall_max_iters: Option<String>,
    /// Calibration candidate gammas, comma separated.
    #[arg(long, value_name = "LIST")]
    pub calibration_candidates: Option<String>,
    /// Calibration trials per candidate.
    #[arg(long)]
    pub calibration_trials: Option<String>,
    /// Monte Carlo samples per influence estimate.
    #[arg(long)]
    pub influence_samples: Option<String>,
    /// Target neurons per influence profile.
    #[arg(long)]
    pub influence_targets: Option<String>,
    /// Histogram bins (at least 10).
    #[arg(long)]
    pub bins: Option<String>,
    /// Drop non-converged trials from aggregates.
    #[arg(long)]
    pub exclude_nonconverged: bool,
}

impl Common {
    fn overrides(&self) -> Vec<(&'static str, &String)> {
        let pairs = [
            ("n", &self.n),
            ("load", &self.load),
            ("gamma", &self.gamma),
            ("lambda", &self.lambda),
            ("l1_lambda", &self.l1_lambda),
            ("trials", &self.trials),
            ("seed", &self.seed),
            ("workers", &self.workers),
            ("bits", &self.bits),
            ("sparsity", &self.sparsity),
            ("noise", &self.noise),
            ("gammas", &self.gammas),
            ("scaling_bits", &self.scaling_bits),
            ("local_gamma", &self.local_gamma),
            ("binarize_center", &self.binarize_center),
            ("max_iters", &self.max_iters),
            ("tol", &self.tol),
            ("recall_trials", &self.recall_trials),
            ("recall_max_iters", &self.recall_max_iters),
            ("calibration_candidates", &self.calibration_candidates),
            ("calibration_trials", &self.calibration_trials),
            ("influence_samples", &self.influence_samples),
            ("influence_targets", &self.influence_targets),
            ("bins", &self.bins),
        ];
        pairs.into_iter().filter_map(|(k, v)| v.as_ref().map(|v| (k, v))).collect()
    }

    /// Config file first, then flags; validated before anything runs.
    pub fn config(&self) -> Result<ExperimentConfig> {
        let mut cfg = ExperimentConfig::default();
        if let Some(path) = &self.config {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            cfg.apply_text(&text).with_context(|| format!("in {}", path.display()))?;
        }
        for (key, value) in self.overrides() {
            cfg.set(key, value).with_context(|| format!("--{}", key.replace('_', "-")))?;
        }
        if self.exclude_nonconverged {
            cfg.exclude_nonconverged = true;
        }
        self.regularizer()?;
        cfg.validate()?;
        Ok(cfg)
    }

    fn regularizer(&self) -> Result<Regularizer> {
        Ok(match &self.reg {
            None => Regularizer::L2,
            Some(r) => r.parse().context("--reg")?,
        })
    }
}

/// Tracks one run's manifest: written before results, finalized after.
struct Run {
    path: PathBuf,
    manifest: Manifest,
    started: Instant,
}

impl Run {
    fn start(out: &Path, stem: &str, command: &str, cfg: &ExperimentConfig) -> Result<Self> {
        fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
        let mut manifest = cfg.manifest();
        manifest.set("command", command);
        manifest.set("status", "running");
        let path = out.join(format!("{stem}.manifest.txt"));
        manifest.write(&path)?;
        Ok(Self {
            path,
            manifest,
            started: Instant::now(),
        })
    }

    fn finish(mut self, outcome: &Result<Manifest>) -> Result<()> {
        match outcome {
            Ok(extra) => {
                self.manifest.extend(extra);
                self.manifest.set("status", "ok");
            }
            Err(e) => {
                self.manifest.set("status", "failed");
                self.manifest.set("error", format!("{e:#}"));
            }
        }
        self.manifest.set("wall_time_secs", format!("{:.3}", self.started.elapsed().as_secs_f64()));
        self.manifest.write(&self.path)?;
        Ok(())
    }
}

fn with_run(
    common: &Common,
    stem: &str,
    command: &str,
    body: impl FnOnce(&ExperimentConfig, &Path) -> Result<Manifest>,
) -> Result<()> {
    let cfg = common.config()?;
    let run = Run::start(&common.out, stem, command, &cfg)?;
    let outcome = body(&cfg, &common.out);
    run.finish(&outcome)?;
    outcome.map(|_| ())
}

fn write_sweep(r: &SweepResult, out: &Path, stem: &str, spec: Option<PlotSpec>) -> Result<()> {
    r.write_csv(out, stem)?;
    if let Some(spec) = spec {
        write_plot(out.join(format!("{stem}.svg")), &r.summary_csv(), &spec)
            .with_context(|| format!("plotting {stem}"))?;
    }
    Ok(())
}

fn accuracy_margin_spec(title: &str, x_label: &str) -> PlotSpec {
    PlotSpec {
        title: title.into(),
        x_label: x_label.into(),
        y_label: "bit accuracy".into(),
        y2_label: Some("stability margin".into()),
        series: vec![
            Series::new("bit_accuracy", "bit accuracy"),
            Series::new("stability_margin", "stability margin").secondary(),
        ],
        exclude_axis: vec![FULL_PRECISION_BITS],
        ..PlotSpec::default()
    }
}

/// Plot layout for each sweep CSV stem.
pub fn plot_spec(stem: &str) -> Option<PlotSpec> {
    let base = stem.strip_prefix("pn2_").unwrap_or(stem);
    Some(match base {
        "quantization" => accuracy_margin_spec("Quantization", "bit depth"),
        "pruning" => accuracy_margin_spec("Magnitude pruning", "sparsity"),
        "noise" => PlotSpec {
            title: "Recall under input noise".into(),
            x_label: "flip fraction".into(),
            y_label: "recall accuracy".into(),
            series: vec![Series::new("recall_full", "full precision"), Series::new("recall_q2", "2-bit")],
            ..PlotSpec::default()
        },
        "scaling" => PlotSpec {
            title: "Margin degradation vs squared step".into(),
            x_label: "step squared".into(),
            y_label: "margin degradation".into(),
            series: vec![Series::new("margin_degradation", "mean degradation")],
            log_x: true,
            log_y: true,
            x_metric: Some("delta_squared".into()),
            ..PlotSpec::default()
        },
        "gamma" => PlotSpec {
            title: "2-bit degradation vs kernel locality".into(),
            x_label: "gamma".into(),
            y_label: "accuracy".into(),
            series: vec![
                Series::new("accuracy_degradation", "2-bit degradation"),
                Series::new("baseline_bit_accuracy", "full-precision accuracy"),
            ],
            log_x: true,
            ..PlotSpec::default()
        },
        "histogram" => PlotSpec {
            title: "Trained weight distribution".into(),
            x_label: "weight".into(),
            y_label: "count".into(),
            series: vec![Series::new("count", "count")],
            ..PlotSpec::default()
        },
        _ => return None,
    })
}

fn train(common: &Common) -> Result<()> {
    let reg = common.regularizer()?;
    with_run(common, "train", "train", |cfg, out| {
        let choice = resolve_gamma(cfg)?;
        let model = train_trial(cfg, choice.gamma, 0, reg)?;
        let report = MetricsReport::evaluate(&model.network());
        let tc = cfg.train_config(reg);
        let file = WeightsFile {
            header: WeightsHeader {
                gamma: choice.gamma,
                lambda: tc.lambda,
                regularizer: reg,
                seed: cfg.seed,
                compression: khm_core::CompressionSpec::None,
            },
            weights: model.weights().clone(),
        };
        file.write(out.join("weights.khmw"))?;
        let mut csv = String::from("metric_name,value\n");
        for (k, v) in [
            ("bit_accuracy", report.bit_accuracy),
            ("stability_margin", report.stability_margin),
            ("zero_fraction", zero_fraction(model.weights())),
            ("max_iterations", model.report.max_iterations() as f64),
            ("max_residual", model.report.max_residual()),
        ] {
            csv.push_str(&format!("{k},{v}\n"));
        }
        fs::write(out.join("train.csv"), csv)?;
        let mut m = Manifest::default();
        choice.record(&mut m);
        m.set("regularizer", reg.tag());
        m.set("lambda_used", tc.lambda);
        m.set("converged", model.report.converged());
        m.set("weights_file", "weights.khmw");
        println!(
            "trained P = {} N = {} gamma = {}: bit accuracy {:.4}, margin {:.4}, converged {}",
            cfg.p(),
            cfg.n,
            choice.gamma,
            report.bit_accuracy,
            report.stability_margin,
            model.report.converged()
        );
        Ok(m)
    })
}

fn sweep(common: &Common, stem: &str, command: &str, f: fn(&ExperimentConfig) -> khm_core::Result<SweepResult>) -> Result<()> {
    with_run(common, stem, command, |cfg, out| {
        let r = f(cfg)?;
        write_sweep(&r, out, stem, plot_spec(stem))?;
        print_summary(&r);
        Ok(r.manifest)
    })
}

fn print_summary(r: &SweepResult) {
    println!("{} sweep over {}:", r.name, r.axis);
    for row in &r.summary {
        println!("  {:>10} {:<28} {:>12.6} ± {:.6}", row.axis_value, row.metric, row.mean, row.std);
    }
}

fn scaling(common: &Common, regime: &str) -> Result<()> {
    let regime: Regime = regime.parse().context("--regime")?;
    let stem = format!("scaling_{}", regime.tag());
    with_run(common, &stem, "scaling", |cfg, out| {
        let r = run_scaling_experiment(cfg, regime)?;
        let mut spec = plot_spec("scaling").expect("known stem");
        spec.title = format!("Margin degradation vs squared step ({})", regime.tag());
        spec.fit = r.fit.map(|f| FitLine {
            slope: f.slope,
            intercept: f.intercept,
            r_squared: f.r_squared,
        });
        r.sweep.write_csv(out, &stem)?;
        // the local regime may have no positive degradations to draw on log axes
        if let Err(e) = write_plot(out.join(format!("{stem}.svg")), &r.sweep.summary_csv(), &spec) {
            eprintln!("note: no scaling plot: {e}");
        }
        print_summary(&r.sweep);
        match (&r.fit, &r.fit_error) {
            (Some(f), _) => println!(
                "fit over {} points: beta {:.4}, R^2 {:.4}",
                f.points_used, f.slope, f.r_squared
            ),
            (None, Some(e)) => println!("fit unavailable: {e}"),
            (None, None) => {}
        }
        Ok(r.sweep.manifest)
    })
}

fn walsh(common: &Common) -> Result<()> {
    with_run(common, "walsh", "walsh", |cfg, out| {
        let r = run_walsh_experiment(cfg)?;
        r.sweep.write_csv(out, "walsh")?;
        fs::write(out.join("walsh_influence.csv"), influence_csv(&r.profiles_l2, &r.profiles_l1))?;
        print_summary(&r.sweep);
        println!("pooled Gini: L2 {:.4}, L1 {:.4}", r.gini_l2, r.gini_l1);
        let mut m = r.sweep.manifest.clone();
        m.set("gini_l2", r.gini_l2);
        m.set("gini_l1", r.gini_l1);
        Ok(m)
    })
}

fn replicate(common: &Common) -> Result<()> {
    with_run(common, "pn2", "replicate-pn2", |cfg, out| {
        let (q, p) = run_replication_pn2(cfg)?;
        write_sweep(&q, out, "pn2_quantization", plot_spec("pn2_quantization"))?;
        write_sweep(&p, out, "pn2_pruning", plot_spec("pn2_pruning"))?;
        print_summary(&q);
        print_summary(&p);
        let mut m = q.manifest.clone();
        m.set("config.load", 2.0);
        Ok(m)
    })
}

fn calibrate(common: &Common) -> Result<()> {
    with_run(common, "calibration", "calibrate", |cfg, out| {
        let c = calibrate_gamma(cfg)?;
        let mut csv = String::from("gamma,mean_margin,min_bit_accuracy,mean_bit_accuracy,mean_recall,converged,selected\n");
        for s in &c.candidates {
            csv.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                s.gamma,
                s.mean_margin,
                s.min_bit_accuracy,
                s.mean_bit_accuracy,
                s.mean_recall,
                s.converged,
                s.gamma == c.gamma_star
            ));
        }
        fs::write(out.join("calibration.csv"), csv)?;
        println!("gamma* = {}", c.gamma_star);
        if let Some(w) = &c.warning {
            println!("warning: {w}");
        }
        let mut m = Manifest::default();
        c.record(&mut m);
        Ok(m)
    })
}

fn histogram(common: &Common) -> Result<()> {
    with_run(common, "histogram", "histogram", |cfg, out| {
        let h = weight_histogram(cfg)?;
        fs::write(out.join("histogram_bins.csv"), h.csv())?;
        let mut summary = String::from(khm_core::experiments::SUMMARY_HEADER);
        summary.push('\n');
        for (b, c) in h.histogram.counts.iter().enumerate() {
            summary.push_str(&format!("{},count,{c},0,1\n", h.histogram.center(b)));
        }
        fs::write(out.join("histogram.csv"), &summary)?;
        write_plot(out.join("histogram.svg"), &summary, &plot_spec("histogram").expect("known stem"))?;
        println!(
            "central mass {:.4}, modes {:.4} / {:.4}, valley depth {:.3}, bimodal {}",
            h.stats.central_mass,
            h.stats.mode_low,
            h.stats.mode_high,
            h.stats.valley_depth,
            h.stats.is_bimodal()
        );
        Ok(h.manifest)
    })
}

/// Re-render every known plot found in `out`.
fn report(out: &Path) -> Result<()> {
    if !out.is_dir() {
        bail!("{} is not a directory", out.display());
    }
    let mut entries: Vec<PathBuf> = fs::read_dir(out)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "csv"))
        .collect();
    entries.sort();
    let mut rendered = 0;
    for path in entries {
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_string();
        let key = if stem.starts_with("scaling_") { "scaling" } else { stem.as_str() };
        let Some(mut spec) = plot_spec(key) else { continue };
        if key == "scaling" {
            spec.fit = read_fit(&out.join(format!("{stem}.manifest.txt")));
        }
        let csv = fs::read_to_string(&path)?;
        match write_plot(out.join(format!("{stem}.svg")), &csv, &spec) {
            Ok(()) => {
                rendered += 1;
                println!("{stem}: plot written");
            }
            Err(e) => println!("{stem}: {e}"),
        }
        if let Ok(rows) = crate::plot::parse_summary(&csv) {
            for r in rows.iter().filter(|r| spec.series.iter().any(|s| s.metric == r.metric)) {
                println!("  {:>10} {:<28} {:>12.6} ± {:.6}", r.axis_value, r.metric, r.mean, r.std);
            }
        }
    }
    if rendered == 0 {
        bail!("no plottable sweep CSVs in {}", out.display());
    }
    Ok(())
}

fn read_fit(manifest: &Path) -> Option<FitLine> {
    let m = Manifest::parse(&fs::read_to_string(manifest).ok()?).ok()?;
    let get = |k: &str| m.get(k)?.parse::<f64>().ok();
    Some(FitLine {
        slope: get("fit.beta")?,
        intercept: get("fit.intercept")?,
        r_squared: get("fit.r_squared")?,
    })
}

pub fn run(cli: Cli) -> Result<()> {
    match &cli.command {
        Command::Train(c) => train(c),
        Command::QuantizeSweep(c) => sweep(c, "quantization", "quantize-sweep", run_quantization_sweep),
        Command::PruneSweep(c) => sweep(c, "pruning", "prune-sweep", run_pruning_sweep),
        Command::NoiseSweep(c) => sweep(c, "noise", "noise-sweep", run_noise_sweep),
        Command::Scaling { common, regime } => scaling(common, regime),
        Command::GammaSweep(c) => sweep(c, "gamma", "gamma-sweep", run_gamma_sweep),
        Command::Walsh(c) => walsh(c),
        Command::ReplicatePn2(c) => replicate(c),
        Command::Calibrate(c) => calibrate(c),
        Command::Histogram(c) => histogram(c),
        Command::Report { out } => report(out),
    }
}
