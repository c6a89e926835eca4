//! Kernel logistic regression for the dual weights.
//!
//! Each output neuron `j` is an independent binary problem over the stored
//! patterns: with `f = K·α_j` and labels `y_ν = ξ^ν_j`,
//!
//! ```text
//! L_j(α) = Σ_ν log(1 + exp(−y_ν f_ν)) + λ·αᵀKα        (L2, kernel norm)
//! L_j(α) = Σ_ν log(1 + exp(−y_ν f_ν)) + λ·‖α‖₁          (L1, Lasso)
//! ```
//!
//! Columns are advanced together so the two `P x P` by `P x N` products per
//! iteration run as matrix multiplies, but every column keeps its own step
//! size and stopping state; a column's trajectory depends only on its own
//! data.

use ndarray::{Array1, Array2, ArrayView1, Zip};

use crate::error::{invalid, Error, Result};
use crate::kernel::KernelContext;
use crate::pattern::{DualWeights, PatternSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Regularizer {
    /// `λ·αᵀKα`, the kernel-norm weight decay.
    L2,
    /// `λ·‖α‖₁`.
    L1,
}

impl Regularizer {
    pub fn tag(self) -> &'static str {
        match self {
            Regularizer::L2 => "l2",
            Regularizer::L1 => "l1",
        }
    }
}

impl std::str::FromStr for Regularizer {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "l2" => Ok(Regularizer::L2),
            "l1" => Ok(Regularizer::L1),
            other => Err(invalid("regularizer", format!("expected l2 or l1, got {other}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub regularizer: Regularizer,
    pub lambda: f64,
    pub max_iters: usize,
    /// Stop once the per-column residual is at most `tol * P`.
    pub tol: f64,
}

impl TrainConfig {
    pub const DEFAULT_MAX_ITERS: usize = 10_000;
    pub const DEFAULT_TOL: f64 = 1e-6;

    pub fn l2(lambda: f64) -> Self {
        Self {
            regularizer: Regularizer::L2,
            lambda,
            max_iters: Self::DEFAULT_MAX_ITERS,
            tol: Self::DEFAULT_TOL,
        }
    }

    pub fn l1(lambda: f64) -> Self {
        Self {
            regularizer: Regularizer::L1,
            ..Self::l2(lambda)
        }
    }

    /// Scale-aware default strength `1e-4 * P`.
    pub fn default_lambda(p: usize) -> f64 {
        1e-4 * p as f64
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(invalid("lambda", format!("must be finite and >= 0, got {}", self.lambda)));
        }
        if self.max_iters == 0 {
            return Err(invalid("max_iters", "must be at least 1"));
        }
        if !(self.tol > 0.0 && self.tol.is_finite()) {
            return Err(invalid("tol", format!("must be positive, got {}", self.tol)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ColumnReport {
    pub iterations: usize,
    /// Final gradient norm (L2) or fixed-point residual (L1).
    pub residual: f64,
    pub converged: bool,
}

/// Trained weights with per-column convergence diagnostics.
#[derive(Debug, Clone)]
pub struct TrainReport {
    pub weights: DualWeights,
    pub columns: Vec<ColumnReport>,
}

impl TrainReport {
    pub fn converged(&self) -> bool {
        self.columns.iter().all(|c| c.converged)
    }

    pub fn max_residual(&self) -> f64 {
        self.columns.iter().map(|c| c.residual).fold(0.0, f64::max)
    }

    pub fn max_iterations(&self) -> usize {
        self.columns.iter().map(|c| c.iterations).max().unwrap_or(0)
    }

    /// The weights, or [`Error::NonConvergence`] naming the worst column.
    pub fn require_converged(self) -> Result<DualWeights> {
        let worst = self
            .columns
            .iter()
            .enumerate()
            .filter(|(_, c)| !c.converged)
            .max_by(|a, b| a.1.residual.total_cmp(&b.1.residual));
        match worst {
            None => Ok(self.weights),
            Some((column, c)) => Err(Error::NonConvergence {
                column,
                iterations: c.iterations,
                residual: c.residual,
            }),
        }
    }
}

#[inline]
fn softplus_neg(z: f64) -> f64 {
    // log(1 + exp(-z))
    if z > 0.0 {
        (-z).exp().ln_1p()
    } else {
        -z + z.exp().ln_1p()
    }
}

#[inline]
fn logistic(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn data_loss(y: ArrayView1<'_, f64>, f: ArrayView1<'_, f64>) -> f64 {
    y.iter().zip(f).map(|(&y, &f)| softplus_neg(y * f)).sum()
}

/// `L_j(α)` for one column, given labels `y ∈ {-1, +1}^P`.
pub fn column_objective(
    gram: &Array2<f64>,
    y: ArrayView1<'_, f64>,
    alpha: ArrayView1<'_, f64>,
    regularizer: Regularizer,
    lambda: f64,
) -> f64 {
    let f = gram.dot(&alpha);
    let penalty = match regularizer {
        Regularizer::L2 => lambda * alpha.dot(&f),
        Regularizer::L1 => lambda * alpha.iter().map(|a| a.abs()).sum::<f64>(),
    };
    data_loss(y, f.view()) + penalty
}

/// Analytic gradient of the L2 column objective: `K(σ(Kα) − t) + 2λKα`.
pub fn column_gradient_l2(
    gram: &Array2<f64>,
    y: ArrayView1<'_, f64>,
    alpha: ArrayView1<'_, f64>,
    lambda: f64,
) -> Array1<f64> {
    let f = gram.dot(&alpha);
    let g: Array1<f64> = Zip::from(&f)
        .and(y)
        .and(alpha)
        .map_collect(|&f, &y, &a| logistic(f) - (y + 1.0) / 2.0 + 2.0 * lambda * a);
    gram.dot(&g)
}

fn check_inputs(patterns: &PatternSet, ctx: &KernelContext, cfg: &TrainConfig) -> Result<()> {
    cfg.validate()?;
    ctx.check_patterns(patterns)
}

/// Sum of per-column objectives under `cfg`'s regularizer.
pub fn objective_value(
    patterns: &PatternSet,
    ctx: &KernelContext,
    weights: &DualWeights,
    cfg: &TrainConfig,
) -> Result<f64> {
    ctx.check_patterns(patterns)?;
    weights.check_matches(patterns)?;
    let y = patterns.to_f64();
    let alpha = weights.alpha();
    let f = ctx.gram().dot(alpha);
    let loss: f64 = Zip::from(&y).and(&f).fold(0.0, |acc, &y, &f| acc + softplus_neg(y * f));
    let penalty = match cfg.regularizer {
        Regularizer::L2 => cfg.lambda * Zip::from(alpha).and(&f).fold(0.0, |acc, &a, &f| acc + a * f),
        Regularizer::L1 => cfg.lambda * alpha.iter().map(|a| a.abs()).sum::<f64>(),
    };
    Ok(loss + penalty)
}

pub fn train(patterns: &PatternSet, ctx: &KernelContext, cfg: &TrainConfig) -> Result<TrainReport> {
    match cfg.regularizer {
        Regularizer::L2 => klr_train(patterns, ctx, cfg),
        Regularizer::L1 => lasso_train(patterns, ctx, cfg),
    }
}

const ARMIJO: f64 = 1e-4;
const MAX_STEP: f64 = 1e12;
const MIN_STEP: f64 = 1e-30;

/// L2-regularized KLR, one independent problem per output neuron.
///
/// The search direction is `g = σ(Kα) − t + 2λα`; the true gradient is `Kg`,
/// so `g` is a descent direction whenever the gradient is nonzero. Steps
/// start from twice the previous accepted step and are halved until the
/// Armijo condition holds.
pub fn klr_train(patterns: &PatternSet, ctx: &KernelContext, cfg: &TrainConfig) -> Result<TrainReport> {
    check_inputs(patterns, ctx, cfg)?;
    if cfg.regularizer != Regularizer::L2 {
        return Err(invalid("regularizer", "klr_train needs the L2 regularizer"));
    }
    let k = ctx.gram();
    let y = patterns.to_f64();
    let (p, n) = y.dim();
    let lambda = cfg.lambda;
    let threshold = cfg.tol * p as f64;

    let mut alpha = Array2::<f64>::zeros((p, n));
    let mut state = vec![ColumnState::new(1.0); n];

    for _ in 0..cfg.max_iters {
        let f = k.dot(&alpha);
        let g = Zip::from(&f)
            .and(&y)
            .and(&alpha)
            .map_collect(|&f, &y, &a| logistic(f) - (y + 1.0) / 2.0 + 2.0 * lambda * a);
        let grad = k.dot(&g);

        let mut any_active = false;
        for (j, st) in state.iter_mut().enumerate() {
            if st.done {
                continue;
            }
            let grad_j = grad.column(j);
            st.residual = grad_j.dot(&grad_j).sqrt();
            if st.residual <= threshold {
                st.done = true;
                st.converged = true;
                continue;
            }
            any_active = true;

            let (y_j, f_j, g_j) = (y.column(j), f.column(j), g.column(j));
            let mut a_j = alpha.column_mut(j);
            let current = data_loss(y_j, f_j) + lambda * a_j.dot(&f_j);
            let slope = g_j.dot(&grad_j);
            let mut step = (st.step * 2.0).min(MAX_STEP);
            loop {
                let mut trial = 0.0;
                let mut penalty = 0.0;
                for nu in 0..p {
                    let a = a_j[nu] - step * g_j[nu];
                    let fv = f_j[nu] - step * grad_j[nu];
                    trial += softplus_neg(y_j[nu] * fv);
                    penalty += a * fv;
                }
                trial += lambda * penalty;
                if trial <= current - ARMIJO * step * slope {
                    a_j.scaled_add(-step, &g_j);
                    st.step = step;
                    st.iterations += 1;
                    break;
                }
                step *= 0.5;
                if step < MIN_STEP {
                    // no representable decrease left at this residual
                    st.done = true;
                    break;
                }
            }
        }
        if !any_active {
            break;
        }
    }

    finish(alpha, state)
}

/// L1-regularized KLR by proximal gradient (soft thresholding).
///
/// The first step is `1/L` with `L = λ_max(K)²/4`, the Lipschitz constant of
/// the data-term gradient. After an accepted iteration the step is doubled
/// and it is halved until the composite sufficient-decrease test passes.
/// The residual is the gradient mapping `‖α − α⁺‖ / step`.
pub fn lasso_train(patterns: &PatternSet, ctx: &KernelContext, cfg: &TrainConfig) -> Result<TrainReport> {
    check_inputs(patterns, ctx, cfg)?;
    if cfg.regularizer != Regularizer::L1 {
        return Err(invalid("regularizer", "lasso_train needs the L1 regularizer"));
    }
    let k = ctx.gram();
    let y = patterns.to_f64();
    let (p, n) = y.dim();
    let lambda = cfg.lambda;
    let threshold = cfg.tol * p as f64;

    let lmax = ctx.largest_eigenvalue();
    let lipschitz = (lmax * lmax / 4.0).max(f64::MIN_POSITIVE);
    let base_step = 1.0 / lipschitz;

    let mut alpha = Array2::<f64>::zeros((p, n));
    let mut f = Array2::<f64>::zeros((p, n));
    let mut state = vec![ColumnState::new(base_step / 2.0); n];

    for _ in 0..cfg.max_iters {
        let s = Zip::from(&f).and(&y).map_collect(|&f, &y| logistic(f) - (y + 1.0) / 2.0);
        let grad = k.dot(&s);

        let mut proposal = alpha.clone();
        let mut steps = vec![0.0; n];
        let mut any_active = false;
        for j in 0..n {
            let st = &state[j];
            if st.done {
                continue;
            }
            any_active = true;
            steps[j] = (st.step * 2.0).min(base_step * MAX_STEP);
            prox_step(alpha.column(j), grad.column(j), steps[j], lambda, proposal.column_mut(j));
        }
        if !any_active {
            break;
        }
        let mut f_next = k.dot(&proposal);

        for (j, st) in state.iter_mut().enumerate() {
            if st.done {
                continue;
            }
            let (a_j, y_j, f_j, grad_j) = (alpha.column(j), y.column(j), f.column(j), grad.column(j));
            let smooth_now = data_loss(y_j, f_j);
            let mut step = steps[j];
            loop {
                let cand = proposal.column(j);
                let diff = &cand - &a_j;
                let model = smooth_now + grad_j.dot(&diff) + diff.dot(&diff) / (2.0 * step);
                let smooth_next = data_loss(y_j, f_next.column(j));
                if smooth_next <= model * (1.0 + 1e-15) + 1e-300 {
                    st.residual = diff.dot(&diff).sqrt() / step;
                    st.step = step;
                    st.iterations += 1;
                    if st.residual <= threshold {
                        st.done = true;
                        st.converged = true;
                    }
                    break;
                }
                step *= 0.5;
                if step < MIN_STEP {
                    st.done = true;
                    proposal.column_mut(j).assign(&a_j);
                    f_next.column_mut(j).assign(&f_j);
                    break;
                }
                prox_step(a_j, grad_j, step, lambda, proposal.column_mut(j));
                let fc = k.dot(&proposal.column(j));
                f_next.column_mut(j).assign(&fc);
            }
        }
        alpha = proposal;
        f = f_next;
    }

    finish(alpha, state)
}

fn prox_step(
    alpha: ArrayView1<'_, f64>,
    grad: ArrayView1<'_, f64>,
    step: f64,
    lambda: f64,
    mut out: ndarray::ArrayViewMut1<'_, f64>,
) {
    let shrink = lambda * step;
    Zip::from(&mut out).and(alpha).and(grad).for_each(|o, &a, &g| {
        let z = a - step * g;
        *o = z.signum() * (z.abs() - shrink).max(0.0);
    });
}

#[derive(Debug, Clone, Copy)]
struct ColumnState {
    step: f64,
    iterations: usize,
    residual: f64,
    converged: bool,
    done: bool,
}

impl ColumnState {
    fn new(step: f64) -> Self {
        Self {
            step,
            iterations: 0,
            residual: f64::INFINITY,
            converged: false,
            done: false,
        }
    }
}

fn finish(alpha: Array2<f64>, state: Vec<ColumnState>) -> Result<TrainReport> {
    let columns = state
        .into_iter()
        .map(|s| ColumnReport {
            iterations: s.iterations,
            residual: s.residual,
            converged: s.converged,
        })
        .collect();
    Ok(TrainReport {
        weights: DualWeights::new(alpha)?,
        columns,
    })
}

/// Fraction of exactly-zero weights.
pub fn zero_fraction(weights: &DualWeights) -> f64 {
    let zeros = weights.alpha().iter().filter(|&&a| a == 0.0).count();
    zeros as f64 / weights.len() as f64
}
