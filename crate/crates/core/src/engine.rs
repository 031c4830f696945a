//! Per-batch AD-IHT solver and the stream driver.
//!
//! For batch `b` with cumulative sample size `N_b`, each inner iteration does
//!
//! ```text
//! H       <- beta - eta_b * (grad f_b(beta) + inter + hess beta)
//! lambda  <- max(kappa * lambda, lambda_floor)
//! beta    <- T_lambda(H)
//! ```
//!
//! for `ceil(log_kappa(lambda_floor / lambda_init)) + ceil(C1 ln N_b)` iterations.
//! The final iterate is the batch estimate; it is then folded into the
//! summaries and the batch is dropped.

use alloc::vec;
use alloc::vec::Vec;
use core::time::Duration;

use crate::error::{check_len, Error, Result, StreamError};
use crate::glm::{accumulate_gradient, BatchData, GlmFamily};
use crate::linalg::{self, Matrix};
use crate::summary::{encode_checkpoint, SummaryState};
use crate::threshold::{hard_threshold_in_place, ThresholdSchedule};

/// Any coordinate above this magnitude is treated as divergence.
pub const DIVERGENCE_BOUND: f64 = 1e12;

/// Multiplier on the data-driven initial threshold so the first cold-start
/// step is strictly below it.
pub const LAMBDA_INIT_MARGIN: f64 = 1.05;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LambdaInit {
    /// Derived from the surrogate gradient at zero; see [`compute_lambda_init`].
    FromGradient,
    Value(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StartMode {
    /// Every batch starts from the zero vector.
    Cold,
    /// Every batch starts from the previous batch's estimate.
    Warm,
}

/// How the learning rate constant is turned into `eta_b`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepRule {
    /// `eta_b = eta_const / N_b`.
    Fixed,
    /// `eta_b = eta_const / (L N_b)` where `L` is the top eigenvalue of the
    /// averaged curvature `(hess + hess f_b(0)) / N_b` restricted to the
    /// `coords` coordinates with the largest diagonal. The threshold floor
    /// is divided by `sqrt(L)`.
    Calibrated { coords: usize, power_iters: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct IhtConfig {
    /// Threshold decay rate in `(0, 1)`.
    pub kappa: f64,
    pub eta_const: f64,
    pub step_rule: StepRule,
    /// `C1` in the `C1 ln N` refinement count.
    pub refine_const: f64,
    /// `c` in `lambda_floor = c sqrt(ln(b p) / N_b)`.
    pub lambda_floor_const: f64,
    pub lambda_init: LambdaInit,
    pub start_mode: StartMode,
    /// Hard cap on inner iterations; `None` means ten times the planned count.
    pub max_iters_cap: Option<usize>,
}

impl Default for IhtConfig {
    fn default() -> Self {
        IhtConfig {
            kappa: 0.8,
            eta_const: 1.0,
            step_rule: StepRule::Calibrated {
                coords: 20,
                power_iters: 30,
            },
            refine_const: 2.0,
            lambda_floor_const: 1.5,
            lambda_init: LambdaInit::FromGradient,
            start_mode: StartMode::Cold,
            max_iters_cap: None,
        }
    }
}

impl IhtConfig {
    pub fn validate(&self) -> Result<()> {
        fn bad(name: &'static str, reason: &str) -> Error {
            Error::InvalidParameter {
                name,
                reason: reason.into(),
            }
        }
        if !(self.kappa > 0.0 && self.kappa < 1.0) {
            return Err(bad("kappa", "must lie in (0, 1)"));
        }
        if !(self.eta_const > 0.0) || !self.eta_const.is_finite() {
            return Err(bad("eta_const", "must be positive and finite"));
        }
        if !(self.refine_const > 0.0) || !self.refine_const.is_finite() {
            return Err(bad("refine_const", "must be positive and finite"));
        }
        if !(self.lambda_floor_const > 0.0) || !self.lambda_floor_const.is_finite() {
            return Err(bad("lambda_floor_const", "must be positive and finite"));
        }
        if let LambdaInit::Value(v) = self.lambda_init {
            if !(v > 0.0) || !v.is_finite() {
                return Err(bad("lambda_init", "must be positive and finite"));
            }
        }
        if let StepRule::Calibrated {
            coords,
            power_iters,
        } = self.step_rule
        {
            if coords == 0 || power_iters == 0 {
                return Err(bad("step_rule", "calibration needs coords >= 1 and power_iters >= 1"));
            }
        }
        if self.max_iters_cap == Some(0) {
            return Err(bad("max_iters_cap", "must be at least 1"));
        }
        Ok(())
    }
}

/// One inner iteration as recorded in the trace.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceEntry {
    /// 1-based iteration number.
    pub t: usize,
    /// Threshold applied at this iteration.
    pub lambda: f64,
    pub support_size: usize,
    /// `|| eta_b * gradient ||_2` for this step.
    pub grad_step_norm: f64,
}

/// Output of one batch fit.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchFit {
    pub beta_hat: Vec<f64>,
    pub trace: Vec<TraceEntry>,
    pub eta: f64,
    pub lambda_init: f64,
    pub lambda_floor: f64,
    /// Cumulative sample size including the current batch.
    pub n_cumulative: usize,
    pub planned_iterations: usize,
}

impl BatchFit {
    pub fn iterations_run(&self) -> usize {
        self.trace.len()
    }

    pub fn lambda_final(&self) -> f64 {
        self.trace.last().map_or(self.lambda_init, |e| e.lambda)
    }
}

/// Per-batch output handed to the record sink.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimateRecord {
    pub batch_index: usize,
    pub beta_hat: Vec<f64>,
    pub support: Vec<usize>,
    pub iterations_run: usize,
    pub lambda_final: f64,
    pub wall_time: Duration,
    pub n_cumulative: usize,
}

/// Gradient source for the IHT loop. The streaming engine uses the
/// summary-based surrogate; the offline oracle uses exact retained data.
pub(crate) trait GradientSource {
    fn p(&self) -> usize;
    /// Cumulative sample size the step size and floor are scaled by.
    fn n_cumulative(&self) -> usize;
    /// Batch index `b` used in the `ln(b p)` floor.
    fn batch_count(&self) -> usize;
    /// `out = gradient(beta)`; `out` arrives zeroed.
    fn gradient_into(&self, family: &GlmFamily, beta: &[f64], out: &mut [f64]);
    /// Diagonal of the cumulative curvature with the current batch taken at zero.
    fn curvature_diag(&self, family: &GlmFamily) -> Vec<f64>;
    /// Same curvature restricted to `idx`.
    fn curvature_block(&self, family: &GlmFamily, idx: &[usize]) -> Matrix;
}

struct Streaming<'a> {
    state: &'a SummaryState,
    batch: &'a BatchData,
}

impl GradientSource for Streaming<'_> {
    fn p(&self) -> usize {
        self.state.p()
    }

    fn n_cumulative(&self) -> usize {
        self.state.n_total() + self.batch.n()
    }

    fn batch_count(&self) -> usize {
        self.batch.batch_index()
    }

    fn gradient_into(&self, family: &GlmFamily, beta: &[f64], out: &mut [f64]) {
        accumulate_gradient(family, self.batch, beta, out);
        self.state.add_history(beta, out);
    }

    fn curvature_diag(&self, family: &GlmFamily) -> Vec<f64> {
        let mut d = zero_curvature_diag(family, core::slice::from_ref(self.batch), self.p());
        if self.state.batches_absorbed() > 0 {
            for (j, dj) in d.iter_mut().enumerate() {
                *dj += self.state.hess().get(j, j);
            }
        }
        d
    }

    fn curvature_block(&self, family: &GlmFamily, idx: &[usize]) -> Matrix {
        let mut block = zero_curvature_block(family, core::slice::from_ref(self.batch), idx);
        if self.state.batches_absorbed() > 0 {
            block.add_assign(&self.state.hess().principal_submatrix(idx));
        }
        block
    }
}

/// Diagonal of `sum_j hess f_j(0)`.
pub(crate) fn zero_curvature_diag(family: &GlmFamily, batches: &[BatchData], p: usize) -> Vec<f64> {
    let w = family.g2(0.0);
    let mut d = vec![0.0; p];
    for b in batches {
        for i in 0..b.n() {
            for (dj, x) in d.iter_mut().zip(b.design().row(i)) {
                *dj += w * x * x;
            }
        }
    }
    d
}

/// `sum_j hess f_j(0)` restricted to `idx`.
pub(crate) fn zero_curvature_block(family: &GlmFamily, batches: &[BatchData], idx: &[usize]) -> Matrix {
    let w = family.g2(0.0);
    let k = idx.len();
    let mut m = Matrix::zeros(k, k);
    let mut x = vec![0.0; k];
    for b in batches {
        for i in 0..b.n() {
            let row = b.design().row(i);
            for (xa, &j) in x.iter_mut().zip(idx) {
                *xa = row[j];
            }
            m.syr_upper(w, &x);
        }
    }
    m.mirror_upper();
    m
}

/// `c sqrt(ln(b p) / N)`, with `b p` clamped to at least 2 so the floor
/// stays positive for a one-dimensional first batch.
pub fn lambda_floor(config: &IhtConfig, batch_index: usize, p: usize, n_cumulative: usize) -> f64 {
    let bp = (batch_index as f64 * p as f64).max(2.0);
    config.lambda_floor_const * libm::sqrt(libm::log(bp) / n_cumulative.max(1) as f64)
}

/// The floor matched to the calibrated step. With `eta = c / (L N)` the
/// step-scaled score noise behaves like `sqrt(ln(bp) / (L N))`, so the floor
/// is divided by `sqrt(L)`. Unchanged under the fixed rule.
fn scaled_floor(config: &IhtConfig, batch_index: usize, p: usize, n_cumulative: usize, curvature: f64) -> f64 {
    let base = lambda_floor(config, batch_index, p, n_cumulative);
    match config.step_rule {
        StepRule::Fixed => base,
        StepRule::Calibrated { .. } => base / libm::sqrt(curvature),
    }
}

/// `(eta_b, curvature)`. The curvature estimate is 1 for the fixed rule.
pub(crate) fn step_size<S: GradientSource>(src: &S, family: &GlmFamily, config: &IhtConfig) -> (f64, f64) {
    let n = src.n_cumulative().max(1) as f64;
    match config.step_rule {
        StepRule::Fixed => (config.eta_const / n, 1.0),
        StepRule::Calibrated {
            coords,
            power_iters,
        } => {
            let diag = src.curvature_diag(family);
            let mut order: Vec<usize> = (0..diag.len()).collect();
            // stable: ties keep index order
            order.sort_by(|&a, &b| diag[b].total_cmp(&diag[a]));
            order.truncate(coords.min(diag.len()));
            order.sort_unstable();
            let block = src.curvature_block(family, &order);
            let top = linalg::power_iteration(&block, power_iters) / n;
            if top > 0.0 && top.is_finite() {
                (config.eta_const / (top * n), top)
            } else {
                (config.eta_const / n, 1.0)
            }
        }
    }
}

fn initial_threshold<S: GradientSource>(
    src: &S,
    family: &GlmFamily,
    config: &IhtConfig,
    eta: f64,
    floor: f64,
) -> f64 {
    match config.lambda_init {
        LambdaInit::Value(v) => v.max(floor),
        LambdaInit::FromGradient => {
            let p = src.p();
            let zero = vec![0.0; p];
            let mut g = vec![0.0; p];
            src.gradient_into(family, &zero, &mut g);
            let scale = eta * linalg::norm_inf(&g);
            if scale > 0.0 && scale.is_finite() {
                (LAMBDA_INIT_MARGIN * scale / config.kappa).max(floor)
            } else {
                floor
            }
        }
    }
}

/// Shared IHT loop for the streaming engine and the offline oracle.
pub(crate) fn run_iht<S: GradientSource>(
    src: &S,
    family: &GlmFamily,
    config: &IhtConfig,
    init: Option<&[f64]>,
) -> Result<BatchFit> {
    config.validate()?;
    let p = src.p();
    let n_cum = src.n_cumulative();
    let (eta, curvature) = step_size(src, family, config);
    let floor = scaled_floor(config, src.batch_count(), p, n_cum, curvature);
    let lambda_init = initial_threshold(src, family, config, eta, floor);
    let schedule = ThresholdSchedule::new(lambda_init, floor, config.kappa, config.refine_const)?;
    let planned = schedule.planned_iterations(n_cum);
    let cap = config.max_iters_cap.unwrap_or(planned.saturating_mul(10));
    let iterations = planned.min(cap);

    let mut beta = match init {
        Some(b) => {
            check_len("warm start length", p, b.len())?;
            b.to_vec()
        }
        None => vec![0.0; p],
    };
    let mut grad = vec![0.0; p];
    let mut lambda = lambda_init;
    let mut trace = Vec::with_capacity(iterations);
    for t in 1..=iterations {
        grad.iter_mut().for_each(|g| *g = 0.0);
        src.gradient_into(family, &beta, &mut grad);
        let mut step_sq = 0.0;
        for (b, g) in beta.iter_mut().zip(&grad) {
            let s = eta * g;
            step_sq += s * s;
            *b -= s;
        }
        lambda = schedule.next_threshold(lambda);
        let max_abs = linalg::norm_inf(&beta);
        if !(max_abs <= DIVERGENCE_BOUND) {
            return Err(Error::Divergence {
                iteration: t,
                max_abs,
            });
        }
        hard_threshold_in_place(&mut beta, lambda)?;
        trace.push(TraceEntry {
            t,
            lambda,
            support_size: beta.iter().filter(|v| **v != 0.0).count(),
            grad_step_norm: libm::sqrt(step_sq),
        });
    }
    Ok(BatchFit {
        beta_hat: beta,
        trace,
        eta,
        lambda_init,
        lambda_floor: floor,
        n_cumulative: n_cum,
        planned_iterations: planned,
    })
}

/// Runs the inner AD-IHT loop for one batch against the current summaries.
///
/// `warm_init` is required when `config.start_mode` is [`StartMode::Warm`] and
/// ignored otherwise.
pub fn fit_batch(
    state: &SummaryState,
    family: &GlmFamily,
    batch: &BatchData,
    config: &IhtConfig,
    warm_init: Option<&[f64]>,
) -> Result<BatchFit> {
    check_len("batch dimension", state.p(), batch.p())?;
    let init = match config.start_mode {
        StartMode::Cold => None,
        StartMode::Warm => Some(warm_init.ok_or(Error::InvalidParameter {
            name: "warm_init",
            reason: "warm start needs the previous estimate".into(),
        })?),
    };
    run_iht(&Streaming { state, batch }, family, config, init)
}

/// Initial threshold for a batch.
///
/// `FromGradient` returns `1.05 ||eta_b g(0)||_inf / kappa`, with `g` the
/// surrogate gradient. The schedule decays once before the first
/// thresholding, so this is the smallest threshold (up to the 5% margin)
/// that zeroes the whole first cold-start step. Falls back to the floor when
/// the gradient vanishes, and never returns less than the floor.
pub fn compute_lambda_init(
    state: &SummaryState,
    family: &GlmFamily,
    batch: &BatchData,
    config: &IhtConfig,
) -> Result<f64> {
    check_len("batch dimension", state.p(), batch.p())?;
    config.validate()?;
    let src = Streaming { state, batch };
    let (eta, curvature) = step_size(&src, family, config);
    let floor = scaled_floor(config, batch.batch_index(), state.p(), src.n_cumulative(), curvature);
    Ok(initial_threshold(&src, family, config, eta, floor))
}

/// What to do when a batch fails.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ErrorPolicy {
    #[default]
    Abort,
    /// Drop the failing batch without touching the state and keep going.
    Skip,
}

/// Receives one record per successfully processed batch.
pub trait RecordSink {
    fn record(&mut self, record: EstimateRecord);

    /// Called for each batch dropped under [`ErrorPolicy::Skip`].
    fn skipped(&mut self, _error: &StreamError) {}
}

impl<F: FnMut(EstimateRecord)> RecordSink for F {
    fn record(&mut self, record: EstimateRecord) {
        self(record)
    }
}

/// A streaming estimator that consumes one batch at a time.
pub trait OnlineEstimator {
    fn p(&self) -> usize;
    fn n_total(&self) -> usize;
    fn batches_absorbed(&self) -> usize;
    /// Most recent estimate (zeros before the first batch).
    fn current_estimate(&self) -> &[f64];
    /// Fits the batch, folds it into the state and drops it.
    fn step(&mut self, batch: BatchData) -> Result<EstimateRecord, StreamError>;
    /// Serialised state in the binary checkpoint layout.
    fn checkpoint(&self) -> Result<Vec<u8>>;
}

/// The AD-IHT stream learner: summaries plus the last estimate.
#[derive(Debug, Clone)]
pub struct AdIhtLearner {
    family: GlmFamily,
    config: IhtConfig,
    state: SummaryState,
    last: Vec<f64>,
}

impl AdIhtLearner {
    pub fn new(p: usize, family: GlmFamily, config: IhtConfig) -> Result<Self> {
        config.validate()?;
        Ok(AdIhtLearner {
            family,
            config,
            state: SummaryState::new(p)?,
            last: vec![0.0; p],
        })
    }

    /// Resumes from a decoded checkpoint.
    pub fn from_state(
        state: SummaryState,
        last_estimate: Vec<f64>,
        family: GlmFamily,
        config: IhtConfig,
    ) -> Result<Self> {
        config.validate()?;
        check_len("estimate length", state.p(), last_estimate.len())?;
        Ok(AdIhtLearner {
            family,
            config,
            state,
            last: last_estimate,
        })
    }

    pub fn state(&self) -> &SummaryState {
        &self.state
    }

    pub fn into_state(self) -> SummaryState {
        self.state
    }

    pub fn family(&self) -> &GlmFamily {
        &self.family
    }

    pub fn config(&self) -> &IhtConfig {
        &self.config
    }

    /// Like [`OnlineEstimator::step`] but also returns the iteration trace.
    pub fn step_traced(&mut self, batch: BatchData) -> Result<(EstimateRecord, BatchFit), StreamError> {
        let batch_index = batch.batch_index();
        let tag = |source| StreamError {
            batch_index,
            source,
        };
        let fit = fit_batch(
            &self.state,
            &self.family,
            &batch,
            &self.config,
            Some(&self.last),
        )
        .map_err(tag)?;
        self.state
            .absorb_batch(&self.family, batch, &fit.beta_hat)
            .map_err(tag)?;
        self.last.clone_from(&fit.beta_hat);
        let record = EstimateRecord {
            batch_index,
            support: linalg::support(&fit.beta_hat),
            beta_hat: fit.beta_hat.clone(),
            iterations_run: fit.iterations_run(),
            lambda_final: fit.lambda_final(),
            wall_time: Duration::ZERO,
            n_cumulative: fit.n_cumulative,
        };
        Ok((record, fit))
    }
}

impl OnlineEstimator for AdIhtLearner {
    fn p(&self) -> usize {
        self.state.p()
    }

    fn n_total(&self) -> usize {
        self.state.n_total()
    }

    fn batches_absorbed(&self) -> usize {
        self.state.batches_absorbed()
    }

    fn current_estimate(&self) -> &[f64] {
        &self.last
    }

    fn step(&mut self, batch: BatchData) -> Result<EstimateRecord, StreamError> {
        self.step_traced(batch).map(|(r, _)| r)
    }

    fn checkpoint(&self) -> Result<Vec<u8>> {
        encode_checkpoint(&self.state, &self.last)
    }
}

/// Drives any [`OnlineEstimator`] over a batch source. `clock` returns a
/// monotonic timestamp and is sampled around each step to fill `wall_time`.
pub fn drive_stream<E, I, K, C>(
    learner: &mut E,
    batches: I,
    policy: ErrorPolicy,
    mut clock: C,
    sink: &mut K,
) -> Result<(), StreamError>
where
    E: OnlineEstimator + ?Sized,
    I: IntoIterator<Item = BatchData>,
    K: RecordSink + ?Sized,
    C: FnMut() -> Duration,
{
    for batch in batches {
        let start = clock();
        match learner.step(batch) {
            Ok(mut record) => {
                record.wall_time = clock().saturating_sub(start);
                sink.record(record);
            }
            Err(e) => match policy {
                ErrorPolicy::Abort => return Err(e),
                ErrorPolicy::Skip => sink.skipped(&e),
            },
        }
    }
    Ok(())
}

/// Runs AD-IHT over a stream and returns the final summaries. Wall times are
/// reported as zero; use [`drive_stream`] with a real clock to time batches.
pub fn process_stream<I, K>(
    batches: I,
    p: usize,
    family: &GlmFamily,
    config: &IhtConfig,
    policy: ErrorPolicy,
    sink: &mut K,
) -> Result<SummaryState, StreamError>
where
    I: IntoIterator<Item = BatchData>,
    K: RecordSink + ?Sized,
{
    let mut learner = AdIhtLearner::new(p, *family, config.clone()).map_err(|source| StreamError {
        batch_index: 0,
        source,
    })?;
    drive_stream(&mut learner, batches, policy, || Duration::ZERO, sink)?;
    Ok(learner.into_state())
}
