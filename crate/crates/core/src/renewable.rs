//! The l1-penalised renewable estimator, kept as a comparison baseline.
//!
//! Every past score is expanded at the single latest estimate, so only the
//! cumulative Hessian is stored. Batch `b` solves
//!
//! ```text
//! min_beta  (1/N_b) [ f_b(beta) + 1/2 (beta - beta_prev)^T H_cum (beta - beta_prev) ] + lambda_b ||beta||_1
//! ```
//!
//! by a fixed number of proximal-gradient (ISTA) steps started at `beta_prev`.

use alloc::vec;
use alloc::vec::Vec;
use core::time::Duration;

use crate::engine::{EstimateRecord, OnlineEstimator, DIVERGENCE_BOUND};
use crate::error::{check_len, Error, Result, StreamError};
use crate::glm::{accumulate_gradient, batch_hessian, batch_loss, BatchData, Family, GlmFamily};
use crate::linalg::{self, Matrix};
use crate::summary::{encode_checkpoint, SummaryState};

/// `sign(z_j) max(|z_j| - tau, 0)`.
pub fn soft_threshold(z: &[f64], tau: f64) -> Result<Vec<f64>> {
    let mut out = z.to_vec();
    soft_threshold_in_place(&mut out, tau)?;
    Ok(out)
}

pub fn soft_threshold_in_place(z: &mut [f64], tau: f64) -> Result<()> {
    if !(tau >= 0.0) {
        return Err(Error::Domain("soft-threshold level must be nonnegative"));
    }
    for v in z.iter_mut() {
        let a = libm::fabs(*v) - tau;
        *v = if a > 0.0 { libm::copysign(a, *v) } else { 0.0 };
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct RenewableState {
    hess_cum: Matrix,
    beta_prev: Vec<f64>,
    n_total: usize,
    batches_absorbed: usize,
}

impl RenewableState {
    pub fn new(p: usize) -> Result<Self> {
        if p == 0 {
            return Err(Error::InvalidParameter {
                name: "p",
                reason: "dimension must be at least 1".into(),
            });
        }
        Ok(RenewableState {
            hess_cum: Matrix::zeros(p, p),
            beta_prev: vec![0.0; p],
            n_total: 0,
            batches_absorbed: 0,
        })
    }

    pub fn from_parts(
        hess_cum: Matrix,
        beta_prev: Vec<f64>,
        n_total: usize,
        batches_absorbed: usize,
    ) -> Result<Self> {
        let p = beta_prev.len();
        check_len("hess rows", p, hess_cum.rows())?;
        check_len("hess cols", p, hess_cum.cols())?;
        if p == 0 {
            return Err(Error::InvalidParameter {
                name: "p",
                reason: "dimension must be at least 1".into(),
            });
        }
        Ok(RenewableState {
            hess_cum,
            beta_prev,
            n_total,
            batches_absorbed,
        })
    }

    pub fn p(&self) -> usize {
        self.beta_prev.len()
    }

    pub fn hess_cum(&self) -> &Matrix {
        &self.hess_cum
    }

    pub fn beta_prev(&self) -> &[f64] {
        &self.beta_prev
    }

    pub fn n_total(&self) -> usize {
        self.n_total
    }

    pub fn batches_absorbed(&self) -> usize {
        self.batches_absorbed
    }

    /// `hess_cum += hess f_b(beta_hat)`, `beta_prev = beta_hat`, `N += n_b`.
    pub fn update(&mut self, family: &GlmFamily, batch: BatchData, beta_hat: &[f64]) -> Result<()> {
        check_len("batch dimension", self.p(), batch.p())?;
        check_len("beta_hat length", self.p(), beta_hat.len())?;
        if !beta_hat.iter().all(|v| v.is_finite()) {
            return Err(Error::Domain("beta_hat must be finite"));
        }
        let h = batch_hessian(family, &batch, beta_hat)?;
        self.hess_cum.add_assign(&h);
        self.beta_prev.copy_from_slice(beta_hat);
        self.n_total += batch.n();
        self.batches_absorbed += 1;
        Ok(())
    }

    /// `(f_b(beta) + 1/2 d^T H_cum d) / N_b + lambda ||beta||_1` with `d = beta - beta_prev`.
    pub fn surrogate_objective(
        &self,
        family: &GlmFamily,
        batch: &BatchData,
        lambda: f64,
        beta: &[f64],
    ) -> Result<f64> {
        check_len("beta length", self.p(), beta.len())?;
        let n = (self.n_total + batch.n()) as f64;
        let d: Vec<f64> = beta.iter().zip(&self.beta_prev).map(|(a, b)| a - b).collect();
        let hd = self.hess_cum.matvec(&d);
        let quad = 0.5 * linalg::dot(&d, &hd);
        let loss = batch_loss(family, batch, beta)?.value;
        let l1: f64 = beta.iter().map(|v| libm::fabs(*v)).sum();
        Ok((loss + quad) / n + lambda * l1)
    }

    /// `grad Q(beta) = [grad f_b(beta) + H_cum (beta - beta_prev)] / N_b`.
    fn smooth_gradient(&self, family: &GlmFamily, batch: &BatchData, beta: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        accumulate_gradient(family, batch, beta, out);
        if self.batches_absorbed > 0 {
            let d: Vec<f64> = beta.iter().zip(&self.beta_prev).map(|(a, b)| a - b).collect();
            self.hess_cum.matvec_sparse_add(&d, out);
        }
        let n = (self.n_total + batch.n()) as f64;
        out.iter_mut().for_each(|v| *v /= n);
    }
}

/// Runs `inner_iters` ISTA steps on the renewable surrogate from `beta_prev`.
/// The caller folds the result back with [`RenewableState::update`].
pub fn fit_batch_renewable(
    state: &RenewableState,
    family: &GlmFamily,
    batch: &BatchData,
    lambda_b: f64,
    inner_iters: usize,
    step: f64,
) -> Result<Vec<f64>> {
    check_len("batch dimension", state.p(), batch.p())?;
    if !(lambda_b >= 0.0) || !lambda_b.is_finite() {
        return Err(Error::InvalidParameter {
            name: "lambda_b",
            reason: "must be finite and nonnegative".into(),
        });
    }
    if inner_iters == 0 {
        return Err(Error::InvalidParameter {
            name: "inner_iters",
            reason: "must be at least 1".into(),
        });
    }
    if !(step > 0.0) || !step.is_finite() {
        return Err(Error::InvalidParameter {
            name: "step",
            reason: "must be positive and finite".into(),
        });
    }
    let p = state.p();
    let mut beta = state.beta_prev.clone();
    let mut grad = vec![0.0; p];
    for t in 1..=inner_iters {
        state.smooth_gradient(family, batch, &beta, &mut grad);
        linalg::axpy(-step, &grad, &mut beta);
        soft_threshold_in_place(&mut beta, step * lambda_b)?;
        let max_abs = linalg::norm_inf(&beta);
        if !(max_abs <= DIVERGENCE_BOUND) {
            return Err(Error::Divergence {
                iteration: t,
                max_abs,
            });
        }
    }
    Ok(beta)
}

/// Largest stable ISTA step, `N_b / Lambda_max(hess f_b + H_cum)`. The batch
/// curvature is taken at zero for the logistic family (where `g''` peaks)
/// and at `beta_prev` otherwise.
pub fn default_step(
    state: &RenewableState,
    family: &GlmFamily,
    batch: &BatchData,
    power_iters: usize,
) -> Result<f64> {
    let at = match family.kind {
        Family::Logistic => vec![0.0; state.p()],
        Family::Gaussian | Family::Poisson => state.beta_prev.clone(),
    };
    let mut h = batch_hessian(family, batch, &at)?;
    h.add_assign(&state.hess_cum);
    let top = linalg::power_iteration(&h, power_iters);
    let n = (state.n_total + batch.n()) as f64;
    if top > 0.0 && top.is_finite() {
        Ok(n / top)
    } else {
        Ok(1.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RenewableConfig {
    /// `c` in `lambda_b = c sqrt(ln p / N_b)`.
    pub lambda_const: f64,
    pub inner_iters: usize,
    /// Fixed ISTA step; `None` uses [`default_step`] every batch.
    pub step: Option<f64>,
    pub power_iters: usize,
}

impl Default for RenewableConfig {
    fn default() -> Self {
        RenewableConfig {
            lambda_const: 0.5,
            inner_iters: 200,
            step: None,
            power_iters: 50,
        }
    }
}

impl RenewableConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_const >= 0.0) || !self.lambda_const.is_finite() {
            return Err(Error::InvalidParameter {
                name: "lambda_const",
                reason: "must be finite and nonnegative".into(),
            });
        }
        if self.inner_iters == 0 {
            return Err(Error::InvalidParameter {
                name: "inner_iters",
                reason: "must be at least 1".into(),
            });
        }
        if let Some(s) = self.step {
            if !(s > 0.0) || !s.is_finite() {
                return Err(Error::InvalidParameter {
                    name: "step",
                    reason: "must be positive and finite".into(),
                });
            }
        }
        if self.power_iters == 0 {
            return Err(Error::InvalidParameter {
                name: "power_iters",
                reason: "must be at least 1".into(),
            });
        }
        Ok(())
    }

    pub fn lambda_for(&self, p: usize, n_cumulative: usize) -> f64 {
        let lp = libm::log((p as f64).max(2.0));
        self.lambda_const * libm::sqrt(lp / n_cumulative.max(1) as f64)
    }
}

#[derive(Debug, Clone)]
pub struct RenewableLearner {
    family: GlmFamily,
    config: RenewableConfig,
    state: RenewableState,
}

impl RenewableLearner {
    pub fn new(p: usize, family: GlmFamily, config: RenewableConfig) -> Result<Self> {
        config.validate()?;
        Ok(RenewableLearner {
            family,
            config,
            state: RenewableState::new(p)?,
        })
    }

    pub fn from_state(state: RenewableState, family: GlmFamily, config: RenewableConfig) -> Result<Self> {
        config.validate()?;
        Ok(RenewableLearner {
            family,
            config,
            state,
        })
    }

    pub fn state(&self) -> &RenewableState {
        &self.state
    }
}

impl OnlineEstimator for RenewableLearner {
    fn p(&self) -> usize {
        self.state.p()
    }

    fn n_total(&self) -> usize {
        self.state.n_total
    }

    fn batches_absorbed(&self) -> usize {
        self.state.batches_absorbed
    }

    fn current_estimate(&self) -> &[f64] {
        &self.state.beta_prev
    }

    fn step(&mut self, batch: BatchData) -> Result<EstimateRecord, StreamError> {
        let batch_index = batch.batch_index();
        let tag = |source| StreamError {
            batch_index,
            source,
        };
        check_len("batch dimension", self.state.p(), batch.p()).map_err(tag)?;
        let n_cum = self.state.n_total + batch.n();
        let lambda = self.config.lambda_for(self.state.p(), n_cum);
        let step = match self.config.step {
            Some(s) => s,
            None => default_step(&self.state, &self.family, &batch, self.config.power_iters)
                .map_err(tag)?,
        };
        let beta = fit_batch_renewable(
            &self.state,
            &self.family,
            &batch,
            lambda,
            self.config.inner_iters,
            step,
        )
        .map_err(tag)?;
        self.state.update(&self.family, batch, &beta).map_err(tag)?;
        Ok(EstimateRecord {
            batch_index,
            support: linalg::support(&beta),
            beta_hat: beta,
            iterations_run: self.config.inner_iters,
            lambda_final: lambda,
            wall_time: Duration::ZERO,
            n_cumulative: n_cum,
        })
    }

    /// Same layout as the AD-IHT checkpoint: `beta_hat` holds `beta_prev`,
    /// `hess` holds the cumulative Hessian and `inter` is all zeros.
    fn checkpoint(&self) -> Result<Vec<u8>> {
        let s = SummaryState::from_parts(
            vec![0.0; self.state.p()],
            self.state.hess_cum.clone(),
            self.state.n_total,
            self.state.batches_absorbed,
        )?;
        encode_checkpoint(&s, &self.state.beta_prev)
    }
}
