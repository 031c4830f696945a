//! Entrywise hard thresholding and the geometric-decay-with-floor schedule.

use alloc::vec::Vec;

use crate::error::{Error, Result};

/// Threshold schedule for one batch: start at `lambda_init`, multiply by
/// `kappa` each iteration, never go below `lambda_floor`, then run
/// `ceil(refine_const * ln N)` extra iterations at the floor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThresholdSchedule {
    lambda_init: f64,
    lambda_floor: f64,
    kappa: f64,
    refine_const: f64,
}

impl ThresholdSchedule {
    pub fn new(lambda_init: f64, lambda_floor: f64, kappa: f64, refine_const: f64) -> Result<Self> {
        if !(lambda_floor > 0.0) || !lambda_floor.is_finite() {
            return Err(invalid("lambda_floor", "must be positive and finite"));
        }
        if !(lambda_init >= lambda_floor) || !lambda_init.is_finite() {
            return Err(invalid("lambda_init", "must be finite and at least lambda_floor"));
        }
        if !(kappa > 0.0 && kappa < 1.0) {
            return Err(invalid("kappa", "must lie in (0, 1)"));
        }
        if !(refine_const > 0.0) || !refine_const.is_finite() {
            return Err(invalid("refine_const", "must be positive and finite"));
        }
        Ok(ThresholdSchedule {
            lambda_init,
            lambda_floor,
            kappa,
            refine_const,
        })
    }

    pub fn lambda_init(&self) -> f64 {
        self.lambda_init
    }

    pub fn lambda_floor(&self) -> f64 {
        self.lambda_floor
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    pub fn refine_const(&self) -> f64 {
        self.refine_const
    }

    /// `max(kappa * lambda_t, lambda_floor)`.
    #[inline]
    pub fn next_threshold(&self, lambda_t: f64) -> f64 {
        (self.kappa * lambda_t).max(self.lambda_floor)
    }

    /// Number of decay steps until the schedule sits on the floor:
    /// `ceil(log_kappa(lambda_floor / lambda_init))`. Counted by stepping the
    /// schedule itself so the count agrees with [`Self::next_threshold`]
    /// even where the logarithm rounds across an integer.
    pub fn decay_steps(&self) -> usize {
        let mut lambda = self.lambda_init;
        let mut steps = 0;
        while lambda > self.lambda_floor {
            lambda = self.next_threshold(lambda);
            steps += 1;
        }
        steps
    }

    /// Refinement iterations at the floor, `ceil(refine_const * ln N)`.
    pub fn refine_steps(&self, n_total: usize) -> usize {
        let n = n_total.max(1) as f64;
        libm::ceil(self.refine_const * libm::log(n)).max(0.0) as usize
    }

    /// Total inner iterations for cumulative sample size `n_total`, at least one.
    pub fn planned_iterations(&self, n_total: usize) -> usize {
        (self.decay_steps() + self.refine_steps(n_total)).max(1)
    }
}

fn invalid(name: &'static str, reason: &str) -> Error {
    Error::InvalidParameter {
        name,
        reason: reason.into(),
    }
}

/// `z_j * 1(|z_j| >= lambda)`. Ties are kept.
pub fn hard_threshold(z: &[f64], lambda: f64) -> Result<Vec<f64>> {
    let mut out = z.to_vec();
    hard_threshold_in_place(&mut out, lambda)?;
    Ok(out)
}

pub fn hard_threshold_in_place(z: &mut [f64], lambda: f64) -> Result<()> {
    if !(lambda >= 0.0) {
        return Err(Error::Domain("threshold must be nonnegative"));
    }
    for v in z.iter_mut() {
        if !(libm::fabs(*v) >= lambda) {
            *v = 0.0;
        }
    }
    Ok(())
}

/// Free-function form of [`ThresholdSchedule::next_threshold`].
pub fn next_threshold(lambda_t: f64, schedule: &ThresholdSchedule) -> f64 {
    schedule.next_threshold(lambda_t)
}

/// Free-function form of [`ThresholdSchedule::planned_iterations`].
pub fn planned_iterations(schedule: &ThresholdSchedule, n_total: usize) -> usize {
    schedule.planned_iterations(n_total)
}
