//! Reference estimators that keep every batch in memory. Used as test
//! oracles and for oracle-ratio diagnostics, never inside the stream.

use alloc::vec;
use alloc::vec::Vec;

use crate::engine::{run_iht, zero_curvature_block, zero_curvature_diag, BatchFit, GradientSource, IhtConfig};
use crate::error::{check_len, Error, Result};
use crate::glm::{accumulate_gradient, batch_hessian, batch_loss, BatchData, GlmFamily};
use crate::linalg::{self, Matrix};

struct Offline<'a> {
    batches: &'a [BatchData],
    p: usize,
    n: usize,
}

impl GradientSource for Offline<'_> {
    fn p(&self) -> usize {
        self.p
    }

    fn n_cumulative(&self) -> usize {
        self.n
    }

    fn batch_count(&self) -> usize {
        self.batches.len()
    }

    fn gradient_into(&self, family: &GlmFamily, beta: &[f64], out: &mut [f64]) {
        for b in self.batches {
            accumulate_gradient(family, b, beta, out);
        }
    }

    fn curvature_diag(&self, family: &GlmFamily) -> Vec<f64> {
        zero_curvature_diag(family, self.batches, self.p)
    }

    fn curvature_block(&self, family: &GlmFamily, idx: &[usize]) -> Matrix {
        zero_curvature_block(family, self.batches, idx)
    }
}

fn common_dimension(batches: &[BatchData]) -> Result<usize> {
    let first = batches.first().ok_or(Error::InvalidParameter {
        name: "all_batches",
        reason: "need at least one batch".into(),
    })?;
    let p = first.p();
    for b in batches {
        check_len("batch dimension", p, b.p())?;
    }
    Ok(p)
}

/// Full-data IHT: same schedule and trace format as the streaming engine,
/// but the gradient is the exact cumulative `sum_j grad f_j(beta)` and
/// `eta = c / N_total`. The floor uses `b = all_batches.len()`. Always cold.
pub fn offline_iht(family: &GlmFamily, all_batches: &[BatchData], config: &IhtConfig) -> Result<BatchFit> {
    let p = common_dimension(all_batches)?;
    let n = all_batches.iter().map(BatchData::n).sum();
    let src = Offline {
        batches: all_batches,
        p,
        n,
    };
    run_iht(&src, family, config, None)
}

/// Maximum likelihood restricted to `support_star`, zeros elsewhere, by
/// Newton's method with step halving.
///
/// Converges when the restricted gradient satisfies `||g||_inf <= tol` and
/// the Newton step has collapsed (`||d||_inf <= 1e-6 (1 + ||beta||_inf)`).
/// The second condition keeps separable logistic data, whose likelihood
/// is maximised at infinity, from being reported as converged.
pub fn oracle_support_mle(
    family: &GlmFamily,
    all_batches: &[BatchData],
    support_star: &[usize],
    newton_iters: usize,
    tol: f64,
) -> Result<Vec<f64>> {
    let p = common_dimension(all_batches)?;
    let k = support_star.len();
    let total: usize = all_batches.iter().map(BatchData::n).sum();
    if k > total {
        return Err(Error::InvalidParameter {
            name: "support_star",
            reason: "support larger than the sample".into(),
        });
    }
    let mut full = vec![0.0; p];
    if k == 0 {
        return Ok(full);
    }
    let reduced: Vec<BatchData> = all_batches
        .iter()
        .map(|b| b.select_columns(support_star))
        .collect::<Result<_>>()?;

    let loss = |beta: &[f64]| -> f64 {
        reduced
            .iter()
            .map(|b| batch_loss(family, b, beta).map_or(f64::INFINITY, |v| v.value))
            .sum()
    };
    let step_tol = 1e-6;

    let mut beta = vec![0.0; k];
    let mut current = loss(&beta);
    for _ in 0..newton_iters {
        let mut g = vec![0.0; k];
        let mut h = Matrix::zeros(k, k);
        for b in &reduced {
            accumulate_gradient(family, b, &beta, &mut g);
            h.add_assign(&batch_hessian(family, b, &beta)?);
        }
        let l = linalg::cholesky(&h).ok_or(Error::SingularHessian)?;
        let d = linalg::cholesky_solve(&l, &g);
        if linalg::norm_inf(&g) <= tol
            && linalg::norm_inf(&d) <= step_tol * (1.0 + linalg::norm_inf(&beta))
        {
            for (&j, v) in support_star.iter().zip(&beta) {
                full[j] = *v;
            }
            return Ok(full);
        }
        let slope = linalg::dot(&g, &d);
        let mut trial = beta.clone();
        if libm::fabs(slope) <= 1e-12 * (1.0 + libm::fabs(current)) {
            // the predicted decrease is below rounding in the loss: judge the
            // full Newton step by the gradient instead
            for ((tr, b), di) in trial.iter_mut().zip(&beta).zip(&d) {
                *tr = b - di;
            }
            let mut g_trial = vec![0.0; k];
            for b in &reduced {
                accumulate_gradient(family, b, &trial, &mut g_trial);
            }
            let val = loss(&trial);
            if !(val.is_finite() && linalg::norm_inf(&g_trial) < linalg::norm_inf(&g)) {
                break;
            }
            current = val;
        } else {
            let mut t = 1.0;
            let mut accepted = false;
            for _ in 0..60 {
                for ((tr, b), di) in trial.iter_mut().zip(&beta).zip(&d) {
                    *tr = b - t * di;
                }
                let val = loss(&trial);
                if val.is_finite() && val <= current - 1e-4 * t * slope {
                    accepted = true;
                    current = val;
                    break;
                }
                t *= 0.5;
            }
            if !accepted {
                break;
            }
        }
        beta = trial;
    }
    for (&j, v) in support_star.iter().zip(&beta) {
        full[j] = *v;
    }
    Err(Error::NotConverged {
        iterations: newton_iters,
        iterate: full,
    })
}
