//! Estimation-error and support-recovery metrics.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{check_len, Result};
use crate::glm::{accumulate_gradient, BatchData, GlmFamily};
use crate::linalg;

/// Everything reported for one batch. Truth-dependent fields are `None`
/// when the truth is unknown.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct BatchMetrics {
    pub b: usize,
    pub n_cumulative: usize,
    pub l2_error: Option<f64>,
    pub linf_error: Option<f64>,
    pub support_size: usize,
    pub false_positives: Option<usize>,
    pub false_negatives: Option<usize>,
    pub scaled_error: Option<f64>,
    pub alpha_emp: Option<f64>,
    pub theta_emp: Option<f64>,
    pub oracle_ratio: Option<f64>,
}

impl BatchMetrics {
    /// Metrics against a known truth. `support_star` must be sorted.
    pub fn against_truth(
        b: usize,
        n_cumulative: usize,
        beta_hat: &[f64],
        beta_star: &[f64],
        support_star: &[usize],
    ) -> Result<Self> {
        let l2 = l2_error(beta_hat, beta_star)?;
        let (fp, fneg) = support_errors(beta_hat, support_star);
        let s = support_star.len().max(1);
        Ok(BatchMetrics {
            b,
            n_cumulative,
            l2_error: Some(l2),
            linf_error: Some(linf_error(beta_hat, beta_star)?),
            support_size: support_size(beta_hat),
            false_positives: Some(fp),
            false_negatives: Some(fneg),
            scaled_error: Some(scaled_error(l2, n_cumulative, s, beta_hat.len(), b)),
            ..Default::default()
        })
    }

    /// Metrics without a truth: only the support size is known.
    pub fn without_truth(b: usize, n_cumulative: usize, beta_hat: &[f64]) -> Self {
        BatchMetrics {
            b,
            n_cumulative,
            support_size: support_size(beta_hat),
            ..Default::default()
        }
    }
}

pub fn l2_error(beta_hat: &[f64], beta_star: &[f64]) -> Result<f64> {
    check_len("beta length", beta_star.len(), beta_hat.len())?;
    let ss: f64 = beta_hat
        .iter()
        .zip(beta_star)
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    Ok(libm::sqrt(ss))
}

pub fn linf_error(beta_hat: &[f64], beta_star: &[f64]) -> Result<f64> {
    check_len("beta length", beta_star.len(), beta_hat.len())?;
    Ok(beta_hat
        .iter()
        .zip(beta_star)
        .fold(0.0_f64, |m, (a, b)| m.max(libm::fabs(a - b))))
}

pub fn support_size(beta: &[f64]) -> usize {
    beta.iter().filter(|v| **v != 0.0).count()
}

/// `(|supp(beta_hat) \ S*|, |S* \ supp(beta_hat)|)` with an exact-zero test.
/// Indices in `support_star` beyond `beta_hat.len()` count as missed.
pub fn support_errors(beta_hat: &[f64], support_star: &[usize]) -> (usize, usize) {
    let mut in_star = vec![false; beta_hat.len()];
    let mut fneg = 0;
    for &j in support_star {
        match in_star.get_mut(j) {
            Some(slot) => {
                *slot = true;
                if beta_hat[j] == 0.0 {
                    fneg += 1;
                }
            }
            None => fneg += 1,
        }
    }
    let fp = beta_hat
        .iter()
        .zip(&in_star)
        .filter(|(v, star)| **v != 0.0 && !**star)
        .count();
    (fp, fneg)
}

/// `l2 / sqrt(s (ln p + ln b) / N_b)`: the error in units of the
/// non-divergent rate. Stays bounded in `b` when the estimator is stable.
pub fn scaled_error(l2: f64, n_cumulative: usize, s: usize, p: usize, b: usize) -> f64 {
    let rate = libm::sqrt(
        s as f64 * (libm::log(p as f64) + libm::log(b as f64)) / n_cumulative as f64,
    );
    l2 / rate
}

/// Running cumulative score `sum_k grad f_k(beta*)` (simulation only).
#[derive(Debug, Clone)]
pub struct ScoreAccumulator {
    family: GlmFamily,
    beta_star: Vec<f64>,
    support_star: Vec<usize>,
    score: Vec<f64>,
}

impl ScoreAccumulator {
    pub fn new(family: GlmFamily, beta_star: Vec<f64>) -> Self {
        let support_star = linalg::support(&beta_star);
        let p = beta_star.len();
        ScoreAccumulator {
            family,
            beta_star,
            support_star,
            score: vec![0.0; p],
        }
    }

    pub fn absorb(&mut self, batch: &BatchData) -> Result<()> {
        check_len("batch dimension", self.beta_star.len(), batch.p())?;
        accumulate_gradient(&self.family, batch, &self.beta_star, &mut self.score);
        Ok(())
    }

    /// `(||score||_inf, ||score restricted to S*||_2)`.
    pub fn read(&self) -> (f64, f64) {
        let alpha = linalg::norm_inf(&self.score);
        let theta: f64 = self
            .support_star
            .iter()
            .map(|&j| self.score[j] * self.score[j])
            .sum();
        (alpha, libm::sqrt(theta))
    }

    pub fn score(&self) -> &[f64] {
        &self.score
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::Matrix;

    #[test]
    fn l2_examples() {
        assert_eq!(l2_error(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(l2_error(&[3.0, 0.0], &[0.0, 4.0]).unwrap(), 5.0);
        assert!(l2_error(&[1.0], &[1.0, 2.0]).is_err());
        assert_eq!(linf_error(&[3.0, 0.0], &[0.0, 4.0]).unwrap(), 4.0);
    }

    #[test]
    fn support_error_examples() {
        assert_eq!(support_errors(&[1.0, 0.0, 1.0], &[0, 1]), (1, 1));
        assert_eq!(support_errors(&[0.0; 5], &[0, 2, 4]), (0, 3));
        assert_eq!(support_errors(&[0.0, 2.0, -1.0], &[1, 2]), (0, 0));
    }

    #[test]
    fn scaled_error_examples() {
        let (n, s, p, b) = (400, 3, 50, 7);
        let rate = libm::sqrt(s as f64 * (libm::log(p as f64) + libm::log(b as f64)) / n as f64);
        assert!((scaled_error(rate, n, s, p, b) - 1.0).abs() < 1e-14);
        let ratio = scaled_error(0.3, 2 * n, s, p, b) / scaled_error(0.3, n, s, p, b);
        assert!((ratio - libm::sqrt(2.0)).abs() < 1e-14);
        // p = e, b = 1, s = 1, N = 1: ln p = 1 up to rounding in E.ln()
        let pe = core::f64::consts::E;
        let rate = libm::sqrt(1.0 * (libm::log(pe) + 0.0) / 1.0);
        assert!((1.0 / rate - 1.0).abs() < 1e-15);
    }

    #[test]
    fn score_accumulator_examples() {
        let x = Matrix::from_rows(&[[1.0, 2.0]]).unwrap();
        let beta_star = vec![0.5, 0.0];
        let xb = 0.5;
        let noiseless = BatchData::new(x.clone(), vec![xb], 1).unwrap();
        let mut acc = ScoreAccumulator::new(GlmFamily::gaussian(0.0), beta_star.clone());
        acc.absorb(&noiseless).unwrap();
        assert_eq!(acc.read(), (0.0, 0.0));

        // Y = X beta* + 1, score = X^T (X beta* - Y) = [-1, -2]
        let noisy = BatchData::new(x, vec![xb + 1.0], 1).unwrap();
        let mut acc = ScoreAccumulator::new(GlmFamily::gaussian(1.0), beta_star);
        acc.absorb(&noisy).unwrap();
        assert_eq!(acc.score(), &[-1.0, -2.0]);
        assert_eq!(acc.read(), (2.0, 1.0));
        acc.absorb(&noisy).unwrap();
        assert_eq!(acc.score(), &[-2.0, -4.0]);
    }

    #[test]
    fn metrics_against_truth() {
        let m = BatchMetrics::against_truth(2, 100, &[1.0, 0.0, 0.5], &[1.0, 1.0, 0.0], &[0, 1])
            .unwrap();
        assert_eq!(m.false_positives, Some(1));
        assert_eq!(m.false_negatives, Some(1));
        assert_eq!(m.support_size, 2);
        let m = BatchMetrics::without_truth(1, 10, &[0.0, 2.0]);
        assert_eq!(m.support_size, 1);
        assert!(m.l2_error.is_none() && m.false_positives.is_none());
    }
}
