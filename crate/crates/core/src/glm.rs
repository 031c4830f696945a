//! Canonical-link exponential-family losses.
//!
//! For a batch `(X, Y)` the negative log-likelihood (up to terms free of `beta`) is
//!
//! ```text
//! f(beta) = sum_i g(x_i beta) - y_i x_i beta
//! ```
//!
//! with gradient `sum_i x_i (g'(x_i beta) - y_i)` and Hessian
//! `sum_i x_i x_i^T g''(x_i beta)`. `g` is the log-partition function of the family.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{check_len, Error, Result};
use crate::linalg::Matrix;

/// The three supported canonical links.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Family {
    Gaussian,
    Logistic,
    Poisson,
}

impl Family {
    pub fn name(self) -> &'static str {
        match self {
            Family::Gaussian => "gaussian",
            Family::Logistic => "logistic",
            Family::Poisson => "poisson",
        }
    }
}

/// A family together with its dispersion `a`. The dispersion never enters the
/// loss; the data generator uses it (noise variance for the Gaussian family).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GlmFamily {
    pub kind: Family,
    pub dispersion: f64,
}

impl GlmFamily {
    pub fn new(kind: Family, dispersion: f64) -> Result<Self> {
        if !(dispersion >= 0.0) || !dispersion.is_finite() {
            return Err(Error::InvalidParameter {
                name: "dispersion",
                reason: "must be a finite nonnegative number".into(),
            });
        }
        Ok(GlmFamily { kind, dispersion })
    }

    pub const fn gaussian(noise_variance: f64) -> Self {
        GlmFamily {
            kind: Family::Gaussian,
            dispersion: noise_variance,
        }
    }

    pub const fn logistic() -> Self {
        GlmFamily {
            kind: Family::Logistic,
            dispersion: 1.0,
        }
    }

    pub const fn poisson() -> Self {
        GlmFamily {
            kind: Family::Poisson,
            dispersion: 1.0,
        }
    }

    /// `g(u)`. Logistic uses `max(u, 0) + log1p(exp(-|u|))`.
    pub fn link_value(&self, u: f64) -> Result<f64> {
        if !u.is_finite() {
            return Err(Error::Domain("link argument must be finite"));
        }
        Ok(self.g(u))
    }

    /// `g'(u)`, the mean function.
    pub fn link_first(&self, u: f64) -> Result<f64> {
        if !u.is_finite() {
            return Err(Error::Domain("link argument must be finite"));
        }
        Ok(self.g1(u))
    }

    /// `g''(u)`, the variance function.
    pub fn link_second(&self, u: f64) -> Result<f64> {
        if !u.is_finite() {
            return Err(Error::Domain("link argument must be finite"));
        }
        Ok(self.g2(u))
    }

    #[inline]
    pub(crate) fn g(&self, u: f64) -> f64 {
        match self.kind {
            Family::Gaussian => 0.5 * u * u,
            Family::Logistic => u.max(0.0) + libm::log1p(libm::exp(-libm::fabs(u))),
            Family::Poisson => libm::exp(u),
        }
    }

    #[inline]
    pub(crate) fn g1(&self, u: f64) -> f64 {
        match self.kind {
            Family::Gaussian => u,
            Family::Logistic => sigmoid(u),
            Family::Poisson => libm::exp(u),
        }
    }

    #[inline]
    pub(crate) fn g2(&self, u: f64) -> f64 {
        match self.kind {
            Family::Gaussian => 1.0,
            Family::Logistic => {
                let s = sigmoid(u);
                s * (1.0 - s)
            }
            Family::Poisson => libm::exp(u),
        }
    }
}

#[inline]
fn sigmoid(u: f64) -> f64 {
    if u >= 0.0 {
        1.0 / (1.0 + libm::exp(-u))
    } else {
        let e = libm::exp(u);
        e / (1.0 + e)
    }
}

/// One arriving batch `D_b`.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchData {
    design: Matrix,
    response: Vec<f64>,
    batch_index: usize,
}

impl BatchData {
    /// Validates shapes, the 1-based batch index and finiteness of every entry.
    pub fn new(design: Matrix, response: Vec<f64>, batch_index: usize) -> Result<Self> {
        check_len("response length", design.rows(), response.len())?;
        if design.rows() == 0 {
            return Err(Error::InvalidParameter {
                name: "design",
                reason: "a batch needs at least one row".into(),
            });
        }
        if design.cols() == 0 {
            return Err(Error::InvalidParameter {
                name: "design",
                reason: "a batch needs at least one column".into(),
            });
        }
        if batch_index == 0 {
            return Err(Error::InvalidParameter {
                name: "batch_index",
                reason: "batch indices start at 1".into(),
            });
        }
        if !design.is_finite() || !response.iter().all(|v| v.is_finite()) {
            return Err(Error::Domain("batch entries must be finite"));
        }
        Ok(BatchData {
            design,
            response,
            batch_index,
        })
    }

    #[inline]
    pub fn design(&self) -> &Matrix {
        &self.design
    }

    #[inline]
    pub fn response(&self) -> &[f64] {
        &self.response
    }

    #[inline]
    pub fn batch_index(&self) -> usize {
        self.batch_index
    }

    /// Number of rows `n_b`.
    #[inline]
    pub fn n(&self) -> usize {
        self.design.rows()
    }

    /// Number of columns `p`.
    #[inline]
    pub fn p(&self) -> usize {
        self.design.cols()
    }

    /// Same data relabelled with a different batch index.
    pub fn with_index(mut self, batch_index: usize) -> Result<Self> {
        if batch_index == 0 {
            return Err(Error::InvalidParameter {
                name: "batch_index",
                reason: "batch indices start at 1".into(),
            });
        }
        self.batch_index = batch_index;
        Ok(self)
    }

    /// Keeps only the listed columns, in order.
    pub fn select_columns(&self, cols: &[usize]) -> Result<BatchData> {
        let p = self.p();
        if let Some(&bad) = cols.iter().find(|&&c| c >= p) {
            return Err(Error::Shape {
                what: "column index",
                expected: p,
                actual: bad,
            });
        }
        let mut data = Vec::with_capacity(self.n() * cols.len());
        for i in 0..self.n() {
            let row = self.design.row(i);
            data.extend(cols.iter().map(|&c| row[c]));
        }
        let design = Matrix::from_row_major(self.n(), cols.len(), data)
            .expect("selected buffer has n * k entries");
        BatchData::new(design, self.response.clone(), self.batch_index)
    }

    /// Single-row batch holding row `i`.
    pub fn single_row(&self, i: usize) -> BatchData {
        let design = Matrix::from_row_major(1, self.p(), self.design.row(i).to_vec())
            .expect("row has p entries");
        BatchData {
            design,
            response: vec![self.response[i]],
            batch_index: self.batch_index,
        }
    }
}

/// Loss value plus a flag raised when the Poisson link overflowed to `+inf`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossValue {
    pub value: f64,
    pub saturated: bool,
}

/// `X beta`, touching only the nonzero coordinates of `beta`.
pub fn linear_predictor(design: &Matrix, beta: &[f64]) -> Vec<f64> {
    let nz: Vec<(usize, f64)> = beta
        .iter()
        .copied()
        .enumerate()
        .filter(|&(_, v)| v != 0.0)
        .collect();
    (0..design.rows())
        .map(|i| {
            let row = design.row(i);
            nz.iter().map(|&(j, v)| row[j] * v).sum()
        })
        .collect()
}

fn check_beta(batch: &BatchData, beta: &[f64]) -> Result<()> {
    check_len("beta length", batch.p(), beta.len())
}

/// `f_b(beta) = sum_i g(x_i beta) - y_i x_i beta`.
pub fn batch_loss(family: &GlmFamily, batch: &BatchData, beta: &[f64]) -> Result<LossValue> {
    check_beta(batch, beta)?;
    let eta = linear_predictor(batch.design(), beta);
    let mut value = 0.0;
    for (u, y) in eta.iter().zip(batch.response()) {
        value += family.g(*u) - y * u;
    }
    let saturated = value == f64::INFINITY || value.is_nan();
    if saturated {
        value = f64::INFINITY;
    }
    Ok(LossValue { value, saturated })
}

/// `grad f_b(beta) = sum_i x_i (g'(x_i beta) - y_i)`.
pub fn batch_gradient(family: &GlmFamily, batch: &BatchData, beta: &[f64]) -> Result<Vec<f64>> {
    check_beta(batch, beta)?;
    let mut grad = vec![0.0; batch.p()];
    accumulate_gradient(family, batch, beta, &mut grad);
    Ok(grad)
}

/// `out += grad f_b(beta)`; shapes are the caller's responsibility.
pub(crate) fn accumulate_gradient(
    family: &GlmFamily,
    batch: &BatchData,
    beta: &[f64],
    out: &mut [f64],
) {
    let eta = linear_predictor(batch.design(), beta);
    for (i, (u, y)) in eta.iter().zip(batch.response()).enumerate() {
        let r = family.g1(*u) - y;
        if r == 0.0 {
            continue;
        }
        for (o, x) in out.iter_mut().zip(batch.design().row(i)) {
            *o += r * x;
        }
    }
}

/// `hess f_b(beta) = sum_i g''(x_i beta) x_i x_i^T`, built on the upper
/// triangle and mirrored so the result is exactly symmetric.
pub fn batch_hessian(family: &GlmFamily, batch: &BatchData, beta: &[f64]) -> Result<Matrix> {
    check_beta(batch, beta)?;
    let p = batch.p();
    let mut h = Matrix::zeros(p, p);
    let eta = linear_predictor(batch.design(), beta);
    for (i, u) in eta.iter().enumerate() {
        h.syr_upper(family.g2(*u), batch.design().row(i));
    }
    h.mirror_upper();
    Ok(h)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn batch(rows: &[&[f64]], y: &[f64]) -> BatchData {
        BatchData::new(Matrix::from_rows(rows).unwrap(), y.to_vec(), 1).unwrap()
    }

    #[test]
    fn link_values() {
        let g = GlmFamily::gaussian(1.0);
        assert_eq!(g.link_value(2.0).unwrap(), 2.0);
        let l = GlmFamily::logistic();
        assert!((l.link_value(0.0).unwrap() - core::f64::consts::LN_2).abs() < 1e-15);
        let p = GlmFamily::poisson();
        assert!((p.link_value(1.0).unwrap() - core::f64::consts::E).abs() < 1e-15);
        assert!(matches!(g.link_value(f64::NAN), Err(Error::Domain(_))));
        assert!(matches!(l.link_value(f64::INFINITY), Err(Error::Domain(_))));
    }

    #[test]
    fn logistic_link_is_overflow_safe() {
        let l = GlmFamily::logistic();
        assert_eq!(l.link_value(1000.0).unwrap(), 1000.0);
        assert_eq!(l.link_value(-1000.0).unwrap(), 0.0);
        assert_eq!(l.link_first(-1000.0).unwrap(), 0.0);
        assert_eq!(l.link_first(1000.0).unwrap(), 1.0);
        assert!(l.link_second(30.0).unwrap() > 0.0);
    }

    #[test]
    fn loss_examples() {
        let g = GlmFamily::gaussian(1.0);
        let b = batch(&[&[1.0, 0.0]], &[2.0]);
        assert_eq!(batch_loss(&g, &b, &[0.0, 0.0]).unwrap().value, 0.0);
        let b = batch(&[&[1.0, 2.0]], &[3.0]);
        assert_eq!(batch_loss(&g, &b, &[1.0, 1.0]).unwrap().value, -4.5);
        let b = batch(&[&[1.0]], &[1.0]);
        let v = batch_loss(&GlmFamily::logistic(), &b, &[0.0]).unwrap();
        assert!((v.value - core::f64::consts::LN_2).abs() < 1e-15);
        assert!(!v.saturated);
    }

    #[test]
    fn poisson_loss_saturates() {
        let b = batch(&[&[1.0]], &[0.0]);
        let v = batch_loss(&GlmFamily::poisson(), &b, &[1000.0]).unwrap();
        assert!(v.saturated);
        assert_eq!(v.value, f64::INFINITY);
    }

    #[test]
    fn gradient_examples() {
        let b = batch(&[&[1.0, 2.0]], &[3.0]);
        assert_eq!(
            batch_gradient(&GlmFamily::gaussian(1.0), &b, &[0.0, 0.0]).unwrap(),
            vec![-3.0, -6.0]
        );
        let b = batch(&[&[1.0, 0.0]], &[1.0]);
        assert_eq!(
            batch_gradient(&GlmFamily::logistic(), &b, &[0.0, 0.0]).unwrap(),
            vec![-0.5, 0.0]
        );
        let two = batch(&[&[1.0, 2.0], &[-1.0, 0.5]], &[3.0, 1.0]);
        for fam in [GlmFamily::gaussian(1.0), GlmFamily::logistic(), GlmFamily::poisson()] {
            let beta = [0.3, -0.2];
            let full = batch_gradient(&fam, &two, &beta).unwrap();
            let a = batch_gradient(&fam, &two.single_row(0), &beta).unwrap();
            let c = batch_gradient(&fam, &two.single_row(1), &beta).unwrap();
            for j in 0..2 {
                assert!((full[j] - (a[j] + c[j])).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn hessian_examples() {
        let b = batch(&[&[1.0, 2.0]], &[3.0]);
        let h = batch_hessian(&GlmFamily::gaussian(1.0), &b, &[7.0, -1.0]).unwrap();
        assert_eq!(h.as_slice(), &[1.0, 2.0, 2.0, 4.0]);
        let b = batch(&[&[1.0]], &[0.0]);
        assert_eq!(
            batch_hessian(&GlmFamily::logistic(), &b, &[0.0]).unwrap().as_slice(),
            &[0.25]
        );
        assert_eq!(
            batch_hessian(&GlmFamily::poisson(), &b, &[0.0]).unwrap().as_slice(),
            &[1.0]
        );
    }

    #[test]
    fn shape_errors() {
        let b = batch(&[&[1.0, 2.0]], &[3.0]);
        let g = GlmFamily::gaussian(1.0);
        assert!(matches!(batch_loss(&g, &b, &[0.0]), Err(Error::Shape { .. })));
        assert!(matches!(batch_gradient(&g, &b, &[0.0; 3]), Err(Error::Shape { .. })));
        assert!(matches!(batch_hessian(&g, &b, &[]), Err(Error::Shape { .. })));
    }

    #[test]
    fn batch_validation() {
        let m = Matrix::from_rows(&[[1.0, 2.0]]).unwrap();
        assert!(BatchData::new(m.clone(), vec![1.0, 2.0], 1).is_err());
        assert!(BatchData::new(m.clone(), vec![1.0], 0).is_err());
        assert!(BatchData::new(m, vec![f64::NAN], 1).is_err());
    }
}
