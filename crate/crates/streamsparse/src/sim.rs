//! Synthetic GLM streams with sub-Gaussian designs.
//!
//! Rows are `x_i = Sigma^{1/2} z_i` with `z_i` i.i.d. standard Gaussian or
//! Rademacher entries. Every batch draws from its own ChaCha stream keyed by
//! `(seed, batch_index)`, so any batch can be regenerated on its own.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use streamsparse_core::glm::linear_predictor;
use streamsparse_core::linalg::{self, Matrix};
use streamsparse_core::{BatchData, Family, GlmFamily};

/// Poisson draws are capped here; a capped draw raises [`Responses::capped`].
pub const POISSON_CAP: f64 = 1e9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("invalid {field}: {reason}")]
    InvalidSpec { field: &'static str, reason: String },
    #[error(transparent)]
    Core(#[from] streamsparse_core::Error),
}

fn invalid(field: &'static str, reason: impl Into<String>) -> SimError {
    SimError::InvalidSpec {
        field,
        reason: reason.into(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Covariance {
    Identity,
    /// `Sigma_jk = rho^|j - k|`, `0 <= rho < 1`.
    Ar1 { rho: f64 },
    /// Symmetric positive definite matrix supplied by the user.
    User(Matrix),
}

impl Covariance {
    /// Closed-form spectral bounds `[(1 - rho) / (1 + rho), (1 + rho) / (1 - rho)]`
    /// for AR(1); `[1, 1]` for the identity; `None` for a user matrix.
    pub fn eigenvalue_bounds(&self) -> Option<(f64, f64)> {
        match *self {
            Covariance::Identity => Some((1.0, 1.0)),
            Covariance::Ar1 { rho } => Some(((1.0 - rho) / (1.0 + rho), (1.0 + rho) / (1.0 - rho))),
            Covariance::User(_) => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EntryLaw {
    GaussianStd,
    RademacherStd,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DesignSpec {
    p: usize,
    covariance: Covariance,
    entry_law: EntryLaw,
    /// Lower Cholesky factor, only for [`Covariance::User`].
    factor: Option<Matrix>,
}

impl DesignSpec {
    pub fn new(p: usize, covariance: Covariance, entry_law: EntryLaw) -> Result<Self, SimError> {
        if p == 0 {
            return Err(invalid("p", "must be at least 1"));
        }
        let factor = match &covariance {
            Covariance::Identity => None,
            Covariance::Ar1 { rho } => {
                if !(*rho >= 0.0 && *rho < 1.0) {
                    return Err(invalid("rho", "must lie in [0, 1)"));
                }
                None
            }
            Covariance::User(m) => {
                if m.rows() != p || m.cols() != p {
                    return Err(invalid("covariance", format!("must be {p} x {p}")));
                }
                if !m.is_symmetric() {
                    return Err(invalid("covariance", "must be symmetric"));
                }
                Some(linalg::cholesky(m).ok_or_else(|| invalid("covariance", "must be positive definite"))?)
            }
        };
        Ok(DesignSpec {
            p,
            covariance,
            entry_law,
            factor,
        })
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn covariance(&self) -> &Covariance {
        &self.covariance
    }

    pub fn entry_law(&self) -> EntryLaw {
        self.entry_law
    }

    /// The generating covariance as a dense matrix.
    pub fn covariance_matrix(&self) -> Matrix {
        match &self.covariance {
            Covariance::Identity => Matrix::identity(self.p),
            Covariance::Ar1 { rho } => {
                let mut m = Matrix::zeros(self.p, self.p);
                for j in 0..self.p {
                    for k in 0..self.p {
                        m.set(j, k, rho.powi((j as i32 - k as i32).abs()));
                    }
                }
                m
            }
            Covariance::User(m) => m.clone(),
        }
    }

    /// Unmixed `n x p` entries with mean 0 and variance 1.
    pub fn sample_entries<R: Rng>(&self, n: usize, rng: &mut R) -> Matrix {
        let data = (0..n * self.p)
            .map(|_| match self.entry_law {
                EntryLaw::GaussianStd => rng.sample::<f64, _>(StandardNormal),
                EntryLaw::RademacherStd => {
                    if rng.random::<bool>() {
                        1.0
                    } else {
                        -1.0
                    }
                }
            })
            .collect();
        Matrix::from_row_major(n, self.p, data).expect("n * p entries")
    }

    /// Applies `Sigma^{1/2}` to every row of `z` in place.
    pub fn mix(&self, z: &mut Matrix) {
        match (&self.covariance, &self.factor) {
            (Covariance::Identity, _) => {}
            (Covariance::Ar1 { rho }, _) => {
                // x_1 = z_1, x_j = rho x_{j-1} + sqrt(1 - rho^2) z_j
                let c = (1.0 - rho * rho).sqrt();
                for i in 0..z.rows() {
                    let row = z.row_mut(i);
                    for j in 1..row.len() {
                        row[j] = rho * row[j - 1] + c * row[j];
                    }
                }
            }
            (Covariance::User(_), Some(l)) => {
                let mut tmp = vec![0.0; self.p];
                for i in 0..z.rows() {
                    let row = z.row_mut(i);
                    for (a, t) in tmp.iter_mut().enumerate() {
                        *t = linalg::dot(&l.row(a)[..=a], &row[..=a]);
                    }
                    row.copy_from_slice(&tmp);
                }
            }
            (Covariance::User(_), None) => unreachable!("factor computed in DesignSpec::new"),
        }
    }
}

/// `n x p` design with rows `Sigma^{1/2} z_i`.
pub fn make_design<R: Rng>(spec: &DesignSpec, n: usize, rng: &mut R) -> Result<Matrix, SimError> {
    if n == 0 {
        return Err(invalid("n", "must be at least 1"));
    }
    let mut z = spec.sample_entries(n, rng);
    spec.mix(&mut z);
    Ok(z)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SupportRule {
    FirstS,
    RandomS,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MagnitudeRule {
    Constant(f64),
    UniformRange(f64, f64),
    SignedConstant(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TruthSpec {
    pub p: usize,
    pub s: usize,
    pub support_rule: SupportRule,
    pub magnitude: MagnitudeRule,
}

impl TruthSpec {
    pub fn validate(&self) -> Result<(), SimError> {
        if self.s == 0 || self.s > self.p {
            return Err(invalid("s", format!("must satisfy 1 <= s <= p = {}", self.p)));
        }
        match self.magnitude {
            MagnitudeRule::Constant(v) | MagnitudeRule::SignedConstant(v) => {
                if v == 0.0 || !v.is_finite() {
                    return Err(invalid("magnitude", "must be finite and nonzero"));
                }
            }
            MagnitudeRule::UniformRange(lo, hi) => {
                if !(lo < hi) || !lo.is_finite() || !hi.is_finite() || (lo <= 0.0 && hi >= 0.0) {
                    return Err(invalid("magnitude", "range must be finite, nonempty and exclude 0"));
                }
            }
        }
        Ok(())
    }
}

/// Sparse truth `beta*` and its sorted support.
pub fn make_truth<R: Rng>(spec: &TruthSpec, rng: &mut R) -> Result<(Vec<f64>, Vec<usize>), SimError> {
    spec.validate()?;
    let mut support: Vec<usize> = match spec.support_rule {
        SupportRule::FirstS => (0..spec.s).collect(),
        SupportRule::RandomS => rand::seq::index::sample(rng, spec.p, spec.s).into_vec(),
    };
    support.sort_unstable();
    let mut beta = vec![0.0; spec.p];
    for &j in &support {
        beta[j] = match spec.magnitude {
            MagnitudeRule::Constant(v) => v,
            MagnitudeRule::UniformRange(lo, hi) => rng.random_range(lo..hi),
            MagnitudeRule::SignedConstant(v) => {
                if rng.random::<bool>() {
                    v
                } else {
                    -v
                }
            }
        };
    }
    Ok((beta, support))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Responses {
    pub y: Vec<f64>,
    /// Some Poisson rate exceeded [`POISSON_CAP`] and was capped.
    pub capped: bool,
}

/// Draws `Y | X` from the canonical-link model with natural parameter `X beta*`.
pub fn make_responses<R: Rng>(
    family: &GlmFamily,
    x: &Matrix,
    beta_star: &[f64],
    rng: &mut R,
) -> Result<Responses, SimError> {
    if beta_star.len() != x.cols() {
        return Err(invalid("beta_star", format!("length {} != p = {}", beta_star.len(), x.cols())));
    }
    let eta = linear_predictor(x, beta_star);
    let mut capped = false;
    let y = match family.kind {
        Family::Gaussian => {
            let sd = family.dispersion.sqrt();
            if sd == 0.0 {
                eta
            } else {
                eta.into_iter()
                    .map(|u| u + sd * rng.sample::<f64, _>(StandardNormal))
                    .collect()
            }
        }
        Family::Logistic => eta
            .into_iter()
            .map(|u| {
                let prob = family.link_first(u).expect("finite predictor");
                if rng.random::<f64>() < prob {
                    1.0
                } else {
                    0.0
                }
            })
            .collect(),
        Family::Poisson => eta
            .into_iter()
            .map(|u| {
                let rate = u.exp();
                if !(rate <= POISSON_CAP) {
                    capped = true;
                    POISSON_CAP
                } else {
                    sample_poisson(rate, rng)
                }
            })
            .collect(),
    };
    Ok(Responses { y, capped })
}

/// Poisson draw: sequential inversion below rate 30, Hormann's PTRS
/// transformed rejection above.
pub fn sample_poisson<R: Rng>(rate: f64, rng: &mut R) -> f64 {
    if rate <= 0.0 {
        return 0.0;
    }
    if rate < 30.0 {
        let mut k = 0.0;
        let mut prob = (-rate).exp();
        let mut cdf = prob;
        let u: f64 = rng.random();
        while u > cdf {
            k += 1.0;
            prob *= rate / k;
            cdf += prob;
            if prob <= 0.0 && cdf < u {
                break;
            }
        }
        return k;
    }
    let smu = rate.sqrt();
    let b = 0.931 + 2.53 * smu;
    let a = -0.059 + 0.02483 * b;
    let inv_alpha = 1.1239 + 1.1328 / (b - 3.4);
    let v_r = 0.9277 - 3.6224 / (b - 2.0);
    let log_rate = rate.ln();
    loop {
        let u: f64 = rng.random::<f64>() - 0.5;
        let v: f64 = rng.random();
        let us = 0.5 - u.abs();
        let k = ((2.0 * a / us + b) * u + rate + 0.43).floor();
        if us >= 0.07 && v <= v_r {
            return k;
        }
        if k < 0.0 || (us < 0.013 && v > us) {
            continue;
        }
        let lhs = v.ln() + inv_alpha.ln() - (a / (us * us) + b).ln();
        let rhs = -rate + k * log_rate - libm::lgamma(k + 1.0);
        if lhs <= rhs {
            return k;
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum BatchSizes {
    Constant(usize),
    Schedule(Vec<usize>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct StreamSpec {
    pub design: DesignSpec,
    pub truth: TruthSpec,
    pub family: GlmFamily,
    pub batch_sizes: BatchSizes,
    /// Ignored for [`BatchSizes::Schedule`], whose length is the batch count.
    pub num_batches: usize,
    pub seed: u64,
}

impl StreamSpec {
    pub fn validate(&self) -> Result<(), SimError> {
        if self.truth.p != self.design.p() {
            return Err(invalid("p", "design and truth dimensions differ"));
        }
        self.truth.validate()?;
        match &self.batch_sizes {
            BatchSizes::Constant(0) => return Err(invalid("batch_size", "must be at least 1")),
            BatchSizes::Schedule(v) if v.contains(&0) => {
                return Err(invalid("batch_sizes", "every batch needs at least one row"))
            }
            _ => {}
        }
        Ok(())
    }

    pub fn num_batches(&self) -> usize {
        match &self.batch_sizes {
            BatchSizes::Constant(_) => self.num_batches,
            BatchSizes::Schedule(v) => v.len(),
        }
    }

    /// Size of batch `b` (1-based).
    pub fn batch_size(&self, b: usize) -> usize {
        match &self.batch_sizes {
            BatchSizes::Constant(n) => *n,
            BatchSizes::Schedule(v) => v[b - 1],
        }
    }

    /// `N_b`, the cumulative sample size after batch `b`.
    pub fn cumulative_size(&self, b: usize) -> usize {
        (1..=b).map(|j| self.batch_size(j)).sum()
    }
}

/// RNG for sub-stream `stream` of `seed`: stream 0 draws the truth, stream
/// `b` draws batch `b`.
pub fn substream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// A reproducible, lazily generated stream.
#[derive(Debug, Clone)]
pub struct SimStream {
    spec: StreamSpec,
    beta_star: Vec<f64>,
    support: Vec<usize>,
}

impl SimStream {
    pub fn new(spec: StreamSpec) -> Result<Self, SimError> {
        spec.validate()?;
        let (beta_star, support) = make_truth(&spec.truth, &mut substream_rng(spec.seed, 0))?;
        Ok(SimStream {
            spec,
            beta_star,
            support,
        })
    }

    pub fn spec(&self) -> &StreamSpec {
        &self.spec
    }

    pub fn beta_star(&self) -> &[f64] {
        &self.beta_star
    }

    pub fn support(&self) -> &[usize] {
        &self.support
    }

    pub fn num_batches(&self) -> usize {
        self.spec.num_batches()
    }

    /// Generates batch `b` (1-based) from its own sub-stream.
    pub fn batch(&self, b: usize) -> Result<BatchData, SimError> {
        if b == 0 || b > self.num_batches() {
            return Err(invalid("batch_index", format!("must lie in 1..={}", self.num_batches())));
        }
        self.batch_with_flag(b).map(|(batch, _)| batch)
    }

    /// Like [`Self::batch`], also reporting whether any Poisson draw was capped.
    pub fn batch_with_flag(&self, b: usize) -> Result<(BatchData, bool), SimError> {
        let mut rng = substream_rng(self.spec.seed, b as u64);
        let x = make_design(&self.spec.design, self.spec.batch_size(b), &mut rng)?;
        let r = make_responses(&self.spec.family, &x, &self.beta_star, &mut rng)?;
        Ok((BatchData::new(x, r.y, b)?, r.capped))
    }

    /// Batches `start..=num_batches`, generated on demand.
    pub fn batches_from(&self, start: usize) -> impl Iterator<Item = BatchData> + '_ {
        (start.max(1)..=self.num_batches()).map(move |b| self.batch(b).expect("validated spec"))
    }

    pub fn iter(&self) -> impl Iterator<Item = BatchData> + '_ {
        self.batches_from(1)
    }
}

/// Convenience: truth plus the lazy batch sequence.
pub fn stream(spec: StreamSpec) -> Result<SimStream, SimError> {
    SimStream::new(spec)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn identity_design_sample_covariance() {
        let spec = DesignSpec::new(4, Covariance::Identity, EntryLaw::GaussianStd).unwrap();
        let n = 1000;
        let x = make_design(&spec, n, &mut rng(7)).unwrap();
        for j in 0..4 {
            for k in 0..4 {
                let c: f64 = (0..n).map(|i| x.get(i, j) * x.get(i, k)).sum::<f64>() / n as f64;
                let target = if j == k { 1.0 } else { 0.0 };
                assert!((c - target).abs() <= 0.2, "entry ({j},{k}) = {c}");
            }
        }
    }

    #[test]
    fn ar1_zero_is_identity_bitwise() {
        let a = DesignSpec::new(6, Covariance::Identity, EntryLaw::GaussianStd).unwrap();
        let b = DesignSpec::new(6, Covariance::Ar1 { rho: 0.0 }, EntryLaw::GaussianStd).unwrap();
        let xa = make_design(&a, 20, &mut rng(3)).unwrap();
        let xb = make_design(&b, 20, &mut rng(3)).unwrap();
        let bits = |m: &Matrix| m.as_slice().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&xa), bits(&xb));
    }

    #[test]
    fn rademacher_entries_are_unit() {
        let spec = DesignSpec::new(5, Covariance::Ar1 { rho: 0.5 }, EntryLaw::RademacherStd).unwrap();
        let z = spec.sample_entries(30, &mut rng(1));
        assert!(z.as_slice().iter().all(|v| v.abs() == 1.0));
    }

    #[test]
    fn user_covariance_must_be_pd() {
        let m = Matrix::from_rows(&[[1.0, 2.0], [2.0, 1.0]]).unwrap();
        assert!(DesignSpec::new(2, Covariance::User(m), EntryLaw::GaussianStd).is_err());
        let m = Matrix::from_rows(&[[2.0, 0.5], [0.5, 1.0]]).unwrap();
        let spec = DesignSpec::new(2, Covariance::User(m), EntryLaw::GaussianStd).unwrap();
        let n = 20000;
        let x = make_design(&spec, n, &mut rng(11)).unwrap();
        let c01: f64 = (0..n).map(|i| x.get(i, 0) * x.get(i, 1)).sum::<f64>() / n as f64;
        let c00: f64 = (0..n).map(|i| x.get(i, 0) * x.get(i, 0)).sum::<f64>() / n as f64;
        assert!((c01 - 0.5).abs() < 0.06, "{c01}");
        assert!((c00 - 2.0).abs() < 0.1, "{c00}");
    }

    #[test]
    fn truth_rules() {
        let spec = TruthSpec {
            p: 5,
            s: 2,
            support_rule: SupportRule::FirstS,
            magnitude: MagnitudeRule::Constant(1.0),
        };
        let (beta, supp) = make_truth(&spec, &mut rng(0)).unwrap();
        assert_eq!(beta, vec![1.0, 1.0, 0.0, 0.0, 0.0]);
        assert_eq!(supp, vec![0, 1]);

        let spec = TruthSpec {
            p: 50,
            s: 10,
            support_rule: SupportRule::RandomS,
            magnitude: MagnitudeRule::SignedConstant(0.7),
        };
        let (beta, supp) = make_truth(&spec, &mut rng(5)).unwrap();
        assert_eq!(supp.len(), 10);
        assert!(supp.iter().all(|&j| beta[j].abs() == 0.7));
        assert_eq!(beta.iter().filter(|v| **v != 0.0).count(), 10);
        assert_eq!(make_truth(&spec, &mut rng(5)).unwrap(), (beta, supp));

        let bad = TruthSpec { s: 0, ..spec.clone() };
        assert!(make_truth(&bad, &mut rng(0)).is_err());
    }

    #[test]
    fn noiseless_gaussian_responses() {
        let x = Matrix::from_rows(&[[1.0, 2.0], [-0.5, 3.0]]).unwrap();
        let r = make_responses(&GlmFamily::gaussian(0.0), &x, &[0.5, -1.0], &mut rng(0)).unwrap();
        assert_eq!(r.y, vec![0.5 - 2.0, -0.25 - 3.0]);
    }

    #[test]
    fn logistic_and_poisson_means() {
        let x = Matrix::zeros(10000, 1);
        let r = make_responses(&GlmFamily::logistic(), &x, &[1.0], &mut rng(2)).unwrap();
        let mean = r.y.iter().sum::<f64>() / 10000.0;
        assert!((0.48..=0.52).contains(&mean), "{mean}");
        let r = make_responses(&GlmFamily::poisson(), &x, &[1.0], &mut rng(2)).unwrap();
        let mean = r.y.iter().sum::<f64>() / 10000.0;
        assert!((0.97..=1.03).contains(&mean), "{mean}");
        assert!(!r.capped);
    }

    #[test]
    fn ptrs_branch_mean_and_variance() {
        let mut g = rng(9);
        let rate = 80.0;
        let draws: Vec<f64> = (0..20000).map(|_| sample_poisson(rate, &mut g)).collect();
        let mean = draws.iter().sum::<f64>() / draws.len() as f64;
        let var = draws.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / draws.len() as f64;
        assert!((mean - rate).abs() < 0.3, "{mean}");
        assert!((var / rate - 1.0).abs() < 0.05, "{var}");
    }

    #[test]
    fn poisson_cap_is_flagged() {
        let x = Matrix::from_rows(&[[1.0]]).unwrap();
        let r = make_responses(&GlmFamily::poisson(), &x, &[30.0], &mut rng(0)).unwrap();
        assert!(r.capped);
        assert_eq!(r.y, vec![POISSON_CAP]);
    }

    fn spec(batch_sizes: BatchSizes) -> StreamSpec {
        StreamSpec {
            design: DesignSpec::new(8, Covariance::Ar1 { rho: 0.3 }, EntryLaw::GaussianStd).unwrap(),
            truth: TruthSpec {
                p: 8,
                s: 2,
                support_rule: SupportRule::RandomS,
                magnitude: MagnitudeRule::Constant(1.0),
            },
            family: GlmFamily::gaussian(1.0),
            batch_sizes,
            num_batches: 10,
            seed: 42,
        }
    }

    #[test]
    fn random_access_batches_are_reproducible() {
        let a = SimStream::new(spec(BatchSizes::Constant(100))).unwrap();
        let b = SimStream::new(spec(BatchSizes::Constant(100))).unwrap();
        let seventh = a.iter().nth(6).unwrap();
        assert_eq!(seventh, b.batch(7).unwrap());
        assert_eq!(seventh.batch_index(), 7);
        assert_eq!(a.spec().cumulative_size(5), 500);
        assert_eq!(a.beta_star(), b.beta_star());
    }

    #[test]
    fn schedule_sizes() {
        let s = SimStream::new(spec(BatchSizes::Schedule(vec![100, 200]))).unwrap();
        let sizes: Vec<usize> = s.iter().map(|b| b.n()).collect();
        assert_eq!(sizes, vec![100, 200]);
        assert!(s.batch(3).is_err());
    }
}
