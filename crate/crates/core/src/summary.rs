//! Cumulative summary statistics for the asynchronous decomposition.
//!
//! After batches `1..b-1` the state holds
//!
//! ```text
//! inter = sum_j grad f_j(beta_j) - hess f_j(beta_j) beta_j
//! hess  = sum_j hess f_j(beta_j)
//! ```
//!
//! where `beta_j` is the final estimate produced for batch `j`. The cumulative
//! gradient at any `beta` is then approximated by `grad f_b(beta) + inter + hess beta`,
//! which is exact when the loss is quadratic. Storage is `O(p^2)` regardless
//! of how many batches were absorbed.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{check_len, CheckpointError, Error, Result};
use crate::glm::{accumulate_gradient, batch_hessian, BatchData, GlmFamily};
use crate::linalg::Matrix;

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryState {
    inter: Vec<f64>,
    hess: Matrix,
    n_total: usize,
    batches_absorbed: usize,
}

impl SummaryState {
    /// Zero summaries for dimension `p`.
    pub fn new(p: usize) -> Result<Self> {
        if p == 0 {
            return Err(Error::InvalidParameter {
                name: "p",
                reason: "dimension must be at least 1".into(),
            });
        }
        Ok(SummaryState {
            inter: vec![0.0; p],
            hess: Matrix::zeros(p, p),
            n_total: 0,
            batches_absorbed: 0,
        })
    }

    pub fn p(&self) -> usize {
        self.inter.len()
    }

    pub fn inter(&self) -> &[f64] {
        &self.inter
    }

    pub fn hess(&self) -> &Matrix {
        &self.hess
    }

    /// Cumulative sample size `N` over absorbed batches.
    pub fn n_total(&self) -> usize {
        self.n_total
    }

    pub fn batches_absorbed(&self) -> usize {
        self.batches_absorbed
    }

    /// Folds batch `b` into the summaries using its final estimate, then
    /// drops the batch. Raw data never outlives this call.
    pub fn absorb_batch(
        &mut self,
        family: &GlmFamily,
        batch: BatchData,
        beta_hat: &[f64],
    ) -> Result<()> {
        check_len("batch dimension", self.p(), batch.p())?;
        check_len("beta_hat length", self.p(), beta_hat.len())?;
        if !beta_hat.iter().all(|v| v.is_finite()) {
            return Err(Error::Domain("beta_hat must be finite"));
        }
        let h = batch_hessian(family, &batch, beta_hat)?;
        // inter += grad f_b(beta_hat) - H_b beta_hat
        accumulate_gradient(family, &batch, beta_hat, &mut self.inter);
        let mut h_beta = vec![0.0; self.p()];
        h.matvec_sparse_add(beta_hat, &mut h_beta);
        for (a, hb) in self.inter.iter_mut().zip(&h_beta) {
            *a -= hb;
        }
        self.hess.add_assign(&h);
        self.n_total += batch.n();
        self.batches_absorbed += 1;
        Ok(())
    }

    /// `grad f_b(beta) + inter + hess beta`.
    pub fn surrogate_gradient(
        &self,
        family: &GlmFamily,
        current: &BatchData,
        beta: &[f64],
    ) -> Result<Vec<f64>> {
        check_len("batch dimension", self.p(), current.p())?;
        check_len("beta length", self.p(), beta.len())?;
        let mut grad = vec![0.0; self.p()];
        accumulate_gradient(family, current, beta, &mut grad);
        self.add_history(beta, &mut grad);
        Ok(grad)
    }

    /// `out += inter + hess beta`. A fresh state contributes nothing, not even
    /// signed zeros, so the first batch sees its own gradient bit for bit.
    pub(crate) fn add_history(&self, beta: &[f64], out: &mut [f64]) {
        if self.batches_absorbed == 0 {
            return;
        }
        for (o, a) in out.iter_mut().zip(&self.inter) {
            *o += a;
        }
        self.hess.matvec_sparse_add(beta, out);
    }

    /// Rebuilds a state from raw parts, as read from a checkpoint.
    pub fn from_parts(
        inter: Vec<f64>,
        hess: Matrix,
        n_total: usize,
        batches_absorbed: usize,
    ) -> Result<Self> {
        let p = inter.len();
        if p == 0 {
            return Err(Error::InvalidParameter {
                name: "p",
                reason: "dimension must be at least 1".into(),
            });
        }
        check_len("hess rows", p, hess.rows())?;
        check_len("hess cols", p, hess.cols())?;
        Ok(SummaryState {
            inter,
            hess,
            n_total,
            batches_absorbed,
        })
    }
}

/// Free-function form of [`SummaryState::new`].
pub fn init_state(p: usize) -> Result<SummaryState> {
    SummaryState::new(p)
}

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"ADS1";
pub const CHECKPOINT_VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 4 + 8 + 8 + 8;

/// Size in bytes of a checkpoint for dimension `p`: `32 + 8 (2p + p^2)`.
pub fn checkpoint_len(p: usize) -> Option<usize> {
    let floats = p.checked_mul(p)?.checked_add(p.checked_mul(2)?)?;
    floats.checked_mul(8)?.checked_add(HEADER_LEN)
}

/// Serialises `(state, beta_hat)` in the little-endian checkpoint layout:
///
/// ```text
/// "ADS1" | version u32 | p u64 | n_total u64 | batches_absorbed u64
///        | beta_hat p*f64 | inter p*f64 | hess p*p*f64 (row-major)
/// ```
pub fn encode_checkpoint(state: &SummaryState, beta_hat: &[f64]) -> Result<Vec<u8>> {
    let p = state.p();
    check_len("beta_hat length", p, beta_hat.len())?;
    let all_finite = beta_hat
        .iter()
        .chain(state.inter())
        .chain(state.hess().as_slice())
        .all(|v| v.is_finite());
    if !all_finite {
        return Err(CheckpointError::NonFinite.into());
    }
    let len = checkpoint_len(p).ok_or(CheckpointError::DimensionOverflow(p as u64))?;
    let mut out = Vec::with_capacity(len);
    out.extend_from_slice(&CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(p as u64).to_le_bytes());
    out.extend_from_slice(&(state.n_total() as u64).to_le_bytes());
    out.extend_from_slice(&(state.batches_absorbed() as u64).to_le_bytes());
    for v in beta_hat
        .iter()
        .chain(state.inter())
        .chain(state.hess().as_slice())
    {
        out.extend_from_slice(&v.to_le_bytes());
    }
    debug_assert_eq!(out.len(), len);
    Ok(out)
}

/// Parses a checkpoint buffer. Nothing is returned unless the whole buffer
/// is well formed.
pub fn decode_checkpoint(bytes: &[u8]) -> Result<(SummaryState, Vec<f64>), CheckpointError> {
    let mut cur = Cursor { bytes, pos: 0 };
    let magic: [u8; 4] = cur.take(4, HEADER_LEN)?.try_into().expect("4 bytes");
    if magic != CHECKPOINT_MAGIC {
        return Err(CheckpointError::BadMagic(magic));
    }
    let version = u32::from_le_bytes(cur.take(4, HEADER_LEN)?.try_into().expect("4 bytes"));
    if version != CHECKPOINT_VERSION {
        return Err(CheckpointError::UnsupportedVersion(version));
    }
    let p64 = cur.u64(HEADER_LEN)?;
    let n_total = cur.u64(HEADER_LEN)?;
    let absorbed = cur.u64(HEADER_LEN)?;
    let p = usize::try_from(p64).map_err(|_| CheckpointError::DimensionOverflow(p64))?;
    let total = checkpoint_len(p).ok_or(CheckpointError::DimensionOverflow(p64))?;
    if p == 0 {
        return Err(CheckpointError::DimensionOverflow(0));
    }
    let n_total = usize::try_from(n_total).map_err(|_| CheckpointError::DimensionOverflow(n_total))?;
    let absorbed =
        usize::try_from(absorbed).map_err(|_| CheckpointError::DimensionOverflow(absorbed))?;
    if bytes.len() < total {
        return Err(CheckpointError::Truncated {
            needed: total,
            available: bytes.len(),
        });
    }
    if bytes.len() > total {
        return Err(CheckpointError::TrailingBytes(bytes.len() - total));
    }
    let beta = cur.f64s(p, total)?;
    let inter = cur.f64s(p, total)?;
    let hess = cur.f64s(p * p, total)?;
    let hess = Matrix::from_row_major(p, p, hess).expect("p*p entries");
    let state = SummaryState {
        inter,
        hess,
        n_total,
        batches_absorbed: absorbed,
    };
    Ok((state, beta))
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, needed: usize) -> Result<&'a [u8], CheckpointError> {
        let end = self.pos + n;
        if end > self.bytes.len() {
            return Err(CheckpointError::Truncated {
                needed: needed.max(end),
                available: self.bytes.len(),
            });
        }
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u64(&mut self, needed: usize) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(
            self.take(8, needed)?.try_into().expect("8 bytes"),
        ))
    }

    fn f64s(&mut self, count: usize, needed: usize) -> Result<Vec<f64>, CheckpointError> {
        let raw = self.take(count * 8, needed)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }
}
