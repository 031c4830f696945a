//! Streaming sparse estimation for generalized linear models.
//!
//! Batches arrive one at a time and are discarded after use. Each batch is
//! fitted by iterative hard thresholding on a surrogate of the cumulative
//! gradient in which every historical batch's score is linearised at that
//! batch's own estimate. The only retained history is a `p`-vector, a `p x p`
//! matrix and the cumulative sample size.
//!
//! The crate is `no_std` with `alloc`. File formats, the data generator and
//! the command-line front end live in the `streamsparse` crate.
//!
//! ```
//! use streamsparse_core::{AdIhtLearner, BatchData, GlmFamily, IhtConfig, Matrix, OnlineEstimator};
//!
//! let x = Matrix::from_rows(&[[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]]).unwrap();
//! let batch = BatchData::new(x, vec![2.0, 0.0, 2.0], 1).unwrap();
//! let mut learner = AdIhtLearner::new(2, GlmFamily::gaussian(1.0), IhtConfig::default()).unwrap();
//! let record = learner.step(batch).unwrap();
//! assert_eq!(record.n_cumulative, 3);
//! ```
#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod engine;
pub mod error;
pub mod glm;
pub mod linalg;
pub mod metrics;
pub mod oracle;
pub mod renewable;
pub mod summary;
pub mod threshold;

pub use engine::{
    compute_lambda_init, drive_stream, fit_batch, process_stream, AdIhtLearner, BatchFit,
    ErrorPolicy, EstimateRecord, IhtConfig, LambdaInit, OnlineEstimator, RecordSink, StartMode,
    StepRule, TraceEntry,
};
pub use error::{CheckpointError, Error, Result, StreamError};
pub use glm::{batch_gradient, batch_hessian, batch_loss, BatchData, Family, GlmFamily, LossValue};
pub use linalg::Matrix;
pub use metrics::{l2_error, scaled_error, support_errors, BatchMetrics, ScoreAccumulator};
pub use oracle::{offline_iht, oracle_support_mle};
pub use renewable::{
    fit_batch_renewable, soft_threshold, RenewableConfig, RenewableLearner, RenewableState,
};
pub use summary::{decode_checkpoint, encode_checkpoint, init_state, SummaryState};
pub use threshold::{hard_threshold, next_threshold, planned_iterations, ThresholdSchedule};
