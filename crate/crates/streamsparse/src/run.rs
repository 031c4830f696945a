//! Running one (method, seed) job over a simulated stream, and fanning jobs
//! out over a worker pool.

use std::io;
use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use thiserror::Error;

use streamsparse_core::renewable::RenewableState;
use streamsparse_core::{
    linalg, oracle_support_mle, AdIhtLearner, BatchData, BatchMetrics, Error as CoreError,
    ErrorPolicy, OnlineEstimator, RenewableLearner, ScoreAccumulator, StreamError, SummaryState,
};

use crate::config::{ConfigError, ExperimentConfig, Method};
use crate::output::Row;
use crate::sim::{SimError, SimStream};

/// Newton iterations allowed for the oracle-support fit.
pub const ORACLE_NEWTON_ITERS: usize = 100;
/// Gradient tolerance of the oracle-support fit, per observation.
pub const ORACLE_TOL_PER_ROW: f64 = 1e-10;
/// Environment variable capping the worker pool.
pub const THREADS_ENV: &str = "STREAMSPARSE_THREADS";

/// Failure of a command, grouped by exit code.
#[derive(Debug, Error)]
pub enum RunError {
    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: io::Error,
    },
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{0}")]
    Stream(#[from] StreamError),
    #[error("bad checkpoint: {0}")]
    Checkpoint(String),
    #[error("bad input data: {0}")]
    Data(String),
}

impl RunError {
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Io { .. } => 1,
            RunError::Config(_) => 2,
            RunError::Stream(_) => 3,
            RunError::Checkpoint(_) => 4,
            RunError::Data(_) => 5,
        }
    }

    pub fn io(context: impl Into<String>, source: io::Error) -> Self {
        RunError::Io {
            context: context.into(),
            source,
        }
    }
}

impl From<SimError> for RunError {
    fn from(e: SimError) -> Self {
        RunError::Config(ConfigError::Invalid {
            key: "stream".into(),
            reason: e.to_string(),
        })
    }
}

fn config_error(key: &str, err: CoreError) -> RunError {
    RunError::Config(ConfigError::Invalid {
        key: key.into(),
        reason: err.to_string(),
    })
}

pub type Learner = Box<dyn OnlineEstimator + Send>;

pub fn new_learner(method: Method, p: usize, cfg: &ExperimentConfig) -> Result<Learner, RunError> {
    Ok(match method {
        Method::Adiht => Box::new(
            AdIhtLearner::new(p, cfg.family, cfg.adiht.clone()).map_err(|e| config_error("adiht", e))?,
        ),
        Method::Renewable => Box::new(
            RenewableLearner::new(p, cfg.family, cfg.renewable.clone())
                .map_err(|e| config_error("renewable", e))?,
        ),
    })
}

/// Rebuilds a learner from a decoded checkpoint.
pub fn resume_learner(
    method: Method,
    state: SummaryState,
    estimate: Vec<f64>,
    cfg: &ExperimentConfig,
) -> Result<Learner, RunError> {
    Ok(match method {
        Method::Adiht => Box::new(
            AdIhtLearner::from_state(state, estimate, cfg.family, cfg.adiht.clone())
                .map_err(|e| RunError::Checkpoint(e.to_string()))?,
        ),
        Method::Renewable => {
            if state.inter().iter().any(|v| *v != 0.0) {
                return Err(RunError::Checkpoint(
                    "checkpoint carries an AD-IHT intercept vector; it was not written by the renewable method".into(),
                ));
            }
            let rs = RenewableState::from_parts(
                state.hess().clone(),
                estimate,
                state.n_total(),
                state.batches_absorbed(),
            )
            .map_err(|e| RunError::Checkpoint(e.to_string()))?;
            Box::new(
                RenewableLearner::from_state(rs, cfg.family, cfg.renewable.clone())
                    .map_err(|e| config_error("renewable", e))?,
            )
        }
    })
}

/// Callbacks a job reports through.
pub trait JobSink {
    fn row(&mut self, row: &Row) -> io::Result<()>;
    fn checkpoint(&mut self, bytes: &[u8]) -> io::Result<()>;
}

/// Collects rows in memory and drops checkpoints.
#[derive(Debug, Default)]
pub struct Collect(pub Vec<Row>);

impl JobSink for Collect {
    fn row(&mut self, row: &Row) -> io::Result<()> {
        self.0.push(row.clone());
        Ok(())
    }

    fn checkpoint(&mut self, _bytes: &[u8]) -> io::Result<()> {
        Ok(())
    }
}

/// Where a job starts.
pub enum Start {
    Fresh,
    /// Continue from a checkpoint; score and oracle columns stay blank since
    /// they need the full history.
    Resume(SummaryState, Vec<f64>),
}

/// Runs one method over one seed's stream and returns every emitted row.
pub fn run_sim_job(
    cfg: &ExperimentConfig,
    method: Method,
    seed: u64,
    start: Start,
    sink: &mut dyn JobSink,
) -> Result<Vec<Row>, RunError> {
    let spec = cfg.stream_spec(seed)?;
    let p = spec.design.p();
    let stream = SimStream::new(spec)?;
    let (mut learner, fresh) = match start {
        Start::Fresh => (new_learner(method, p, cfg)?, true),
        Start::Resume(state, estimate) => {
            if state.p() != p {
                return Err(RunError::Checkpoint(format!(
                    "dimension mismatch: checkpoint has p = {}, config has p = {p}",
                    state.p()
                )));
            }
            let done = state.batches_absorbed();
            if done > stream.num_batches() {
                return Err(RunError::Checkpoint(format!(
                    "checkpoint has absorbed {done} batches but the stream has only {}",
                    stream.num_batches()
                )));
            }
            let expected = stream.spec().cumulative_size(done);
            if state.n_total() != expected {
                return Err(RunError::Checkpoint(format!(
                    "checkpoint sample size {} does not match the {expected} rows of the first {done} batches",
                    state.n_total()
                )));
            }
            (resume_learner(method, state, estimate, cfg)?, false)
        }
    };
    let first = learner.batches_absorbed() + 1;
    if fresh && cfg.checkpoint_after == Some(0) {
        let bytes = learner.checkpoint().map_err(|e| RunError::Checkpoint(e.to_string()))?;
        sink.checkpoint(&bytes).map_err(|e| RunError::io("writing checkpoint", e))?;
    }

    let support = stream.support().to_vec();
    let mut score = fresh.then(|| ScoreAccumulator::new(cfg.family, stream.beta_star().to_vec()));
    let mut retained: Vec<BatchData> = Vec::new();
    let oracle_on = fresh && cfg.compute_oracle;
    let local: Vec<usize> = (0..support.len()).collect();
    let star_on_support: Vec<f64> = support.iter().map(|&j| stream.beta_star()[j]).collect();

    let mut rows = Vec::new();
    for b in first..=stream.num_batches() {
        let batch = stream.batch(b)?;
        let kept = if score.is_some() { Some(batch.clone()) } else { None };
        let restricted = if oracle_on {
            Some(batch.select_columns(&support).map_err(|e| config_error("stream", e))?)
        } else {
            None
        };
        let t0 = cfg.record_timing.then(Instant::now);
        let record = match learner.step(batch) {
            Ok(r) => r,
            Err(e) => match cfg.on_error {
                ErrorPolicy::Abort => return Err(e.into()),
                ErrorPolicy::Skip => {
                    eprintln!("warning: {} seed {seed}: skipping {e}", method.name());
                    continue;
                }
            },
        };
        let wall_ms = t0.map(|t| t.elapsed().as_secs_f64() * 1e3);
        let mut metrics = BatchMetrics::against_truth(
            b,
            record.n_cumulative,
            &record.beta_hat,
            stream.beta_star(),
            &support,
        )
        .map_err(|e| config_error("stream", e))?;
        if let (Some(acc), Some(kept)) = (score.as_mut(), kept) {
            acc.absorb(&kept).map_err(|e| config_error("stream", e))?;
            let (alpha, theta) = acc.read();
            metrics.alpha_emp = Some(alpha);
            metrics.theta_emp = Some(theta);
        }
        let mut oracle_l2 = None;
        if let Some(r) = restricted {
            retained.push(r);
            let tol = ORACLE_TOL_PER_ROW * record.n_cumulative as f64;
            if let Ok(fit) = oracle_support_mle(&cfg.family, &retained, &local, ORACLE_NEWTON_ITERS, tol) {
                let err = linalg::norm2(
                    &fit.iter().zip(&star_on_support).map(|(a, s)| a - s).collect::<Vec<_>>(),
                );
                oracle_l2 = Some(err);
                if err > 0.0 {
                    metrics.oracle_ratio = metrics.l2_error.map(|l2| l2 / err);
                }
            }
        }
        let row = Row {
            method: method.name(),
            seed: Some(seed),
            metrics,
            iters: record.iterations_run,
            lambda_final: record.lambda_final,
            wall_ms,
            oracle_l2,
        };
        sink.row(&row).map_err(|e| RunError::io("writing results", e))?;
        rows.push(row);
        if cfg.checkpoint_after == Some(learner.batches_absorbed()) {
            let bytes = learner.checkpoint().map_err(|e| RunError::Checkpoint(e.to_string()))?;
            sink.checkpoint(&bytes).map_err(|e| RunError::io("writing checkpoint", e))?;
        }
    }
    Ok(rows)
}

/// Worker count for `jobs` jobs: available parallelism, capped by
/// `STREAMSPARSE_THREADS` when set to a positive integer.
pub fn worker_count(jobs: usize) -> usize {
    let mut n = std::thread::available_parallelism().map_or(1, |n| n.get());
    if let Some(cap) = std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|c| *c >= 1)
    {
        n = n.min(cap);
    }
    n.min(jobs).max(1)
}

/// Applies `f` to every job on `threads` scoped workers; results keep job order.
pub fn run_pool<T, R, F>(jobs: &[T], threads: usize, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync,
{
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<R>>> = Mutex::new((0..jobs.len()).map(|_| None).collect());
    std::thread::scope(|scope| {
        for _ in 0..threads.max(1) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(job) = jobs.get(i) else { break };
                let r = f(job);
                results.lock().expect("no worker panicked")[i] = Some(r);
            });
        }
    });
    results
        .into_inner()
        .expect("no worker panicked")
        .into_iter()
        .map(|r| r.expect("every job ran"))
        .collect()
}

/// Output file for a job.
pub fn job_csv_path(cfg: &ExperimentConfig, method: Method, seed: u64, suffix: &str) -> PathBuf {
    cfg.output_dir.join(format!("{}_{seed}{suffix}.csv", method.name()))
}

pub fn job_checkpoint_path(cfg: &ExperimentConfig, method: Method, seed: u64) -> PathBuf {
    cfg.output_dir.join(format!("{}_{seed}.ckpt", method.name()))
}
