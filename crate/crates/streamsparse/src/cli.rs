//! The `streamsparse` command line.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{self, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use streamsparse_core::{AdIhtLearner, BatchData, BatchMetrics, Matrix, OnlineEstimator};

use crate::config::{ConfigError, ExperimentConfig, Method};
use crate::output::{fmt_f64, load_checkpoint, save_checkpoint, Row, RowWriter};
use crate::run::{
    job_checkpoint_path, job_csv_path, run_pool, run_sim_job, worker_count, JobSink, RunError, Start,
};
use crate::svg::{self, Panel, Series};

#[derive(Debug, Parser)]
#[command(name = "streamsparse", version, about = "Streaming sparse GLM estimation experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run every seed and method of a config and write per-job CSVs.
    Simulate { config: PathBuf },
    /// Continue a checkpointed run to the end of its stream.
    Resume {
        checkpoint: PathBuf,
        config: PathBuf,
        /// Seed of the checkpointed run; defaults to the config's only seed.
        #[arg(long)]
        seed: Option<u64>,
        /// `adiht` or `renewable`; defaults to the config's only method.
        #[arg(long)]
        method: Option<String>,
    },
    /// Run AD-IHT over a CSV file chunked into batches.
    Ingest {
        csv: PathBuf,
        #[arg(long)]
        response: String,
        #[arg(long)]
        batch_size: usize,
        config: PathBuf,
    },
    /// Run both methods plus the oracle-support fit and join the results.
    Compare { config: PathBuf },
}

/// Runs a parsed command; the error carries the exit code.
pub fn execute(cli: Cli) -> Result<(), RunError> {
    match cli.command {
        Command::Simulate { config } => simulate(&config),
        Command::Resume {
            checkpoint,
            config,
            seed,
            method,
        } => resume(&checkpoint, &config, seed, method.as_deref()),
        Command::Ingest {
            csv,
            response,
            batch_size,
            config,
        } => ingest(&csv, &response, batch_size, &config),
        Command::Compare { config } => compare(&config),
    }
}

fn bad_key(key: &str, reason: impl Into<String>) -> RunError {
    RunError::Config(ConfigError::Invalid {
        key: key.into(),
        reason: reason.into(),
    })
}

fn create_output_dir(cfg: &ExperimentConfig) -> Result<(), RunError> {
    fs::create_dir_all(&cfg.output_dir)
        .map_err(|e| RunError::io(format!("creating {}", cfg.output_dir.display()), e))
}

/// Writes rows to a CSV file and checkpoints next to it.
struct FileSink {
    writer: RowWriter<BufWriter<File>>,
    checkpoint_path: PathBuf,
}

impl JobSink for FileSink {
    fn row(&mut self, row: &Row) -> io::Result<()> {
        self.writer.write(row)
    }

    fn checkpoint(&mut self, bytes: &[u8]) -> io::Result<()> {
        save_checkpoint(&self.checkpoint_path, bytes)
    }
}

fn file_job(
    cfg: &ExperimentConfig,
    method: Method,
    seed: u64,
    start: Start,
    suffix: &str,
) -> Result<Vec<Row>, RunError> {
    let path = job_csv_path(cfg, method, seed, suffix);
    let writer = RowWriter::create(&path).map_err(|e| RunError::io(format!("creating {}", path.display()), e))?;
    let mut sink = FileSink {
        writer,
        checkpoint_path: job_checkpoint_path(cfg, method, seed),
    };
    run_sim_job(cfg, method, seed, start, &mut sink)
}

type JobRows = Vec<((Method, u64), Vec<Row>)>;
/// `(b, value)` points for the l2 and scaled-error panels.
type Curves = (Vec<(f64, f64)>, Vec<(f64, f64)>);

fn run_all(cfg: &ExperimentConfig, methods: &[Method]) -> Result<JobRows, RunError> {
    cfg.stream_spec(0)?;
    create_output_dir(cfg)?;
    let jobs: Vec<(Method, u64)> = cfg
        .seeds
        .iter()
        .flat_map(|&s| methods.iter().map(move |&m| (m, s)))
        .collect();
    let results = run_pool(&jobs, worker_count(jobs.len()), |&(m, s)| {
        file_job(cfg, m, s, Start::Fresh, "")
    });
    jobs.into_iter()
        .zip(results)
        .map(|(job, r)| r.map(|rows| (job, rows)))
        .collect()
}

pub fn simulate(config: &Path) -> Result<(), RunError> {
    let cfg = ExperimentConfig::from_path(config)?;
    let results = run_all(&cfg, &cfg.methods)?;
    if cfg.emit_svg {
        write_svg(&cfg, &results)?;
    }
    Ok(())
}

/// Medians across seeds of l2 and scaled error, per method and batch.
fn median_curves(results: &JobRows) -> BTreeMap<Method, Curves> {
    let mut by: BTreeMap<Method, BTreeMap<usize, (Vec<f64>, Vec<f64>)>> = BTreeMap::new();
    for ((m, _), rows) in results {
        for r in rows {
            let e = by.entry(*m).or_default().entry(r.metrics.b).or_default();
            if let Some(v) = r.metrics.l2_error {
                e.0.push(v);
            }
            if let Some(v) = r.metrics.scaled_error {
                e.1.push(v);
            }
        }
    }
    by.into_iter()
        .map(|(m, per_b)| {
            let mut l2 = Vec::new();
            let mut sc = Vec::new();
            for (b, (a, s)) in per_b {
                if let Some(v) = svg::median(&a) {
                    l2.push((b as f64, v));
                }
                if let Some(v) = svg::median(&s) {
                    sc.push((b as f64, v));
                }
            }
            (m, (l2, sc))
        })
        .collect()
}

fn write_svg(cfg: &ExperimentConfig, results: &JobRows) -> Result<(), RunError> {
    let curves = median_curves(results);
    let mut l2 = Panel {
        title: "median l2 error".into(),
        series: Vec::new(),
    };
    let mut sc = Panel {
        title: "median scaled error".into(),
        series: Vec::new(),
    };
    for (m, (a, s)) in curves {
        l2.series.push(Series {
            label: m.name().into(),
            points: a,
        });
        sc.series.push(Series {
            label: m.name().into(),
            points: s,
        });
    }
    let path = cfg.output_dir.join("error_curve.svg");
    fs::write(&path, svg::render(&[l2, sc])).map_err(|e| RunError::io(format!("writing {}", path.display()), e))
}

pub fn resume(checkpoint: &Path, config: &Path, seed: Option<u64>, method: Option<&str>) -> Result<(), RunError> {
    let cfg = ExperimentConfig::from_path(config)?;
    let method = match method {
        Some(name) => Method::parse(name).ok_or_else(|| bad_key("method", format!("unknown method `{name}`")))?,
        None => match cfg.methods.as_slice() {
            [m] => *m,
            _ => return Err(bad_key("method", "resume needs a single method; pass --method")),
        },
    };
    let seed = match seed {
        Some(s) => s,
        None => match cfg.seeds.as_slice() {
            [s] => *s,
            _ => return Err(bad_key("seeds", "resume needs a single seed; pass --seed")),
        },
    };
    cfg.stream_spec(seed)?;
    let (state, estimate) = load_checkpoint(checkpoint).map_err(|e| RunError::Checkpoint(e.to_string()))?;
    create_output_dir(&cfg)?;
    let cfg = ExperimentConfig {
        checkpoint_after: None,
        ..cfg
    };
    file_job(&cfg, method, seed, Start::Resume(state, estimate), "_resumed").map(|_| ())
}

pub fn compare(config: &Path) -> Result<(), RunError> {
    let cfg = ExperimentConfig::from_path(config)?;
    let cfg = ExperimentConfig {
        compute_oracle: true,
        methods: vec![Method::Adiht, Method::Renewable],
        ..cfg
    };
    let results = run_all(&cfg, &cfg.methods)?;
    for &seed in &cfg.seeds {
        let rows_for = |m: Method| -> &[Row] {
            results
                .iter()
                .find(|((mm, s), _)| *mm == m && *s == seed)
                .map_or(&[], |(_, r)| r.as_slice())
        };
        write_compare(&cfg, seed, rows_for(Method::Adiht), rows_for(Method::Renewable))?;
    }
    if cfg.emit_svg {
        write_svg(&cfg, &results)?;
    }
    Ok(())
}

/// Header of the joined comparison CSV.
pub const COMPARE_HEADER: [&str; 12] = [
    "b",
    "N_b",
    "seed",
    "adiht_l2",
    "renewable_l2",
    "oracle_l2",
    "adiht_scaled_error",
    "renewable_scaled_error",
    "adiht_support_size",
    "renewable_support_size",
    "adiht_oracle_ratio",
    "renewable_oracle_ratio",
];

fn write_compare(cfg: &ExperimentConfig, seed: u64, adiht: &[Row], renewable: &[Row]) -> Result<(), RunError> {
    let path = cfg.output_dir.join(format!("compare_{seed}.csv"));
    let ctx = || format!("writing {}", path.display());
    let file = File::create(&path).map_err(|e| RunError::io(ctx(), e))?;
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(BufWriter::new(file));
    let io_err = |e: csv::Error| RunError::io(ctx(), crate::output::csv_io(e));
    w.write_record(COMPARE_HEADER).map_err(io_err)?;
    let by_b = |rows: &[Row]| -> BTreeMap<usize, Row> { rows.iter().map(|r| (r.metrics.b, r.clone())).collect() };
    let a = by_b(adiht);
    let r = by_b(renewable);
    let bs: std::collections::BTreeSet<usize> = a.keys().chain(r.keys()).copied().collect();
    let f = |v: Option<f64>| v.map(fmt_f64).unwrap_or_default();
    for b in bs {
        let ra = a.get(&b);
        let rr = r.get(&b);
        let n = ra.or(rr).map(|x| x.metrics.n_cumulative).unwrap_or_default();
        let oracle = ra.and_then(|x| x.oracle_l2).or_else(|| rr.and_then(|x| x.oracle_l2));
        w.write_record([
            b.to_string(),
            n.to_string(),
            seed.to_string(),
            f(ra.and_then(|x| x.metrics.l2_error)),
            f(rr.and_then(|x| x.metrics.l2_error)),
            f(oracle),
            f(ra.and_then(|x| x.metrics.scaled_error)),
            f(rr.and_then(|x| x.metrics.scaled_error)),
            ra.map(|x| x.metrics.support_size.to_string()).unwrap_or_default(),
            rr.map(|x| x.metrics.support_size.to_string()).unwrap_or_default(),
            f(ra.and_then(|x| x.metrics.oracle_ratio)),
            f(rr.and_then(|x| x.metrics.oracle_ratio)),
        ])
        .map_err(io_err)?;
    }
    w.flush().map_err(|e| RunError::io(ctx(), e))
}

/// Splits a CSV with a header into batches of `batch_size` rows. The
/// response column is `response`; every other column is a feature.
pub struct CsvBatches<R: Read> {
    records: csv::StringRecordsIntoIter<R>,
    response_col: usize,
    columns: Vec<String>,
    batch_size: usize,
    next_index: usize,
    data_row: usize,
    done: bool,
}

impl<R: Read> CsvBatches<R> {
    pub fn new(reader: R, response: &str, batch_size: usize) -> Result<Self, RunError> {
        if batch_size == 0 {
            return Err(bad_key("batch_size", "must be at least 1"));
        }
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
        let header = rdr
            .headers()
            .map_err(|e| RunError::Data(format!("cannot read CSV header: {e}")))?
            .clone();
        let columns: Vec<String> = header.iter().map(str::to_string).collect();
        let response_col = columns
            .iter()
            .position(|c| c == response)
            .ok_or_else(|| bad_key("response", format!("column `{response}` not found in the CSV header")))?;
        if columns.len() < 2 {
            return Err(bad_key("response", "the CSV needs at least one feature column"));
        }
        Ok(CsvBatches {
            records: rdr.into_records(),
            response_col,
            columns,
            batch_size,
            next_index: 1,
            data_row: 0,
            done: false,
        })
    }

    /// Number of feature columns.
    pub fn p(&self) -> usize {
        self.columns.len() - 1
    }

    fn parse_row(&self, rec: &csv::StringRecord) -> Result<(Vec<f64>, f64), RunError> {
        let mut x = Vec::with_capacity(self.p());
        let mut y = 0.0;
        for (c, cell) in rec.iter().enumerate() {
            let v: f64 = cell.trim().parse().ok().filter(|v: &f64| v.is_finite()).ok_or_else(|| {
                RunError::Data(format!(
                    "non-numeric cell at row {}, column {} (`{}`): {cell:?}",
                    self.data_row,
                    c + 1,
                    self.columns[c]
                ))
            })?;
            if c == self.response_col {
                y = v;
            } else {
                x.push(v);
            }
        }
        Ok((x, y))
    }
}

impl<R: Read> Iterator for CsvBatches<R> {
    type Item = Result<BatchData, RunError>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.done {
            return None;
        }
        let p = self.p();
        let mut xs = Vec::with_capacity(self.batch_size * p);
        let mut ys = Vec::with_capacity(self.batch_size);
        while ys.len() < self.batch_size {
            match self.records.next() {
                None => {
                    self.done = true;
                    break;
                }
                Some(Err(e)) => {
                    self.done = true;
                    return Some(Err(RunError::Data(format!("malformed CSV: {e}"))));
                }
                Some(Ok(rec)) => {
                    self.data_row += 1;
                    match self.parse_row(&rec) {
                        Ok((x, y)) => {
                            xs.extend(x);
                            ys.push(y);
                        }
                        Err(e) => {
                            self.done = true;
                            return Some(Err(e));
                        }
                    }
                }
            }
        }
        if ys.is_empty() {
            return None;
        }
        let n = ys.len();
        let index = self.next_index;
        self.next_index += 1;
        Some(
            Matrix::from_row_major(n, p, xs)
                .ok_or_else(|| RunError::Data(format!("ragged rows in batch {index}")))
                .and_then(|x| BatchData::new(x, ys, index).map_err(|e| RunError::Data(e.to_string()))),
        )
    }
}

pub fn ingest(csv_path: &Path, response: &str, batch_size: usize, config: &Path) -> Result<(), RunError> {
    let cfg = ExperimentConfig::from_path(config)?;
    let file = File::open(csv_path).map_err(|e| RunError::io(format!("opening {}", csv_path.display()), e))?;
    let batches = CsvBatches::new(io::BufReader::new(file), response, batch_size)?;
    let p = batches.p();
    create_output_dir(&cfg)?;
    let out = cfg.output_dir.join("adiht_ingest.csv");
    let mut writer = RowWriter::create(&out).map_err(|e| RunError::io(format!("creating {}", out.display()), e))?;
    let mut learner = AdIhtLearner::new(p, cfg.family, cfg.adiht.clone()).map_err(|e| {
        bad_key("adiht", e.to_string())
    })?;
    let ckpt = cfg.output_dir.join("adiht_ingest.ckpt");
    if cfg.checkpoint_after == Some(0) {
        save_ingest_checkpoint(&learner, &ckpt)?;
    }
    for batch in batches {
        let batch = batch?;
        let t0 = cfg.record_timing.then(std::time::Instant::now);
        let record = match learner.step(batch) {
            Ok(r) => r,
            Err(e) if cfg.on_error == streamsparse_core::ErrorPolicy::Skip => {
                eprintln!("warning: skipping {e}");
                continue;
            }
            Err(e) => return Err(e.into()),
        };
        let row = Row {
            method: Method::Adiht.name(),
            seed: None,
            metrics: BatchMetrics::without_truth(record.batch_index, record.n_cumulative, &record.beta_hat),
            iters: record.iterations_run,
            lambda_final: record.lambda_final,
            wall_ms: t0.map(|t| t.elapsed().as_secs_f64() * 1e3),
            oracle_l2: None,
        };
        writer
            .write(&row)
            .map_err(|e| RunError::io(format!("writing {}", out.display()), e))?;
        if cfg.checkpoint_after == Some(learner.batches_absorbed()) {
            save_ingest_checkpoint(&learner, &ckpt)?;
        }
    }
    writer
        .into_inner()
        .and_then(|mut w| w.flush())
        .map_err(|e| RunError::io(format!("writing {}", out.display()), e))
}

fn save_ingest_checkpoint(learner: &AdIhtLearner, path: &Path) -> Result<(), RunError> {
    let bytes = learner.checkpoint().map_err(|e| RunError::Checkpoint(e.to_string()))?;
    save_checkpoint(path, &bytes).map_err(|e| RunError::io(format!("writing {}", path.display()), e))
}
