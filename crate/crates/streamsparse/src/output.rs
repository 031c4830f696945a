//! Per-batch CSV rows and checkpoint files.

use std::fs::File;
use std::io::{self, BufWriter, Read, Write};
use std::path::Path;

use streamsparse_core::{BatchMetrics, CheckpointError, Error as CoreError, SummaryState};

/// Header of every per-batch CSV, in column order.
pub const CSV_HEADER: [&str; 16] = [
    "b",
    "N_b",
    "method",
    "seed",
    "l2_error",
    "linf_error",
    "support_size",
    "fp",
    "fn",
    "scaled_error",
    "alpha_emp",
    "theta_emp",
    "oracle_ratio",
    "iters",
    "lambda_final",
    "wall_ms",
];

/// One output row.
#[derive(Debug, Clone, PartialEq)]
pub struct Row {
    pub method: &'static str,
    pub seed: Option<u64>,
    pub metrics: BatchMetrics,
    pub iters: usize,
    pub lambda_final: f64,
    pub wall_ms: Option<f64>,
    /// Error of the oracle-support fit; not written to the per-batch CSV.
    pub oracle_l2: Option<f64>,
}

/// Lossless float text: 17 significant digits.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn opt_f64(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_default()
}

fn opt_usize(v: Option<usize>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl Row {
    pub fn fields(&self) -> [String; 16] {
        let m = &self.metrics;
        [
            m.b.to_string(),
            m.n_cumulative.to_string(),
            self.method.to_string(),
            self.seed.map(|s| s.to_string()).unwrap_or_default(),
            opt_f64(m.l2_error),
            opt_f64(m.linf_error),
            m.support_size.to_string(),
            opt_usize(m.false_positives),
            opt_usize(m.false_negatives),
            opt_f64(m.scaled_error),
            opt_f64(m.alpha_emp),
            opt_f64(m.theta_emp),
            opt_f64(m.oracle_ratio),
            self.iters.to_string(),
            fmt_f64(self.lambda_final),
            opt_f64(self.wall_ms),
        ]
    }
}

/// Writes the header on creation and flushes after every row, so rows
/// written before a failure survive it.
pub struct RowWriter<W: Write> {
    inner: csv::Writer<W>,
}

impl RowWriter<BufWriter<File>> {
    pub fn create(path: &Path) -> io::Result<Self> {
        RowWriter::new(BufWriter::new(File::create(path)?))
    }
}

impl<W: Write> RowWriter<W> {
    pub fn new(w: W) -> io::Result<Self> {
        let mut inner = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(w);
        inner.write_record(CSV_HEADER).map_err(csv_io)?;
        inner.flush()?;
        Ok(RowWriter { inner })
    }

    pub fn write(&mut self, row: &Row) -> io::Result<()> {
        self.inner.write_record(row.fields()).map_err(csv_io)?;
        self.inner.flush()
    }

    pub fn into_inner(self) -> io::Result<W> {
        self.inner.into_inner().map_err(|e| e.into_error())
    }
}

pub(crate) fn csv_io(e: csv::Error) -> io::Error {
    match e.into_kind() {
        csv::ErrorKind::Io(e) => e,
        other => io::Error::other(format!("{other:?}")),
    }
}

/// A row read back from an output CSV; blank cells are `None`.
#[derive(Debug, Clone, PartialEq)]
pub struct ParsedRow {
    pub cells: Vec<Option<String>>,
}

impl ParsedRow {
    pub fn get(&self, column: &str) -> Option<&str> {
        let i = CSV_HEADER.iter().position(|c| *c == column)?;
        self.cells.get(i)?.as_deref()
    }

    pub fn get_f64(&self, column: &str) -> Option<f64> {
        self.get(column)?.parse().ok()
    }
}

/// Reads an output CSV, checking the header.
pub fn read_rows<R: Read>(r: R) -> io::Result<Vec<ParsedRow>> {
    let mut rdr = csv::Reader::from_reader(r);
    let header = rdr.headers().map_err(csv_io)?.clone();
    if header.iter().ne(CSV_HEADER.iter().copied()) {
        return Err(io::Error::new(io::ErrorKind::InvalidData, "unexpected CSV header"));
    }
    rdr.records()
        .map(|rec| {
            let rec = rec.map_err(csv_io)?;
            Ok(ParsedRow {
                cells: rec
                    .iter()
                    .map(|c| (!c.is_empty()).then(|| c.to_string()))
                    .collect(),
            })
        })
        .collect()
}

#[derive(Debug, thiserror::Error)]
pub enum CheckpointFileError {
    #[error("checkpoint i/o: {0}")]
    Io(#[from] io::Error),
    #[error("checkpoint: {0}")]
    Format(#[from] CheckpointError),
    #[error("checkpoint: {0}")]
    Core(#[from] CoreError),
}

pub fn write_checkpoint<W: Write>(mut w: W, bytes: &[u8]) -> io::Result<()> {
    w.write_all(bytes)?;
    w.flush()
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<(SummaryState, Vec<f64>), CheckpointFileError> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    Ok(streamsparse_core::decode_checkpoint(&bytes)?)
}

pub fn save_checkpoint(path: &Path, bytes: &[u8]) -> io::Result<()> {
    write_checkpoint(BufWriter::new(File::create(path)?), bytes)
}

pub fn load_checkpoint(path: &Path) -> Result<(SummaryState, Vec<f64>), CheckpointFileError> {
    read_checkpoint(File::open(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_is_exact() {
        let w = RowWriter::new(Vec::new()).unwrap();
        let bytes = w.into_inner().unwrap();
        assert_eq!(
            String::from_utf8(bytes).unwrap(),
            "b,N_b,method,seed,l2_error,linf_error,support_size,fp,fn,scaled_error,alpha_emp,theta_emp,oracle_ratio,iters,lambda_final,wall_ms\n"
        );
    }

    #[test]
    fn floats_round_trip_and_blanks() {
        let v = 0.1 + 0.2;
        assert_eq!(fmt_f64(v).parse::<f64>().unwrap().to_bits(), v.to_bits());
        let row = Row {
            method: "adiht",
            seed: None,
            metrics: BatchMetrics::without_truth(3, 250, &[0.0, 1.5]),
            iters: 12,
            lambda_final: 0.25,
            wall_ms: None,
            oracle_l2: None,
        };
        let mut w = RowWriter::new(Vec::new()).unwrap();
        w.write(&row).unwrap();
        let bytes = w.into_inner().unwrap();
        let rows = read_rows(bytes.as_slice()).unwrap();
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].get("b"), Some("3"));
        assert_eq!(rows[0].get("fp"), None);
        assert_eq!(rows[0].get("fn"), None);
        assert_eq!(rows[0].get("support_size"), Some("1"));
        assert_eq!(rows[0].get_f64("lambda_final"), Some(0.25));
    }
}
