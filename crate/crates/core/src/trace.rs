//! Time series of run diagnostics and its CSV form.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Column order of the CSV file.
pub const CSV_HEADER: [&str; 8] = [
    "iter",
    "samples",
    "wall_ms",
    "z_norm",
    "exact_grad_norm",
    "upper_loss",
    "delta_y",
    "delta_tracker",
];

/// One diagnostics record, taken after `iter` completed iterations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iter: u64,
    /// Cumulative oracle samples, initialization included.
    pub samples: u64,
    pub wall_ms: f64,
    /// `‖z‖`, the norm of the hypergradient estimate.
    pub z_norm: f64,
    /// `‖∇F(x)‖` from the exact oracle.
    pub exact_grad_norm: Option<f64>,
    /// Full-batch `(1/m) Σ f_i(x, y_i)` at the current lower iterates.
    pub upper_loss: Option<f64>,
    /// `Σ ‖y_i − y_i(x)‖²`.
    pub delta_y: Option<f64>,
    /// `Σ ‖H_i − ∇²g_i‖²_F` for the first solver, `Σ ‖v_i − v_i(x, y_i)‖²` for the second.
    pub delta_tracker: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Trace {
    rows: Vec<TraceRow>,
}

impl Trace {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends a row; `iter` must increase and `samples` must not decrease.
    pub fn push(&mut self, row: TraceRow) -> Result<()> {
        if let Some(last) = self.rows.last() {
            if row.iter <= last.iter {
                return Err(Error::Invariant(format!(
                    "trace iter {} does not follow {}",
                    row.iter, last.iter
                )));
            }
            if row.samples < last.samples {
                return Err(Error::Invariant(format!(
                    "trace samples decreased from {} to {}",
                    last.samples, row.samples
                )));
            }
        }
        self.rows.push(row);
        Ok(())
    }

    pub fn rows(&self) -> &[TraceRow] {
        &self.rows
    }

    pub fn last(&self) -> Option<&TraceRow> {
        self.rows.last()
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// First recorded iteration whose exact gradient norm is at most `threshold`.
    pub fn first_below(&self, threshold: f64) -> Option<u64> {
        self.rows
            .iter()
            .find(|r| r.exact_grad_norm.is_some_and(|g| g <= threshold))
            .map(|r| r.iter)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(writer);
        w.write_record(CSV_HEADER)?;
        for row in &self.rows {
            w.serialize(row)?;
        }
        w.flush().map_err(|e| Error::Csv(e.into()))?;
        Ok(())
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut r = csv::Reader::from_reader(reader);
        let header: Vec<String> = r.headers()?.iter().map(str::to_owned).collect();
        if header != CSV_HEADER {
            return Err(Error::Invariant(format!("unexpected trace header {header:?}")));
        }
        let mut trace = Trace::new();
        for row in r.deserialize() {
            trace.push(row?)?;
        }
        Ok(trace)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|source| Error::Io {
            path: path.to_owned(),
            source,
        })?;
        self.write_csv(std::io::BufWriter::new(file))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|source| Error::Io {
            path: path.to_owned(),
            source,
        })?;
        Self::read_csv(std::io::BufReader::new(file))
    }
}
