//! Feature batches (one sample per row) and regularized covariance estimation.

use std::io::{Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, RowDVector};

use crate::error::{Result, SpdError};
use crate::spd::SpdMatrix;

/// Default covariance regularizer.
pub const DEFAULT_GAMMA: f64 = 1e-5;

/// `L × d` feature rows with optional integer class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureBatch {
    rows: DMatrix<f64>,
    labels: Option<Vec<usize>>,
}

impl FeatureBatch {
    pub fn new(rows: DMatrix<f64>) -> Self {
        Self { rows, labels: None }
    }

    pub fn with_labels(rows: DMatrix<f64>, labels: Vec<usize>) -> Result<Self> {
        if labels.len() != rows.nrows() {
            return Err(SpdError::Dimension(format!(
                "{} labels for {} rows",
                labels.len(),
                rows.nrows()
            )));
        }
        Ok(Self {
            rows,
            labels: Some(labels),
        })
    }

    pub fn from_rows(rows: &[Vec<f64>], labels: Option<Vec<usize>>) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().position(|r| r.len() != dim) {
            return Err(SpdError::Dimension(format!(
                "row {bad} has {} features, expected {dim}",
                rows[bad].len()
            )));
        }
        let m = DMatrix::from_fn(rows.len(), dim, |i, j| rows[i][j]);
        match labels {
            Some(l) => Self::with_labels(m, l),
            None => Ok(Self::new(m)),
        }
    }

    pub fn len(&self) -> usize {
        self.rows.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.rows.ncols()
    }

    pub fn rows(&self) -> &DMatrix<f64> {
        &self.rows
    }

    pub fn labels(&self) -> Option<&[usize]> {
        self.labels.as_deref()
    }

    /// Drops the labels.
    pub fn unlabeled(&self) -> Self {
        Self::new(self.rows.clone())
    }

    /// Rows at `indices`, in that order, labels carried along.
    pub fn select(&self, indices: &[usize]) -> Self {
        let rows = self.rows.select_rows(indices);
        let labels = self
            .labels
            .as_ref()
            .map(|l| indices.iter().map(|&i| l[i]).collect());
        Self { rows, labels }
    }

    /// Same labels, new feature rows (row count must match).
    pub fn map_rows(&self, rows: DMatrix<f64>) -> Result<Self> {
        if rows.nrows() != self.len() {
            return Err(SpdError::Dimension(format!(
                "replacement has {} rows, batch has {}",
                rows.nrows(),
                self.len()
            )));
        }
        Ok(Self {
            rows,
            labels: self.labels.clone(),
        })
    }

    pub fn column_means(&self) -> RowDVector<f64> {
        self.rows.row_mean()
    }

    /// Rows minus the per-column mean.
    pub fn centered(&self) -> DMatrix<f64> {
        let mean = self.column_means();
        let mut c = self.rows.clone();
        for mut row in c.row_iter_mut() {
            row -= &mean;
        }
        c
    }

    /// Parses CSV text. A header row is detected when the first record is not
    /// numeric; a final header column named `label` marks integer labels.
    pub fn read_csv_from<R: Read>(reader: R, origin: &Path) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(false)
            .trim(csv::Trim::All)
            .from_reader(reader);
        let mut records = rdr.records();
        let mut has_label = false;
        let mut pending = None;

        if let Some(first) = records.next() {
            let first = first.map_err(|e| SpdError::parse(origin, e))?;
            let numeric = first.iter().all(|f| f.parse::<f64>().is_ok());
            if numeric {
                pending = Some(first);
            } else {
                has_label = first
                    .iter()
                    .next_back()
                    .is_some_and(|h| h.eq_ignore_ascii_case("label"));
            }
        }

        let mut rows = Vec::new();
        let mut labels = Vec::new();
        let all = pending.into_iter().map(Ok).chain(records);
        for (line, rec) in all.enumerate() {
            let rec = rec.map_err(|e| SpdError::parse(origin, e))?;
            let mut fields: Vec<&str> = rec.iter().collect();
            if has_label {
                let raw = fields.pop().unwrap_or_default();
                let label = raw.parse::<usize>().map_err(|_| {
                    SpdError::parse(origin, format!("record {line}: bad label {raw:?}"))
                })?;
                labels.push(label);
            }
            let row = fields
                .iter()
                .map(|f| {
                    f.parse::<f64>().map_err(|_| {
                        SpdError::parse(origin, format!("record {line}: bad number {f:?}"))
                    })
                })
                .collect::<Result<Vec<f64>>>()?;
            rows.push(row);
        }
        Self::from_rows(&rows, has_label.then_some(labels)).map_err(|e| match e {
            SpdError::Dimension(msg) => SpdError::parse(origin, msg),
            other => other,
        })
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| SpdError::io(path, e))?;
        Self::read_csv_from(std::io::BufReader::new(file), path)
    }

    /// Writes a header `f0,…,f{d-1}[,label]` then one row per sample.
    pub fn write_csv_to<W: Write>(&self, writer: W) -> std::io::Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header: Vec<String> = (0..self.dim()).map(|j| format!("f{j}")).collect();
        if self.labels.is_some() {
            header.push("label".into());
        }
        w.write_record(&header)?;
        for (i, row) in self.rows.row_iter().enumerate() {
            let mut rec: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
            if let Some(l) = &self.labels {
                rec.push(l[i].to_string());
            }
            w.write_record(&rec)?;
        }
        w.flush()
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| SpdError::io(path, e))?;
        self.write_csv_to(std::io::BufWriter::new(file))
            .map_err(|e| SpdError::io(path, e))
    }
}

/// `(1/(L−1)) D_cᵀ D_c + γ I`, where `D_c` is the mean-centered batch.
///
/// With `gamma == 0` a numerically rank-deficient estimate is rejected even if
/// round-off leaves its smallest eigenvalue marginally positive.
pub fn batch_covariance(batch: &FeatureBatch, gamma: f64) -> Result<SpdMatrix> {
    if batch.len() < 2 {
        return Err(SpdError::InsufficientSamples {
            needed: 2,
            got: batch.len(),
        });
    }
    if !(gamma >= 0.0) || !gamma.is_finite() {
        return Err(SpdError::Invalid(format!(
            "covariance regularizer must be finite and nonnegative, got {gamma}"
        )));
    }
    let d = batch.dim();
    let centered = batch.centered();
    let mut cov = centered.transpose() * &centered / (batch.len() - 1) as f64;
    for i in 0..d {
        cov[(i, i)] += gamma;
    }
    let cov = SpdMatrix::from_symmetric_part(&cov)?;
    if gamma == 0.0 {
        let rank_floor = d as f64 * f64::EPSILON * cov.max_eigenvalue();
        if cov.min_eigenvalue() <= rank_floor {
            return Err(SpdError::NotPositiveDefinite {
                min_eigenvalue: cov.min_eigenvalue(),
            });
        }
    }
    Ok(cov)
}
