use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Result, SpdError};

pub const TRACE_HEADER: [&str; 5] = ["step", "epoch", "loss_class", "loss_align_weighted", "lr"];

/// One optimization step.
///
/// `loss_align_weighted` is the alignment term of the run's objective: `α·L_log`
/// in log mode, `λ·L_CORAL` in coral mode, and the (unoptimized) `α·L_log` in
/// baseline mode. Both weighted losses are kept in memory regardless of mode.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRecord {
    pub step: usize,
    pub epoch: usize,
    pub loss_class: f64,
    pub loss_align_weighted: f64,
    pub lr: f64,
    pub weighted_log: f64,
    pub weighted_coral: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct LossTrace {
    records: Vec<TraceRecord>,
}

impl LossTrace {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, record: TraceRecord) -> Result<()> {
        if let Some(last) = self.records.last() {
            if record.step <= last.step {
                return Err(SpdError::Invalid(format!(
                    "trace step {} does not follow {}",
                    record.step, last.step
                )));
            }
        }
        let values = [
            record.loss_class,
            record.loss_align_weighted,
            record.lr,
            record.weighted_log,
            record.weighted_coral,
        ];
        if values.iter().any(|v| !v.is_finite()) {
            return Err(SpdError::NonFinite(format!("trace record {record:?}")));
        }
        self.records.push(record);
        Ok(())
    }

    pub fn records(&self) -> &[TraceRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn last_epoch(&self) -> Option<usize> {
        self.records.last().map(|r| r.epoch)
    }

    /// Mean of `value` over the records of one epoch.
    pub fn epoch_mean(&self, epoch: usize, value: impl Fn(&TraceRecord) -> f64) -> Option<f64> {
        let vals: Vec<f64> = self
            .records
            .iter()
            .filter(|r| r.epoch == epoch)
            .map(value)
            .collect();
        (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
    }

    /// Standard deviation of step-to-step differences of `value`.
    pub fn step_noise(&self, value: impl Fn(&TraceRecord) -> f64) -> f64 {
        let diffs: Vec<f64> = self
            .records
            .windows(2)
            .map(|w| value(&w[1]) - value(&w[0]))
            .collect();
        if diffs.len() < 2 {
            return 0.0;
        }
        let mean = diffs.iter().sum::<f64>() / diffs.len() as f64;
        let var = diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (diffs.len() - 1) as f64;
        var.sqrt()
    }

    /// CSV with header `step,epoch,loss_class,loss_align_weighted,lr`.
    pub fn write_csv_to<W: Write>(&self, writer: W) -> std::io::Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(TRACE_HEADER)?;
        for r in &self.records {
            w.write_record([
                r.step.to_string(),
                r.epoch.to_string(),
                format!("{:?}", r.loss_class),
                format!("{:?}", r.loss_align_weighted),
                format!("{:?}", r.lr),
            ])?;
        }
        w.flush()
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| SpdError::io(path, e))?;
        self.write_csv_to(std::io::BufWriter::new(file))
            .map_err(|e| SpdError::io(path, e))
    }

    /// Reads the CSV columns back; the per-loss breakdown is not part of the
    /// file, so `weighted_log`/`weighted_coral` are set to `loss_align_weighted`.
    pub fn read_csv_from<R: Read>(reader: R, origin: &Path) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(reader);
        let header = rdr.headers().map_err(|e| SpdError::parse(origin, e))?;
        if header.iter().ne(TRACE_HEADER) {
            return Err(SpdError::parse(origin, format!("unexpected trace header {header:?}")));
        }
        let mut trace = LossTrace::new();
        for rec in rdr.records() {
            let rec = rec.map_err(|e| SpdError::parse(origin, e))?;
            let field = |i: usize| rec.get(i).unwrap_or_default();
            let int = |i: usize| field(i).parse::<usize>().map_err(|e| SpdError::parse(origin, e));
            let num = |i: usize| field(i).parse::<f64>().map_err(|e| SpdError::parse(origin, e));
            let align = num(3)?;
            trace.push(TraceRecord {
                step: int(0)?,
                epoch: int(1)?,
                loss_class: num(2)?,
                loss_align_weighted: align,
                lr: num(4)?,
                weighted_log: align,
                weighted_coral: align,
            })?;
        }
        Ok(trace)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(step: usize, epoch: usize, align: f64) -> TraceRecord {
        TraceRecord {
            step,
            epoch,
            loss_class: 1.0 / (step + 1) as f64,
            loss_align_weighted: align,
            lr: 0.1,
            weighted_log: align,
            weighted_coral: 2.0 * align,
        }
    }

    #[test]
    fn steps_must_increase() {
        let mut t = LossTrace::new();
        t.push(rec(0, 0, 1.0)).unwrap();
        assert!(t.push(rec(0, 0, 1.0)).is_err());
        let mut bad = rec(1, 0, f64::NAN);
        bad.loss_align_weighted = f64::NAN;
        assert!(t.push(bad).is_err());
    }

    #[test]
    fn csv_has_fixed_header_and_one_row_per_record() {
        let mut t = LossTrace::new();
        for s in 0..4 {
            t.push(rec(s, s / 2, 0.5 + s as f64)).unwrap();
        }
        let mut buf = Vec::new();
        t.write_csv_to(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("step,epoch,loss_class,loss_align_weighted,lr\n"));
        assert_eq!(text.lines().count(), 5);

        let back = LossTrace::read_csv_from(buf.as_slice(), Path::new("mem")).unwrap();
        assert_eq!(back.len(), 4);
        for (a, b) in back.records().iter().zip(t.records()) {
            assert_eq!((a.step, a.epoch, a.loss_class, a.loss_align_weighted, a.lr),
                       (b.step, b.epoch, b.loss_class, b.loss_align_weighted, b.lr));
        }
    }

    #[test]
    fn epoch_statistics() {
        let mut t = LossTrace::new();
        t.push(rec(0, 0, 1.0)).unwrap();
        t.push(rec(1, 0, 3.0)).unwrap();
        t.push(rec(2, 1, 5.0)).unwrap();
        assert_eq!(t.epoch_mean(0, |r| r.loss_align_weighted), Some(2.0));
        assert_eq!(t.epoch_mean(1, |r| r.weighted_coral), Some(10.0));
        assert_eq!(t.epoch_mean(2, |r| r.lr), None);
        // diffs 2, 2 → zero spread
        assert_eq!(t.step_noise(|r| r.loss_align_weighted), 0.0);
    }
}
