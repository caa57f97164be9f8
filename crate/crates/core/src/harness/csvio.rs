use std::fs::File;
use std::path::Path;

use crate::trainer::MetricsRecord;
use crate::{Error, Result};

pub const CSV_HEADER: [&str; 9] = [
    "update",
    "mean_return",
    "value_loss",
    "policy_entropy",
    "approx_kl",
    "clip_fraction",
    "command_l1",
    "mode_entropy",
    "module_entropy",
];

fn cell(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Appends rows to a metrics CSV, flushing after each.
pub struct MetricsWriter {
    inner: csv::Writer<File>,
}

impl MetricsWriter {
    /// Truncates `path` and writes the header.
    pub fn create(path: &Path) -> Result<Self> {
        let mut inner = csv::Writer::from_path(path)?;
        inner.write_record(CSV_HEADER)?;
        inner.flush()?;
        Ok(MetricsWriter { inner })
    }

    pub fn append(&mut self, m: &MetricsRecord) -> Result<()> {
        self.inner.write_record([
            m.update.to_string(),
            m.mean_return.to_string(),
            m.value_loss.to_string(),
            m.policy_entropy.to_string(),
            m.approx_kl.to_string(),
            m.clip_fraction.to_string(),
            cell(m.command_l1),
            cell(m.mode_entropy),
            cell(m.module_entropy),
        ])?;
        self.inner.flush()?;
        Ok(())
    }
}

pub fn write_metrics(path: &Path, rows: &[MetricsRecord]) -> Result<()> {
    let mut w = MetricsWriter::create(path)?;
    rows.iter().try_for_each(|m| w.append(m))
}

/// Reads a metrics CSV, rejecting any header other than the fixed schema.
pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRecord>> {
    let mut r = csv::Reader::from_path(path)?;
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if header != CSV_HEADER {
        return Err(Error::Config(format!("{}: unexpected header {header:?}", path.display())));
    }
    let bad = |line: usize, what: &str| Error::Config(format!("{}: line {line}: bad {what}", path.display()));
    let mut rows = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        let line = i + 2;
        if rec.len() != CSV_HEADER.len() {
            return Err(bad(line, "field count"));
        }
        let req = |k: usize| rec[k].parse::<f64>().map_err(|_| bad(line, CSV_HEADER[k]));
        let opt = |k: usize| {
            if rec[k].is_empty() {
                Ok(None)
            } else {
                rec[k].parse::<f64>().map(Some).map_err(|_| bad(line, CSV_HEADER[k]))
            }
        };
        rows.push(MetricsRecord {
            update: rec[0].parse().map_err(|_| bad(line, "update"))?,
            mean_return: req(1)?,
            return_provisional: false,
            value_loss: req(2)?,
            policy_entropy: req(3)?,
            approx_kl: req(4)?,
            clip_fraction: req(5)?,
            command_l1: opt(6)?,
            mode_entropy: opt(7)?,
            module_entropy: opt(8)?,
        });
    }
    Ok(rows)
}
