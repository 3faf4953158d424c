//! The cross-run `results.csv` table.

use std::fs::{File, OpenOptions};
use std::io::Read;
use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

pub const HEADER: [&str; 7] = ["task", "method", "budget", "round", "metric", "value", "seed"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub task: String,
    pub method: String,
    pub budget: usize,
    pub round: usize,
    pub metric: String,
    pub value: f64,
    pub seed: u64,
}

pub fn write_rows(path: &Path, rows: &[ResultRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("writing {}", path.display()))?;
    if rows.is_empty() {
        w.write_record(HEADER)?;
    }
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Appends to `path`, writing the header first when the file is new or empty.
pub fn append_rows(path: &Path, rows: &[ResultRow]) -> Result<()> {
    let file = OpenOptions::new().create(true).append(true).open(path).with_context(|| format!("opening {}", path.display()))?;
    let fresh = file.metadata()?.len() == 0;
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(file);
    if fresh {
        w.write_record(HEADER)?;
    }
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Parses a results table; errors carry the offending line number.
pub fn read_rows<R: Read>(reader: R) -> Result<Vec<ResultRow>> {
    let mut rdr = csv::Reader::from_reader(reader);
    let headers = rdr.headers().context("line 1: unreadable header")?.clone();
    if headers.iter().ne(HEADER.iter().copied()) {
        bail!("line 1: expected header `{}`, got `{}`", HEADER.join(","), headers.iter().collect::<Vec<_>>().join(","));
    }
    let mut rows = Vec::new();
    for rec in rdr.deserialize::<ResultRow>() {
        match rec {
            Ok(r) => rows.push(r),
            Err(e) => {
                let line = e.position().map(|p| p.line()).unwrap_or(0);
                bail!("line {line}: {e}");
            }
        }
    }
    Ok(rows)
}

pub fn read_path(path: &Path) -> Result<Vec<ResultRow>> {
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    read_rows(f).with_context(|| format!("parsing {}", path.display()))
}
