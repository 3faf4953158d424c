use std::io::{Read, Write};
use std::path::Path;

use crate::error::{invalid, Error, Result};

/// Simulated pairs `(theta, x)` with the round each pair was produced in.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    theta_dim: usize,
    x_dim: usize,
    pub thetas: Vec<Vec<f64>>,
    pub xs: Vec<Vec<f64>>,
    pub rounds: Vec<usize>,
}

impl Dataset {
    pub fn new(theta_dim: usize, x_dim: usize) -> Self {
        Dataset { theta_dim, x_dim, thetas: Vec::new(), xs: Vec::new(), rounds: Vec::new() }
    }

    /// Dataset of `x` values only (no parameters), e.g. for unconditional models.
    pub fn from_samples(xs: Vec<Vec<f64>>) -> Result<Self> {
        let dim = xs.first().map_or(0, Vec::len);
        let mut d = Dataset::new(0, dim);
        for x in xs {
            d.push(0, Vec::new(), x)?;
        }
        Ok(d)
    }

    pub fn theta_dim(&self) -> usize {
        self.theta_dim
    }

    pub fn x_dim(&self) -> usize {
        self.x_dim
    }

    pub fn len(&self) -> usize {
        self.thetas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.thetas.is_empty()
    }

    pub fn last_round(&self) -> Option<usize> {
        self.rounds.last().copied()
    }

    pub fn push(&mut self, round: usize, theta: Vec<f64>, x: Vec<f64>) -> Result<()> {
        if theta.len() != self.theta_dim || x.len() != self.x_dim {
            return Err(invalid("pair has the wrong dimensions for this dataset"));
        }
        if theta.iter().chain(&x).any(|v| !v.is_finite()) {
            return Err(invalid("dataset entries must be finite"));
        }
        if self.last_round().is_some_and(|r| round < r) {
            return Err(invalid(format!("round {round} precedes the last stored round")));
        }
        self.thetas.push(theta);
        self.xs.push(x);
        self.rounds.push(round);
        Ok(())
    }

    /// Pairs simulated in `round`.
    pub fn round_slice(&self, round: usize) -> Dataset {
        let mut d = Dataset::new(self.theta_dim, self.x_dim);
        for i in 0..self.len() {
            if self.rounds[i] == round {
                d.thetas.push(self.thetas[i].clone());
                d.xs.push(self.xs[i].clone());
                d.rounds.push(round);
            }
        }
        d
    }

    /// Concatenated `[x ; theta]` of pair `i`.
    pub fn joint(&self, i: usize) -> Vec<f64> {
        let mut v = self.xs[i].clone();
        v.extend_from_slice(&self.thetas[i]);
        v
    }

    fn header(&self) -> Vec<String> {
        let mut h = vec!["round".to_string()];
        h.extend((0..self.theta_dim).map(|i| format!("theta_{i}")));
        h.extend((0..self.x_dim).map(|i| format!("x_{i}")));
        h
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(self.header())?;
        for i in 0..self.len() {
            let mut row = vec![self.rounds[i].to_string()];
            row.extend(self.thetas[i].iter().chain(&self.xs[i]).map(|v| v.to_string()));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }

    /// Parses the CSV layout written by [`Dataset::write_csv`]; dimensions
    /// come from the header.
    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut r = csv::Reader::from_reader(reader);
        let header = r.headers()?.clone();
        if header.get(0) != Some("round") {
            return Err(Error::Parse { line: 1, reason: "first column must be `round`".into() });
        }
        let theta_dim = header.iter().filter(|h| h.starts_with("theta_")).count();
        let x_dim = header.iter().filter(|h| h.starts_with("x_")).count();
        if theta_dim + x_dim + 1 != header.len() {
            return Err(Error::Parse { line: 1, reason: "unexpected column names".into() });
        }
        let mut d = Dataset::new(theta_dim, x_dim);
        for (k, rec) in r.records().enumerate() {
            let line = k + 2;
            let rec = rec?;
            let parse_err = |reason: String| Error::Parse { line, reason };
            let round: usize = rec[0].parse().map_err(|e| parse_err(format!("round: {e}")))?;
            let vals: Vec<f64> = rec
                .iter()
                .skip(1)
                .map(|s| s.parse::<f64>().map_err(|e| parse_err(format!("`{s}`: {e}"))))
                .collect::<Result<_>>()?;
            let (t, x) = vals.split_at(theta_dim);
            d.push(round, t.to_vec(), x.to_vec()).map_err(|e| parse_err(e.to_string()))?;
        }
        Ok(d)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_csv(std::fs::File::open(path)?)
    }
}

/// Writes one sample per row with columns `theta_0..`.
pub fn write_samples_csv<W: Write>(samples: &[Vec<f64>], dim: usize, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record((0..dim).map(|i| format!("theta_{i}")))?;
    for s in samples {
        w.write_record(s.iter().map(|v| v.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

/// Reads the layout of [`write_samples_csv`].
pub fn read_samples_csv<R: Read>(reader: R) -> Result<Vec<Vec<f64>>> {
    let mut r = csv::Reader::from_reader(reader);
    let mut out = Vec::new();
    for (k, rec) in r.records().enumerate() {
        let rec = rec?;
        let row = rec
            .iter()
            .map(|s| s.parse::<f64>().map_err(|e| Error::Parse { line: k + 2, reason: format!("`{s}`: {e}") }))
            .collect::<Result<Vec<_>>>()?;
        out.push(row);
    }
    Ok(out)
}
