use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One line of the training log. `ess` is only reported in smc mode.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainLogRow {
    pub iter: usize,
    pub data_term_norm: f64,
    pub model_term_norm: f64,
    pub mean_acceptance: f64,
    pub ess: Option<f64>,
}

pub fn write_train_log_csv<W: Write>(rows: &[TrainLogRow], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["iter", "data_term_norm", "model_term_norm", "mean_acceptance", "ess"])?;
    for r in rows {
        w.write_record([
            r.iter.to_string(),
            r.data_term_norm.to_string(),
            r.model_term_norm.to_string(),
            r.mean_acceptance.to_string(),
            r.ess.map(|v| v.to_string()).unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_train_log_csv<R: Read>(reader: R) -> Result<Vec<TrainLogRow>> {
    let mut r = csv::Reader::from_reader(reader);
    let mut out = Vec::new();
    for (k, rec) in r.deserialize().enumerate() {
        let row: TrainLogRow = rec.map_err(|e| Error::Parse { line: k + 2, reason: e.to_string() })?;
        out.push(row);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn log_round_trip() {
        let rows = vec![
            TrainLogRow { iter: 0, data_term_norm: 1.5, model_term_norm: 0.25, mean_acceptance: 0.5, ess: None },
            TrainLogRow { iter: 1, data_term_norm: 1.0, model_term_norm: 0.5, mean_acceptance: 0.6, ess: Some(812.5) },
        ];
        let mut buf = Vec::new();
        write_train_log_csv(&rows, &mut buf).unwrap();
        assert!(String::from_utf8(buf.clone()).unwrap().starts_with("iter,data_term_norm,model_term_norm,mean_acceptance,ess\n0,1.5,0.25,0.5,\n"));
        assert_eq!(read_train_log_csv(buf.as_slice()).unwrap(), rows);
    }
}
