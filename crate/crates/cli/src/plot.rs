//! Tidy tables for the accuracy-versus-budget and runtime-breakdown figures.

use std::collections::BTreeMap;
use std::path::Path;

use anyhow::{Context, Result};
use serde::Serialize;

use crate::results::ResultRow;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AccuracyRow {
    pub task: String,
    pub method: String,
    pub budget: usize,
    pub metric: String,
    pub n_runs: usize,
    pub median: f64,
    pub mean: f64,
    pub min: f64,
    pub max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RuntimeRow {
    pub task: String,
    pub method: String,
    pub budget: usize,
    pub seed: u64,
    pub component: String,
    pub minutes: f64,
    pub fraction: f64,
    pub total_minutes: f64,
}

pub const COMPONENTS: [&str; 4] = ["simulate", "train", "infer", "other"];

type RunKey = (String, String, usize, u64);

fn median(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

/// Final-round `metric` values grouped by (task, method, budget).
pub fn accuracy(rows: &[ResultRow], metric: &str) -> Vec<AccuracyRow> {
    let mut last: BTreeMap<RunKey, usize> = BTreeMap::new();
    for r in rows.iter().filter(|r| r.metric == metric) {
        let e = last.entry((r.task.clone(), r.method.clone(), r.budget, r.seed)).or_insert(r.round);
        *e = (*e).max(r.round);
    }
    let mut groups: BTreeMap<(String, String, usize), Vec<f64>> = BTreeMap::new();
    for r in rows.iter().filter(|r| r.metric == metric) {
        if last[&(r.task.clone(), r.method.clone(), r.budget, r.seed)] == r.round {
            groups.entry((r.task.clone(), r.method.clone(), r.budget)).or_default().push(r.value);
        }
    }
    groups
        .into_iter()
        .map(|((task, method, budget), mut v)| {
            v.sort_by(f64::total_cmp);
            AccuracyRow {
                task,
                method,
                budget,
                metric: metric.to_string(),
                n_runs: v.len(),
                median: median(&v),
                mean: v.iter().sum::<f64>() / v.len() as f64,
                min: v[0],
                max: v[v.len() - 1],
            }
        })
        .collect()
}

/// Per-run minutes in each phase, summed over rounds.
pub fn runtime(rows: &[ResultRow]) -> Vec<RuntimeRow> {
    let mut runs: BTreeMap<RunKey, BTreeMap<&str, f64>> = BTreeMap::new();
    for r in rows {
        let Some(component) = r.metric.strip_prefix("minutes_") else { continue };
        let Some(component) = COMPONENTS.iter().chain(&["total"]).find(|c| **c == component) else { continue };
        *runs.entry((r.task.clone(), r.method.clone(), r.budget, r.seed)).or_default().entry(component).or_default() += r.value;
    }
    let mut out = Vec::new();
    for ((task, method, budget, seed), m) in runs {
        let parts: f64 = COMPONENTS.iter().map(|c| m.get(c).copied().unwrap_or(0.0)).sum();
        let total = m.get("total").copied().unwrap_or(parts);
        for c in COMPONENTS {
            let minutes = m.get(c).copied().unwrap_or(0.0);
            out.push(RuntimeRow {
                task: task.clone(),
                method: method.clone(),
                budget,
                seed,
                component: c.to_string(),
                minutes,
                fraction: if total > 0.0 { minutes / total } else { 0.0 },
                total_minutes: total,
            });
        }
    }
    out
}

fn write<T: Serialize>(path: &Path, header: &[&str], rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("writing {}", path.display()))?;
    if rows.is_empty() {
        w.write_record(header)?;
    }
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes `accuracy.csv` and `runtime.csv` into `out_dir`.
pub fn emit(rows: &[ResultRow], out_dir: &Path) -> Result<()> {
    std::fs::create_dir_all(out_dir)?;
    write(
        &out_dir.join("accuracy.csv"),
        &["task", "method", "budget", "metric", "n_runs", "median", "mean", "min", "max"],
        &accuracy(rows, "c2st"),
    )?;
    write(
        &out_dir.join("runtime.csv"),
        &["task", "method", "budget", "seed", "component", "minutes", "fraction", "total_minutes"],
        &runtime(rows),
    )?;
    Ok(())
}
