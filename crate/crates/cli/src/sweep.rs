//! Grid sweeps over tasks, methods, budgets, seeds and observations.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Child, Command};

use anyhow::{anyhow, bail, Context, Result};
use unle::tasks::Task;

use crate::config::{default_out, RunConfig};
use crate::results::{read_path, write_rows, ResultRow};
use crate::run::{execute, reference_samples};

/// Keys that may hold comma-separated lists in a grid file.
const AXES: [&str; 5] = ["task", "method", "budget", "seed", "observation"];

/// Budget presets; `1e3`-style values are accepted as well.
fn parse_budget(v: &str) -> Result<String> {
    let n: f64 = v.parse().map_err(|_| anyhow!("bad budget `{v}`"))?;
    if n < 1.0 || n.fract() != 0.0 {
        bail!("bad budget `{v}`");
    }
    Ok((n as usize).to_string())
}

/// Expands a grid into one merged key-value map per cell, in a fixed
/// task-method-budget-seed-observation order.
pub fn expand(grid: &BTreeMap<String, String>) -> Result<Vec<BTreeMap<String, String>>> {
    let mut base = grid.clone();
    let mut axes: Vec<(&str, Vec<String>)> = Vec::new();
    for key in AXES {
        let values: Vec<String> = match base.remove(key) {
            Some(v) => v.split(',').map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect(),
            None => continue,
        };
        let values = if key == "budget" { values.iter().map(|v| parse_budget(v)).collect::<Result<_>>()? } else { values };
        if values.is_empty() {
            bail!("grid key `{key}` has no values");
        }
        axes.push((key, values));
    }
    let mut cells = vec![base];
    for (key, values) in axes {
        cells = cells
            .into_iter()
            .flat_map(|c| {
                values.iter().map(move |v| {
                    let mut c = c.clone();
                    c.insert(key.to_string(), v.clone());
                    c
                })
            })
            .collect();
    }
    Ok(cells)
}

#[derive(Debug)]
pub struct SweepReport {
    pub runs: Vec<PathBuf>,
    pub failures: Vec<(usize, String)>,
    pub rows: Vec<ResultRow>,
}

fn spawn_cell(cfg_path: &Path) -> Result<Child> {
    let exe = std::env::current_exe()?;
    Command::new(exe)
        .arg("run")
        .arg("--config")
        .arg(cfg_path)
        .arg("--no-aggregate")
        .stdout(std::process::Stdio::null())
        .spawn()
        .context("spawning a sweep cell")
}

/// Runs every cell of `grid`, with up to `jobs` cells as separate processes.
/// Failed cells are recorded in `<out>/sweep_failures.csv` and the sweep goes
/// on. `<out>/results.csv` is rewritten from the per-run tables in cell
/// order, so its content does not depend on `jobs`.
pub fn sweep(grid: &BTreeMap<String, String>, out: Option<&Path>, jobs: usize) -> Result<SweepReport> {
    let mut cells = expand(grid)?;
    let out = out.map(Path::to_path_buf).or_else(|| grid.get("out").map(PathBuf::from)).unwrap_or_else(default_out);
    for c in &mut cells {
        c.insert("out".into(), out.display().to_string());
    }
    fs::create_dir_all(&out).with_context(|| format!("output directory {} is not writable", out.display()))?;

    let mut failures = Vec::new();
    let mut configs = Vec::with_capacity(cells.len());
    for (i, c) in cells.iter().enumerate() {
        match RunConfig::resolve(c) {
            Ok(cfg) => configs.push((i, cfg)),
            Err(e) => failures.push((i, format!("{e:#}"))),
        }
    }

    // One reference per (task, observation, n), before any cell starts.
    let mut refs = BTreeSet::new();
    for (_, cfg) in &configs {
        if cfg.metric_reference {
            refs.insert((cfg.task.to_string(), cfg.observation, cfg.metric_n));
        }
    }
    for (task, obs, n) in &refs {
        let task = Task::from_name(task)?;
        if let Err(e) = reference_samples(&out, &task, *obs, *n) {
            for (i, cfg) in &configs {
                if cfg.task == task.name() && cfg.observation == *obs {
                    failures.push((*i, format!("reference posterior: {e:#}")));
                }
            }
        }
    }
    let failed: BTreeSet<usize> = failures.iter().map(|f| f.0).collect();
    let todo: Vec<&(usize, RunConfig)> = configs.iter().filter(|(i, _)| !failed.contains(i)).collect();

    if jobs <= 1 {
        for (i, cfg) in &todo {
            if let Err(e) = execute(cfg, false) {
                failures.push((*i, format!("{e:#}")));
            }
        }
    } else {
        let cell_dir = out.join("sweep_cells");
        fs::create_dir_all(&cell_dir)?;
        let mut pending = todo.iter();
        let mut running: Vec<(usize, Child)> = Vec::new();
        loop {
            while running.len() < jobs {
                let Some((i, cfg)) = pending.next() else { break };
                let path = cell_dir.join(format!("cell_{i}.json"));
                fs::write(&path, cfg.to_json()?)?;
                match spawn_cell(&path) {
                    Ok(child) => running.push((*i, child)),
                    Err(e) => failures.push((*i, format!("{e:#}"))),
                }
            }
            if running.is_empty() {
                break;
            }
            let (i, mut child) = running.remove(0);
            let status = child.wait()?;
            if !status.success() {
                failures.push((i, format!("cell process exited with {status}")));
            }
        }
    }
    failures.sort();

    let failed: BTreeSet<usize> = failures.iter().map(|f| f.0).collect();
    let mut rows = Vec::new();
    let mut runs = Vec::new();
    for (i, cfg) in &configs {
        if failed.contains(i) {
            continue;
        }
        let dir = cfg.run_dir();
        rows.extend(read_path(&dir.join("results.csv"))?);
        runs.push(dir);
    }
    write_rows(&out.join("results.csv"), &rows)?;

    let mut w = csv::Writer::from_path(out.join("sweep_failures.csv"))?;
    w.write_record(["cell", "task", "method", "budget", "seed", "observation", "error"])?;
    for (i, msg) in &failures {
        let c = &cells[*i];
        let get = |k: &str| c.get(k).cloned().unwrap_or_default();
        w.write_record([i.to_string(), get("task"), get("method"), get("budget"), get("seed"), get("observation"), msg.clone()])?;
    }
    w.flush()?;
    Ok(SweepReport { runs, failures, rows })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_expands_in_order() {
        let grid: BTreeMap<String, String> =
            [("task", "two_moons"), ("budget", "1e3, 1e4"), ("seed", "0,1"), ("train.max_iter", "5")]
                .iter()
                .map(|(k, v)| (k.to_string(), v.to_string()))
                .collect();
        let cells = expand(&grid).unwrap();
        assert_eq!(cells.len(), 4);
        let pairs: Vec<_> = cells.iter().map(|c| (c["budget"].clone(), c["seed"].clone())).collect();
        assert_eq!(pairs, [("1000", "0"), ("1000", "1"), ("10000", "0"), ("10000", "1")].map(|(a, b)| (a.to_string(), b.to_string())));
        assert!(cells.iter().all(|c| c["train.max_iter"] == "5"));
    }

    #[test]
    fn bad_budget_is_rejected() {
        let grid: BTreeMap<String, String> = [("budget".to_string(), "1.5".to_string())].into();
        assert!(expand(&grid).is_err());
    }
}
