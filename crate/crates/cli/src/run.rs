//! One pipeline run and its artifacts.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use unle::metrics::{c2st, energy_distance, C2stConfig};
use unle::rng::SeedTree;
use unle::tasks::{read_samples_csv, reference_posterior, write_samples_csv, ReferenceConfig, Task};
use unle::unle::{aunle, sunle, write_round, RoundRecord};

use crate::config::RunConfig;
use crate::results::{append_rows, write_rows, ResultRow};

/// Seed of every reference posterior, shared across methods and run seeds.
const REFERENCE_SEED: u64 = 0x5eed_0f_7e5f;

pub fn reference_path(out: &Path, task: &Task, observation: u64, n: usize) -> PathBuf {
    out.join("reference").join(format!("{}_o{}_n{}.csv", task.name(), observation, n))
}

/// Loads the cached reference posterior for `(task, observation)` or draws
/// and caches it. The file appears atomically: it is written under a
/// process-unique name and renamed into place, so concurrent runs either see
/// no file or a complete one.
pub fn reference_samples(out: &Path, task: &Task, observation: u64, n: usize) -> Result<Vec<Vec<f64>>> {
    let path = reference_path(out, task, observation, n);
    if path.exists() {
        return Ok(read_samples_csv(fs::File::open(&path)?)?);
    }
    let x_o = task.observation(observation);
    let tree = SeedTree::new(REFERENCE_SEED).named(task.name().as_str()).child(observation);
    let reference = reference_posterior(task, &x_o, n, &ReferenceConfig::default(), &mut tree.rng())?;
    let dir = path.parent().expect("reference path has a parent");
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let tmp = dir.join(format!(".{}.{}.tmp", path.file_name().unwrap().to_string_lossy(), std::process::id()));
    write_samples_csv(&reference.samples, task.theta_dim(), fs::File::create(&tmp)?)?;
    fs::rename(&tmp, &path)?;
    Ok(reference.samples)
}

/// Runs `cfg`, writes its run directory, and returns the directory plus the
/// rows it contributed to `results.csv`. With `aggregate` the rows are also
/// appended to `<out>/results.csv`.
pub fn execute(cfg: &RunConfig, aggregate: bool) -> Result<(PathBuf, Vec<ResultRow>)> {
    let start = Instant::now();
    let task = Task::new(cfg.task);
    let dir = cfg.run_dir();
    fs::create_dir_all(&dir).with_context(|| format!("output directory {} is not writable", dir.display()))?;
    fs::write(dir.join("config.json"), cfg.to_json()?).with_context(|| format!("writing {}", dir.join("config.json").display()))?;

    let x_o = task.observation(cfg.observation);
    let tree = SeedTree::new(cfg.seed);
    let mut records: Vec<RoundRecord> = match cfg.method.inference_mode() {
        None => vec![aunle(&task, &x_o, cfg.budget, &cfg.pipeline, tree)?.record],
        Some(mode) => sunle(&task, &x_o, cfg.budget, cfg.rounds, mode, &cfg.pipeline, tree)?.rounds,
    };

    let reference = if cfg.metric_reference { Some(reference_samples(&cfg.out, &task, cfg.observation, cfg.metric_n)?) } else { None };
    let metric_tree = SeedTree::new(cfg.seed).named("metrics");
    let mut rows = Vec::new();
    let mut phases = 0.0;
    let row = |round: usize, metric: &str, value: f64| ResultRow {
        task: cfg.task.to_string(),
        method: cfg.method.as_str().to_string(),
        budget: cfg.budget,
        round,
        metric: metric.to_string(),
        value,
        seed: cfg.seed,
    };
    for rec in &mut records {
        if let Some(reference) = &reference {
            let mut rng = metric_tree.child(rec.round as u64).rng();
            let c = c2st(&rec.samples, reference, &C2stConfig::default(), &mut rng)?;
            rec.metrics.insert("c2st".into(), c.value);
            let e = energy_distance(&rec.samples, reference)?;
            rec.metrics.insert("energy_distance".into(), e.value);
        }
        let t = rec.timings;
        phases += t.total();
        rec.metrics.insert("minutes_simulate".into(), t.simulate / 60.0);
        rec.metrics.insert("minutes_train".into(), t.train / 60.0);
        rec.metrics.insert("minutes_infer".into(), t.infer / 60.0);
        for (k, v) in &rec.metrics {
            rows.push(row(rec.round, k, *v));
        }
    }
    // Metric evaluation and I/O land in `other`, reported on the last round.
    let last = records.last().map_or(0, |r| r.round);
    for rec in &records {
        write_round(&dir, rec)?;
    }
    let total = start.elapsed().as_secs_f64();
    rows.push(row(last, "minutes_other", (total - phases).max(0.0) / 60.0));
    rows.push(row(last, "minutes_total", total.max(phases) / 60.0));

    write_rows(&dir.join("results.csv"), &rows)?;
    if aggregate {
        append_rows(&cfg.out.join("results.csv"), &rows)?;
    }
    Ok((dir, rows))
}
