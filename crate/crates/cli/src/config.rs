//! Flat key-value run configuration.
//!
//! Resolution order, lowest first: built-in defaults, task and budget
//! overrides, the config file, command-line flags.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use unle::ebm::TrainMode;
use unle::nn::Activation;
use unle::tasks::TaskName;
use unle::unle::{InferenceMode, PipelineConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Aunle,
    SunleExchange,
    SunleDivi,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Aunle => "aunle",
            Method::SunleExchange => "sunle-exchange",
            Method::SunleDivi => "sunle-divi",
        }
    }

    pub fn inference_mode(self) -> Option<InferenceMode> {
        match self {
            Method::Aunle => None,
            Method::SunleExchange => Some(InferenceMode::Exchange),
            Method::SunleDivi => Some(InferenceMode::Divi),
        }
    }
}

impl std::str::FromStr for Method {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "aunle" => Ok(Method::Aunle),
            "sunle-exchange" => Ok(Method::SunleExchange),
            "sunle-divi" => Ok(Method::SunleDivi),
            other => bail!("unknown method `{other}` (expected aunle, sunle-exchange or sunle-divi)"),
        }
    }
}

/// Fully resolved settings of one run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub task: TaskName,
    pub method: Method,
    pub budget: usize,
    pub rounds: usize,
    pub seed: u64,
    pub observation: u64,
    pub out: PathBuf,
    pub pipeline: PipelineConfig,
    /// Posterior and reference sample count used by the metrics.
    pub metric_n: usize,
    /// Skip the reference posterior and the metrics that need it.
    pub metric_reference: bool,
}

/// Every key accepted in config files and as `--key value` flags.
pub const KEYS: &[&str] = &[
    "task",
    "method",
    "budget",
    "rounds",
    "seed",
    "observation",
    "out",
    "train.max_iter",
    "train.lr",
    "train.mode",
    "train.particles",
    "train.mcmc_steps",
    "train.warmup",
    "train.rewarm",
    "train.batch",
    "train.step_size",
    "smc.L",
    "smc.kernel_steps",
    "smc.resample_threshold",
    "sampler.chains",
    "sampler.warmup",
    "sampler.steps",
    "sampler.inner_steps",
    "sampler.candidates",
    "sampler.step_size",
    "divi.n",
    "divi.m",
    "divi.inner_steps",
    "divi.max_iter",
    "divi.lr",
    "divi.batch",
    "model.hidden",
    "model.activation",
    "metric.n",
    "metric.reference",
];

/// Default output root: `$UNLE_OUT`, else `runs`.
pub fn default_out() -> PathBuf {
    std::env::var_os("UNLE_OUT").map(PathBuf::from).unwrap_or_else(|| PathBuf::from("runs"))
}

/// Parses `key = value` lines; `#` starts a comment. A file whose first
/// non-blank character is `{` is read as a flat JSON object instead, which
/// is how `config.json` of a finished run is fed back in.
pub fn parse_flat(text: &str) -> Result<BTreeMap<String, String>> {
    if text.trim_start().starts_with('{') {
        let map: BTreeMap<String, serde_json::Value> = serde_json::from_str(text).context("config is not a flat JSON object")?;
        return map
            .into_iter()
            .map(|(k, v)| {
                let s = match v {
                    serde_json::Value::String(s) => s,
                    serde_json::Value::Number(n) => n.to_string(),
                    serde_json::Value::Bool(b) => b.to_string(),
                    other => bail!("key `{k}`: expected a scalar, got {other}"),
                };
                Ok((k, s))
            })
            .collect();
    }
    let mut out = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| anyhow!("line {}: expected `key = value`, got `{line}`", i + 1))?;
        out.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(out)
}

pub fn read_flat(path: &Path) -> Result<BTreeMap<String, String>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
    parse_flat(&text).with_context(|| format!("parsing config {}", path.display()))
}

fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    v.parse().map_err(|e| anyhow!("`{key}`: cannot parse `{v}`: {e}"))
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => bail!("`{key}`: expected true or false, got `{v}`"),
    }
}

fn activation_name(a: Activation) -> &'static str {
    match a {
        Activation::Swish => "swish",
        Activation::Tanh => "tanh",
        Activation::Identity => "identity",
    }
}

impl RunConfig {
    /// Defaults for `task` at `budget`, including the per-task overrides
    /// used by the benchmark protocol.
    pub fn defaults(task: TaskName, method: Method, budget: usize) -> Self {
        let mut pipeline = PipelineConfig::default();
        if task == TaskName::GaussianLinearUniform && method != Method::Aunle && budget <= 1000 {
            pipeline.train.max_iter = 10;
        }
        if task == TaskName::LotkaVolterra {
            pipeline.train.learning_rate = 0.001;
        }
        RunConfig {
            task,
            method,
            budget,
            rounds: if method == Method::Aunle { 1 } else { 10 },
            seed: 0,
            observation: 1,
            out: default_out(),
            pipeline,
            metric_n: 1000,
            metric_reference: true,
        }
    }

    /// Builds a config from merged key-values (file entries already
    /// overridden by flags).
    pub fn resolve(kv: &BTreeMap<String, String>) -> Result<Self> {
        for k in kv.keys() {
            if !KEYS.contains(&k.as_str()) {
                bail!("unknown config key `{k}`");
            }
        }
        let task: TaskName = match kv.get("task") {
            Some(t) => t.parse().map_err(|e| anyhow!("{e}"))?,
            None => TaskName::TwoMoons,
        };
        let method: Method = kv.get("method").map(|m| m.parse()).transpose()?.unwrap_or(Method::Aunle);
        let budget: usize = kv.get("budget").map(|v| num("budget", v)).transpose()?.unwrap_or(1000);
        let mut cfg = RunConfig::defaults(task, method, budget);
        for (k, v) in kv {
            cfg.set(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn set(&mut self, key: &str, v: &str) -> Result<()> {
        let p = &mut self.pipeline;
        match key {
            "task" | "method" | "budget" => {}
            "rounds" => self.rounds = num(key, v)?,
            "seed" => self.seed = num(key, v)?,
            "observation" => self.observation = num(key, v)?,
            "out" => self.out = PathBuf::from(v),
            "train.max_iter" => p.train.max_iter = num(key, v)?,
            "train.lr" => p.train.learning_rate = num(key, v)?,
            "train.mode" => p.train.mode = v.parse::<TrainMode>().map_err(|e| anyhow!("{e}"))?,
            "train.particles" => p.train.n_particles = num(key, v)?,
            "train.mcmc_steps" => p.train.mcmc_steps = num(key, v)?,
            "train.warmup" => p.train.warmup_steps = num(key, v)?,
            "train.rewarm" => p.train.rewarm_steps = num(key, v)?,
            "train.batch" => p.train.batch_size = if v == "auto" { None } else { Some(num(key, v)?) },
            "train.step_size" => p.train.initial_step_size = num(key, v)?,
            "smc.L" => p.train.smc.n_stages = num(key, v)?,
            "smc.kernel_steps" => p.train.smc.kernel_steps = num(key, v)?,
            "smc.resample_threshold" => p.train.smc.resample_threshold = num(key, v)?,
            "sampler.chains" => p.sampler.chains = num(key, v)?,
            "sampler.warmup" => p.sampler.warmup = num(key, v)?,
            "sampler.steps" => p.sampler.thin = num(key, v)?,
            "sampler.inner_steps" => p.sampler.inner_steps = num(key, v)?,
            "sampler.candidates" => p.sampler.candidates_per_chain = num(key, v)?,
            "sampler.step_size" => p.sampler.initial_step_size = num(key, v)?,
            "divi.n" => p.divi.n = num(key, v)?,
            "divi.m" => p.divi.m = num(key, v)?,
            "divi.inner_steps" => p.divi.inner_steps = num(key, v)?,
            "divi.max_iter" => p.divi.max_iter = num(key, v)?,
            "divi.lr" => p.divi.learning_rate = num(key, v)?,
            "divi.batch" => p.divi.batch_size = num(key, v)?,
            "model.hidden" => {
                p.hidden = v.split(',').map(|w| num(key, w.trim())).collect::<Result<_>>()?;
            }
            "model.activation" => p.activation = v.parse::<Activation>().map_err(|e| anyhow!("{e}"))?,
            "metric.n" => {
                self.metric_n = num(key, v)?;
                p.n_posterior = self.metric_n;
            }
            "metric.reference" => self.metric_reference = parse_bool(key, v)?,
            _ => bail!("unknown config key `{key}`"),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.budget == 0 {
            bail!("budget must be positive");
        }
        if self.rounds == 0 || self.budget < self.rounds {
            bail!("budget {} is smaller than the number of rounds {}", self.budget, self.rounds);
        }
        if self.method == Method::Aunle && self.rounds != 1 {
            bail!("aunle is single-round; got rounds = {}", self.rounds);
        }
        if self.metric_n == 0 {
            bail!("metric.n must be positive");
        }
        Ok(())
    }

    /// The explicit key-value form; [`RunConfig::resolve`] of it gives back `self`.
    pub fn to_flat(&self) -> BTreeMap<String, String> {
        let p = &self.pipeline;
        let mut m = BTreeMap::new();
        let mut put = |k: &str, v: String| {
            m.insert(k.to_string(), v);
        };
        put("task", self.task.to_string());
        put("method", self.method.as_str().into());
        put("budget", self.budget.to_string());
        put("rounds", self.rounds.to_string());
        put("seed", self.seed.to_string());
        put("observation", self.observation.to_string());
        put("out", self.out.display().to_string());
        put("train.max_iter", p.train.max_iter.to_string());
        put("train.lr", p.train.learning_rate.to_string());
        put("train.mode", match p.train.mode {
            TrainMode::Mcmc => "mcmc".into(),
            TrainMode::Smc => "smc".into(),
        });
        put("train.particles", p.train.n_particles.to_string());
        put("train.mcmc_steps", p.train.mcmc_steps.to_string());
        put("train.warmup", p.train.warmup_steps.to_string());
        put("train.rewarm", p.train.rewarm_steps.to_string());
        put("train.batch", p.train.batch_size.map_or_else(|| "auto".into(), |b| b.to_string()));
        put("train.step_size", p.train.initial_step_size.to_string());
        put("smc.L", p.train.smc.n_stages.to_string());
        put("smc.kernel_steps", p.train.smc.kernel_steps.to_string());
        put("smc.resample_threshold", p.train.smc.resample_threshold.to_string());
        put("sampler.chains", p.sampler.chains.to_string());
        put("sampler.warmup", p.sampler.warmup.to_string());
        put("sampler.steps", p.sampler.thin.to_string());
        put("sampler.inner_steps", p.sampler.inner_steps.to_string());
        put("sampler.candidates", p.sampler.candidates_per_chain.to_string());
        put("sampler.step_size", p.sampler.initial_step_size.to_string());
        put("divi.n", p.divi.n.to_string());
        put("divi.m", p.divi.m.to_string());
        put("divi.inner_steps", p.divi.inner_steps.to_string());
        put("divi.max_iter", p.divi.max_iter.to_string());
        put("divi.lr", p.divi.learning_rate.to_string());
        put("divi.batch", p.divi.batch_size.to_string());
        put("model.hidden", p.hidden.iter().map(|h| h.to_string()).collect::<Vec<_>>().join(","));
        put("model.activation", activation_name(p.activation).into());
        put("metric.n", self.metric_n.to_string());
        put("metric.reference", self.metric_reference.to_string());
        m
    }

    /// `config.json` contents: the flat map as a JSON object of strings.
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.to_flat())?)
    }

    pub fn run_dir(&self) -> PathBuf {
        self.out.join(format!(
            "{}_{}_n{}_r{}_s{}_o{}",
            self.task,
            self.method.as_str(),
            self.budget,
            self.rounds,
            self.seed,
            self.observation
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn kv(pairs: &[(&str, &str)]) -> BTreeMap<String, String> {
        pairs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect()
    }

    #[test]
    fn flat_file_parses_comments_and_blanks() {
        let m = parse_flat("# header\ntask = slcp\n\nbudget=500 # trailing\n").unwrap();
        assert_eq!(m, kv(&[("task", "slcp"), ("budget", "500")]));
    }

    #[test]
    fn malformed_line_reports_its_number() {
        let err = parse_flat("task = slcp\nbudget 500\n").unwrap_err().to_string();
        assert!(err.contains("line 2"), "{err}");
    }

    #[test]
    fn small_budget_glu_gets_ten_iterations() {
        let c = RunConfig::resolve(&kv(&[("task", "gaussian_linear_uniform"), ("method", "sunle-divi"), ("budget", "1000"), ("rounds", "10")]))
            .unwrap();
        assert_eq!(c.pipeline.train.max_iter, 10);
        let c = RunConfig::resolve(&kv(&[("task", "gaussian_linear_uniform"), ("method", "sunle-divi"), ("budget", "10000")])).unwrap();
        assert_eq!(c.pipeline.train.max_iter, 500);
    }

    #[test]
    fn explicit_keys_beat_task_overrides() {
        let c = RunConfig::resolve(&kv(&[
            ("task", "gaussian_linear_uniform"),
            ("method", "sunle-divi"),
            ("budget", "100"),
            ("train.max_iter", "42"),
        ]))
        .unwrap();
        assert_eq!(c.pipeline.train.max_iter, 42);
    }

    #[test]
    fn flat_form_round_trips() {
        let c = RunConfig::resolve(&kv(&[("task", "slcp"), ("method", "sunle-exchange"), ("train.lr", "0.0003"), ("model.hidden", "8,8")]))
            .unwrap();
        assert_eq!(RunConfig::resolve(&c.to_flat()).unwrap(), c);
        let back = parse_flat(&c.to_json().unwrap()).unwrap();
        assert_eq!(RunConfig::resolve(&back).unwrap(), c);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(RunConfig::resolve(&kv(&[("task", "nope")])).is_err());
        assert!(RunConfig::resolve(&kv(&[("method", "nope")])).is_err());
        assert!(RunConfig::resolve(&kv(&[("colour", "red")])).is_err());
        assert!(RunConfig::resolve(&kv(&[("method", "sunle-divi"), ("budget", "5"), ("rounds", "10")])).is_err());
    }
}
