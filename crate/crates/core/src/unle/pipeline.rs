use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::divi::{default_lz_net, divi, DiviConfig, LzNet};
use super::{posterior_sample, PosteriorModel, SampleConfig};
use crate::ebm::{maximize_ebm_log_l, CondTrainer, EnergyModel, TrainConfig, TrainLogRow, DEFAULT_HIDDEN};
use crate::error::{invalid, Error, Result};
use crate::nn::Activation;
use crate::rng::SeedTree;
use crate::samplers::SamplerDiagnostics;
use crate::tasks::{write_samples_csv, Dataset, Task};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InferenceMode {
    /// Exchange-sampler chains on the doubly-intractable posterior.
    Exchange,
    /// Standard MCMC on the `LZ`-corrected posterior.
    Divi,
}

impl std::str::FromStr for InferenceMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exchange" => Ok(InferenceMode::Exchange),
            "divi" => Ok(InferenceMode::Divi),
            other => Err(invalid(format!("unknown inference mode `{other}`"))),
        }
    }
}

/// Settings shared by [`aunle`] and [`sunle`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub train: TrainConfig,
    pub sampler: SampleConfig,
    pub divi: DiviConfig,
    pub hidden: Vec<usize>,
    pub activation: Activation,
    /// Posterior samples kept per round.
    pub n_posterior: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            train: TrainConfig::default(),
            sampler: SampleConfig::default(),
            divi: DiviConfig::default(),
            hidden: DEFAULT_HIDDEN.to_vec(),
            activation: Activation::Swish,
            n_posterior: 1000,
        }
    }
}

/// Wall-clock seconds per phase.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub simulate: f64,
    pub train: f64,
    pub infer: f64,
}

impl Timings {
    pub fn total(&self) -> f64 {
        self.simulate + self.train + self.infer
    }

    fn add(&mut self, other: &Timings) {
        self.simulate += other.simulate;
        self.train += other.train;
        self.infer += other.infer;
    }
}

/// Everything produced by one round.
#[derive(Debug, Clone)]
pub struct RoundRecord {
    pub round: usize,
    /// Pairs simulated in this round.
    pub dataset: Dataset,
    pub energy: EnergyModel,
    pub lz_net: Option<LzNet>,
    pub samples: Vec<Vec<f64>>,
    pub train_log: Vec<TrainLogRow>,
    pub diagnostics: SamplerDiagnostics,
    pub timings: Timings,
    pub metrics: BTreeMap<String, f64>,
}

/// Simulates every `theta` and appends the valid pairs to `data` under
/// `round`. Returns the number of invalid simulations.
pub fn simulate_pairs(task: &Task, thetas: &[Vec<f64>], round: usize, tree: SeedTree, data: &mut Dataset) -> Result<usize> {
    let xs = task.simulate_batch(thetas, tree)?;
    let failures = xs.iter().filter(|x| x.is_none()).count();
    if 2 * failures > thetas.len() {
        return Err(Error::TaskUnsuitable { failures, attempts: thetas.len() });
    }
    for (t, x) in thetas.iter().zip(xs) {
        if let Some(x) = x {
            data.push(round, t.clone(), x)?;
        }
    }
    Ok(failures)
}

fn secs(t: Instant) -> f64 {
    t.elapsed().as_secs_f64()
}

fn init_energy(task: &Task, cfg: &PipelineConfig, tree: SeedTree) -> Result<EnergyModel> {
    EnergyModel::new(task.x_dim(), task.theta_dim(), &cfg.hidden, cfg.activation, &mut tree.named("init").rng())
}

#[derive(Debug, Clone)]
pub struct AunleOutput {
    pub posterior: PosteriorModel,
    pub dataset: Dataset,
    pub record: RoundRecord,
}

/// Amortized UNLE: `n` prior simulations, tilted joint training, then
/// standard MCMC on `p(theta) exp(-E(x_o, theta))`.
pub fn aunle(task: &Task, x_o: &[f64], n: usize, cfg: &PipelineConfig, tree: SeedTree) -> Result<AunleOutput> {
    if n == 0 {
        return Err(invalid("the simulation budget must be at least 1"));
    }
    let mut timings = Timings::default();
    let t0 = Instant::now();
    let mut prior_rng = tree.named("prior").rng();
    let thetas: Vec<Vec<f64>> = (0..n).map(|_| task.prior().sample(&mut prior_rng)).collect();
    let mut data = Dataset::new(task.theta_dim(), task.x_dim());
    simulate_pairs(task, &thetas, 0, tree.named("simulate"), &mut data)?;
    timings.simulate = secs(t0);

    let t0 = Instant::now();
    let e0 = init_energy(task, cfg, tree)?;
    let fit = maximize_ebm_log_l(&data, e0, task.prior(), &cfg.train, &mut tree.named("train").rng())?;
    timings.train = secs(t0);

    let t0 = Instant::now();
    let posterior = PosteriorModel::standard(task.prior().clone(), fit.energy, x_o.to_vec())?;
    let s = posterior_sample(&posterior, cfg.n_posterior, &cfg.sampler, None, &mut tree.named("infer").rng())?;
    timings.infer = secs(t0);

    let record = RoundRecord {
        round: 0,
        dataset: data.clone(),
        energy: posterior.energy.clone(),
        lz_net: None,
        samples: s.samples,
        train_log: fit.log,
        diagnostics: s.diagnostics,
        timings,
        metrics: BTreeMap::new(),
    };
    Ok(AunleOutput { posterior, dataset: data, record })
}

#[derive(Debug, Clone)]
pub struct SunleOutput {
    pub posterior: PosteriorModel,
    pub dataset: Dataset,
    pub rounds: Vec<RoundRecord>,
}

impl SunleOutput {
    pub fn timings(&self) -> Timings {
        let mut t = Timings::default();
        self.rounds.iter().for_each(|r| t.add(&r.timings));
        t
    }
}

/// Per-round simulation counts: `n / rounds` each, the remainder going to round 0.
pub(crate) fn round_sizes(n: usize, rounds: usize) -> Vec<usize> {
    let base = n / rounds;
    let mut sizes = vec![base; rounds];
    sizes[0] += n - base * rounds;
    sizes
}

/// Sequential UNLE over `rounds` rounds.
///
/// Round 0 simulates from the prior; each round trains the conditional EBM
/// on all pairs so far (parameters, optimizer state and particle slots carry
/// over), forms the posterior at `x_o`, and samples it by `mode`. The first
/// samples of round `r` are the parameters simulated in round `r + 1`.
pub fn sunle(
    task: &Task,
    x_o: &[f64],
    n: usize,
    rounds: usize,
    mode: InferenceMode,
    cfg: &PipelineConfig,
    tree: SeedTree,
) -> Result<SunleOutput> {
    if rounds == 0 || n < rounds {
        return Err(invalid(format!("need 1 <= rounds <= budget, got {rounds} rounds for budget {n}")));
    }
    let sizes = round_sizes(n, rounds);
    let mut data = Dataset::new(task.theta_dim(), task.x_dim());
    let mut trainer = CondTrainer::new(init_energy(task, cfg, tree)?, cfg.train)?;
    let mut prior_rng = tree.named("prior").rng();
    let mut proposals: Vec<Vec<f64>> = (0..sizes[0]).map(|_| task.prior().sample(&mut prior_rng)).collect();
    let mut previous: Option<Vec<Vec<f64>>> = None;
    let mut lz: Option<LzNet> = None;
    let mut records = Vec::with_capacity(rounds);
    let mut posterior = None;

    for r in 0..rounds {
        let rt = tree.child(r as u64);
        let mut timings = Timings::default();
        let t0 = Instant::now();
        simulate_pairs(task, &proposals, r, rt.named("simulate"), &mut data)?;
        timings.simulate = secs(t0);

        let t0 = Instant::now();
        let log_start = trainer.log.len();
        let mut train_rng = rt.named("train").rng();
        for _ in 0..cfg.train.max_iter {
            trainer.step(&data, &mut train_rng)?;
        }
        timings.train = secs(t0);

        let t0 = Instant::now();
        let mut infer_rng = rt.named("infer").rng();
        let mut p = PosteriorModel::doubly_intractable(task.prior().clone(), trainer.energy.clone(), x_o.to_vec())?;
        if mode == InferenceMode::Divi {
            let lz0 = match lz.take() {
                Some(net) => net,
                None => default_lz_net(task.theta_dim(), &mut rt.named("lz_init").rng())?,
            };
            p = divi(&p, &proposals, lz0, &cfg.divi, Some(&data), &mut infer_rng)?;
            lz = p.lz_net.clone();
        }
        let next = sizes.get(r + 1).copied().unwrap_or(0);
        let s = posterior_sample(&p, cfg.n_posterior.max(next), &cfg.sampler, previous.as_deref(), &mut infer_rng)?;
        timings.infer = secs(t0);

        proposals = s.samples[..next].to_vec();
        let kept = s.samples[..cfg.n_posterior.min(s.samples.len())].to_vec();
        records.push(RoundRecord {
            round: r,
            dataset: data.round_slice(r),
            energy: trainer.energy.clone(),
            lz_net: lz.clone(),
            samples: kept,
            train_log: trainer.log[log_start..].to_vec(),
            diagnostics: s.diagnostics,
            timings,
            metrics: BTreeMap::new(),
        });
        previous = Some(s.samples);
        posterior = Some(p);
    }
    let posterior = posterior.ok_or_else(|| invalid("no rounds were run"))?;
    Ok(SunleOutput { posterior, dataset: data, rounds: records })
}

/// Writes `round_<r>/{dataset.csv, energy.ckpt, posterior_samples.csv,
/// train_log.csv, sampler_diagnostics.json, metrics.json}` (plus `lz.ckpt`
/// when a log-normalizer net is attached) under `run_dir`.
pub fn write_round(run_dir: &Path, record: &RoundRecord) -> Result<()> {
    let dir = run_dir.join(format!("round_{}", record.round));
    fs::create_dir_all(&dir)?;
    record.dataset.save(&dir.join("dataset.csv"))?;
    fs::write(dir.join("energy.ckpt"), record.energy.to_json()?)?;
    if let Some(lz) = &record.lz_net {
        fs::write(dir.join("lz.ckpt"), lz.to_json()?)?;
    }
    let dim = crate::ebm::Energy::theta_dim(&record.energy);
    write_samples_csv(&record.samples, dim, fs::File::create(dir.join("posterior_samples.csv"))?)?;
    crate::ebm::write_train_log_csv(&record.train_log, fs::File::create(dir.join("train_log.csv"))?)?;
    fs::write(dir.join("sampler_diagnostics.json"), record.diagnostics.to_json()?)?;
    fs::write(dir.join("metrics.json"), serde_json::to_string_pretty(&record.metrics)?)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tasks::TaskName;

    fn tiny() -> PipelineConfig {
        PipelineConfig {
            train: TrainConfig { max_iter: 3, n_particles: 50, mcmc_steps: 5, warmup_steps: 5, ..Default::default() },
            sampler: SampleConfig { chains: 10, warmup: 20, thin: 2, inner_steps: 5, ..Default::default() },
            divi: DiviConfig { n: 20, m: 2, inner_steps: 6, max_iter: 5, batch_size: 10, ..Default::default() },
            hidden: vec![8, 8],
            n_posterior: 30,
            ..Default::default()
        }
    }

    #[test]
    fn budget_split_is_equal_with_remainder_first() {
        assert_eq!(round_sizes(10, 3), vec![4, 3, 3]);
        assert_eq!(round_sizes(1000, 10).iter().sum::<usize>(), 1000);
    }

    #[test]
    fn argument_errors() {
        let task = Task::new(TaskName::TwoMoons);
        let x_o = task.observation(0);
        let tree = SeedTree::new(0);
        assert!(aunle(&task, &x_o, 0, &tiny(), tree).is_err());
        assert!(sunle(&task, &x_o, 5, 0, InferenceMode::Divi, &tiny(), tree).is_err());
        assert!(sunle(&task, &x_o, 3, 4, InferenceMode::Divi, &tiny(), tree).is_err());
    }

    #[test]
    fn sunle_proposals_are_previous_round_samples() {
        let task = Task::new(TaskName::TwoMoons);
        let x_o = task.observation(0);
        let out = sunle(&task, &x_o, 40, 2, InferenceMode::Divi, &tiny(), SeedTree::new(5)).unwrap();
        assert_eq!(out.rounds.len(), 2);
        assert_eq!(out.dataset.len(), 40);
        let r1 = &out.rounds[1].dataset;
        assert_eq!(r1.thetas.as_slice(), &out.rounds[0].samples[..20]);
        assert!(out.rounds.iter().all(|r| r.lz_net.is_some() && r.samples.len() == 30));
        assert_eq!(out.rounds[1].train_log.first().map(|l| l.iter), Some(3));
    }

    #[test]
    fn exchange_mode_leaves_the_posterior_doubly_intractable() {
        let task = Task::new(TaskName::Bimodal);
        let x_o = task.observation(0);
        let out = sunle(&task, &x_o, 20, 1, InferenceMode::Exchange, &tiny(), SeedTree::new(1)).unwrap();
        assert_eq!(out.posterior.kind, super::super::PosteriorKind::DoublyIntractable);
        assert!(out.rounds[0].lz_net.is_none());
    }

    #[test]
    fn rounds_are_written_to_disk() {
        let task = Task::new(TaskName::Bimodal);
        let x_o = task.observation(0);
        let out = aunle(&task, &x_o, 25, &tiny(), SeedTree::new(2)).unwrap();
        assert_eq!(out.record.dataset.len(), 25);
        let dir = tempfile::tempdir().unwrap();
        write_round(dir.path(), &out.record).unwrap();
        for f in ["dataset.csv", "energy.ckpt", "posterior_samples.csv", "metrics.json", "train_log.csv"] {
            assert!(dir.path().join("round_0").join(f).exists(), "{f}");
        }
        let back = Dataset::load(&dir.path().join("round_0/dataset.csv")).unwrap();
        assert_eq!(back, out.record.dataset);
        let e = EnergyModel::from_json(&fs::read_to_string(dir.path().join("round_0/energy.ckpt")).unwrap()).unwrap();
        assert_eq!(e, out.record.energy);
    }
}
