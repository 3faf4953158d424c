use rand::seq::index::sample as sample_indices;
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::PosteriorModel;
use crate::ebm::{ConditionalTarget, CondTrainer, Energy, TrainConfig, TrainLogRow, TrainableEnergy};
use crate::error::{invalid, Error, Result};
use crate::nn::{Activation, AdamConfig, AdamState, NetParams};
use crate::rng::{fork, Rng};
use crate::samplers::{evolve, ChainState};
use crate::tasks::Dataset;

/// Scalar network `LZ(theta)` standing in for `log Z(theta)` up to a constant.
pub type LzNet = NetParams<f64>;

/// Default log-normalizer network: four swish layers of 50 units.
pub fn default_lz_net(theta_dim: usize, rng: &mut Rng) -> Result<LzNet> {
    let mut sizes = vec![theta_dim];
    sizes.extend_from_slice(&crate::ebm::DEFAULT_HIDDEN);
    sizes.push(1);
    NetParams::init(&sizes, Activation::Swish, rng)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiviConfig {
    /// Proposal parameters drawn from `nu`.
    pub n: usize,
    /// Likelihood draws per parameter.
    pub m: usize,
    /// MALA moves per likelihood draw; the first half adapts.
    pub inner_steps: usize,
    pub max_iter: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub initial_step_size: f64,
}

impl Default for DiviConfig {
    fn default() -> Self {
        DiviConfig { n: 1000, m: 5, inner_steps: 100, max_iter: 500, learning_rate: 0.01, batch_size: 200, initial_step_size: 0.1 }
    }
}

/// Monte Carlo estimates `g_i = (1/M) sum_m dE(x_m, theta_i)/dtheta` with
/// `x_m ~ q(. | theta_i)` drawn by `M` independent MALA chains started at `starts[i]`.
pub fn divi_targets<E: Energy>(
    energy: &E,
    thetas: &[Vec<f64>],
    starts: &[Vec<f64>],
    m: usize,
    inner_steps: usize,
    initial_step_size: f64,
    rng: &mut Rng,
) -> Result<Vec<Vec<f64>>> {
    if m == 0 {
        return Err(invalid("DIVI needs at least one likelihood draw per parameter"));
    }
    if starts.len() != thetas.len() {
        return Err(invalid("one chain start per parameter is required"));
    }
    let streams = fork(rng);
    let warmup = inner_steps / 2;
    let dx = energy.x_dim();
    thetas
        .par_iter()
        .zip(starts)
        .enumerate()
        .map(|(i, (theta, x0))| {
            let target = ConditionalTarget { energy, theta };
            let tree = streams.child(i as u64);
            let mut g = vec![0.0; theta.len()];
            let mut gt = vec![0.0; theta.len()];
            let mut gx = vec![0.0; dx];
            for k in 0..m {
                let mut r = tree.child(k as u64).rng();
                let mut st = ChainState::new(&target, x0.clone(), initial_step_size)
                    .map_err(|e| Error::SamplerFailure(format!("DIVI inner chain at theta {theta:?}: {e}")))?;
                evolve(&target, &mut st, warmup, inner_steps - warmup, &mut r, 1, |_| {});
                energy.energy_and_grads(&st.position, theta, &mut gx, &mut gt);
                g.iter_mut().zip(&gt).for_each(|(a, b)| *a += b / m as f64);
            }
            Ok(g)
        })
        .collect()
}

/// `(1/n) sum_i ||grad LZ(theta_i) + g_i||^2`.
pub fn divi_loss(lz: &LzNet, thetas: &[Vec<f64>], targets: &[Vec<f64>]) -> f64 {
    let mut g = vec![0.0; lz.input_dim()];
    let total: f64 = thetas
        .iter()
        .zip(targets)
        .map(|(t, tgt)| {
            lz.value_and_grad_input(t, &mut g);
            g.iter().zip(tgt).map(|(a, b)| (a + b).powi(2)).sum::<f64>()
        })
        .sum();
    total / thetas.len() as f64
}

const CHUNK: usize = 64;

/// Parameter gradient of [`divi_loss`] restricted to `batch`.
fn loss_grad(lz: &LzNet, thetas: &[Vec<f64>], targets: &[Vec<f64>], batch: &[usize]) -> Vec<f64> {
    let p = lz.n_params();
    let scale = 2.0 / batch.len() as f64;
    let parts: Vec<Vec<f64>> = batch
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut acc = vec![0.0; p];
            let mut g = vec![0.0; lz.input_dim()];
            for &i in chunk {
                lz.value_and_grad_input(&thetas[i], &mut g);
                let dir: Vec<f64> = g.iter().zip(&targets[i]).map(|(a, b)| a + b).collect();
                // shapes were checked by the caller
                let _ = lz.directional_derivative_param_grad(&thetas[i], &dir, scale, &mut acc);
            }
            acc
        })
        .collect();
    let mut total = vec![0.0; p];
    for part in parts {
        total.iter_mut().zip(&part).for_each(|(t, v)| *t += v);
    }
    total
}

/// Fits `LZ` to the gradient targets by minibatch Adam with a cosine
/// learning-rate decay; returns the net and
/// the full loss after every `max_iter / 10` iterations.
pub fn fit_lz(lz0: LzNet, thetas: &[Vec<f64>], targets: &[Vec<f64>], cfg: &DiviConfig, rng: &mut Rng) -> Result<(LzNet, Vec<f64>)> {
    let n = thetas.len();
    if n == 0 || targets.len() != n {
        return Err(invalid("LZ fitting needs one target per parameter"));
    }
    if lz0.input_dim() != thetas[0].len() || lz0.output_dim() != 1 {
        return Err(invalid("log-normalizer net must map theta to a scalar"));
    }
    let mut lz = lz0;
    let mut adam = AdamState::for_net(&lz, AdamConfig::with_learning_rate(cfg.learning_rate));
    let b = cfg.batch_size.clamp(1, n);
    let every = (cfg.max_iter / 10).max(1);
    let mut trace = Vec::new();
    for k in 0..cfg.max_iter {
        // cosine decay to a tenth of the base rate
        let c = 0.5 * (1.0 + (std::f64::consts::PI * k as f64 / cfg.max_iter as f64).cos());
        adam.config.learning_rate = cfg.learning_rate * (0.1 + 0.9 * c);
        let mut batch = if b == n { (0..n).collect() } else { sample_indices(rng, n, b).into_vec() };
        batch.sort_unstable();
        let grad = loss_grad(&lz, thetas, targets, &batch);
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::TrainingFailure { iteration: k, reason: "non-finite LZ gradient".into() });
        }
        adam.step(lz.params_mut(), &grad)?;
        if (k + 1) % every == 0 {
            trace.push(divi_loss(&lz, thetas, targets));
        }
    }
    Ok((lz, trace))
}

/// Likelihood-chain start for every parameter: the `x` of the nearest
/// simulated pair in `data`, or the observation.
fn chain_starts(thetas: &[Vec<f64>], data: Option<&Dataset>, x_o: &[f64]) -> Vec<Vec<f64>> {
    thetas
        .par_iter()
        .map(|t| match data.filter(|d| !d.is_empty()) {
            Some(d) => {
                let mut best = (f64::INFINITY, 0);
                for (j, tj) in d.thetas.iter().enumerate() {
                    let dist: f64 = tj.iter().zip(t).map(|(a, b)| (a - b).powi(2)).sum();
                    if dist < best.0 {
                        best = (dist, j);
                    }
                }
                d.xs[best.1].clone()
            }
            None => x_o.to_vec(),
        })
        .collect()
}

/// Standard approximation of a doubly-intractable posterior: draws `n`
/// parameters from the proposal samples `nu` (with replacement), estimates
/// `-grad log Z` at each from `M` likelihood draws, and fits `LZ` to match.
pub fn divi<E: Energy + Clone>(
    posterior: &PosteriorModel<E>,
    nu: &[Vec<f64>],
    lz0: LzNet,
    cfg: &DiviConfig,
    data: Option<&Dataset>,
    rng: &mut Rng,
) -> Result<PosteriorModel<E>> {
    if cfg.n == 0 {
        return Err(invalid("DIVI needs n >= 1 proposal parameters"));
    }
    if nu.is_empty() {
        return Err(invalid("DIVI needs a non-empty proposal sample"));
    }
    let thetas: Vec<Vec<f64>> = (0..cfg.n).map(|_| nu[rng.random_range(0..nu.len())].clone()).collect();
    let starts = chain_starts(&thetas, data, &posterior.x_o);
    let targets = divi_targets(&posterior.energy, &thetas, &starts, cfg.m, cfg.inner_steps, cfg.initial_step_size, rng)?;
    let (lz, _) = fit_lz(lz0, &thetas, &targets, cfg, rng)?;
    let mut out = posterior.clone();
    out.lz_net = None;
    out.with_lz(lz)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiviOnlineConfig {
    pub train: TrainConfig,
    pub lz_learning_rate: f64,
    /// Disabling the updates leaves the energy training untouched.
    pub update_lz: bool,
}

impl Default for DiviOnlineConfig {
    fn default() -> Self {
        DiviOnlineConfig { train: TrainConfig::default(), lz_learning_rate: 0.01, update_lz: true }
    }
}

#[derive(Debug, Clone)]
pub struct DiviOnlineFit<E> {
    pub energy: E,
    pub lz: LzNet,
    pub log: Vec<TrainLogRow>,
}

/// Conditional EBM training that recycles each iteration's refreshed slot
/// particles as one-sample `grad log Z` signals for an Adam step on `LZ`.
/// The `LZ` updates draw no random numbers.
pub fn divi_online<E: TrainableEnergy>(
    data: &Dataset,
    e0: E,
    lz0: LzNet,
    cfg: &DiviOnlineConfig,
    rng: &mut Rng,
) -> Result<DiviOnlineFit<E>> {
    if data.is_empty() {
        return Err(invalid("training needs a non-empty dataset"));
    }
    if lz0.input_dim() != e0.theta_dim() || lz0.output_dim() != 1 {
        return Err(invalid("log-normalizer net must map theta to a scalar"));
    }
    let mut trainer = CondTrainer::new(e0, cfg.train)?;
    let mut lz = lz0;
    let mut adam = AdamState::for_net(&lz, AdamConfig::with_learning_rate(cfg.lz_learning_rate));
    trainer.extend_slots(data);
    let dx = data.x_dim();
    for _ in 0..cfg.train.max_iter {
        let refresh = trainer.step_with_batch(data, rng)?;
        if !cfg.update_lz {
            continue;
        }
        let energy = &trainer.energy;
        let slots = &trainer.slots;
        let targets: Vec<Vec<f64>> = refresh
            .batch
            .par_iter()
            .map(|&i| {
                let mut gx = vec![0.0; dx];
                let mut gt = vec![0.0; data.theta_dim()];
                energy.energy_and_grads(&slots[i].x, &data.thetas[i], &mut gx, &mut gt);
                gt
            })
            .collect();
        let thetas: Vec<Vec<f64>> = refresh.batch.iter().map(|&i| data.thetas[i].clone()).collect();
        let all: Vec<usize> = (0..thetas.len()).collect();
        let grad = loss_grad(&lz, &thetas, &targets, &all);
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::TrainingFailure { iteration: trainer.iteration, reason: "non-finite LZ gradient".into() });
        }
        adam.step(lz.params_mut(), &grad)?;
    }
    let fit = trainer.finish();
    Ok(DiviOnlineFit { energy: fit.energy, lz, log: fit.log })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeedTree;
    use crate::tasks::Prior;

    /// `E(x, theta) = a x^2 / 2 - b theta x`, so `log Z(theta) = b^2 theta^2 / (2a) + const`.
    #[derive(Debug, Clone, PartialEq)]
    struct ExpFamily {
        p: [f64; 2],
    }

    impl ExpFamily {
        fn log_z(&self, t: f64) -> f64 {
            self.p[1] * self.p[1] * t * t / (2.0 * self.p[0])
        }
    }

    impl Energy for ExpFamily {
        fn x_dim(&self) -> usize {
            1
        }
        fn theta_dim(&self) -> usize {
            1
        }
        fn energy(&self, x: &[f64], t: &[f64]) -> f64 {
            0.5 * self.p[0] * x[0] * x[0] - self.p[1] * t[0] * x[0]
        }
        fn energy_and_grads(&self, x: &[f64], t: &[f64], gx: &mut [f64], gt: &mut [f64]) -> f64 {
            gx[0] = self.p[0] * x[0] - self.p[1] * t[0];
            gt[0] = -self.p[1] * x[0];
            self.energy(x, t)
        }
    }

    impl TrainableEnergy for ExpFamily {
        fn params(&self) -> &[f64] {
            &self.p
        }
        fn params_mut(&mut self) -> &mut [f64] {
            &mut self.p
        }
        fn accumulate_param_grad(&self, x: &[f64], t: &[f64], scale: f64, acc: &mut [f64]) -> f64 {
            acc[0] += scale * 0.5 * x[0] * x[0];
            acc[1] -= scale * t[0] * x[0];
            self.energy(x, t)
        }
    }

    /// Standard deviation over a 21-point grid of the centered `LZ - log Z`.
    fn centered_spread(lz: &LzNet, log_z: impl Fn(f64) -> f64) -> f64 {
        let d: Vec<f64> = (0..21)
            .map(|k| {
                let t = -2.5 + 0.25 * k as f64;
                lz.eval_scalar(&[t]) - log_z(t)
            })
            .collect();
        let m = d.iter().sum::<f64>() / 21.0;
        (d.iter().map(|v| (v - m).powi(2)).sum::<f64>() / 21.0).sqrt()
    }

    fn toy_posterior() -> PosteriorModel<ExpFamily> {
        let prior = Prior::uniform_box(1, -3.0, 3.0).unwrap();
        PosteriorModel::doubly_intractable(prior, ExpFamily { p: [1.0, 1.0] }, vec![0.5]).unwrap()
    }

    #[test]
    fn recovers_the_exponential_family_log_normalizer() {
        let p = toy_posterior();
        let mut rng = SeedTree::new(11).rng();
        let nu: Vec<Vec<f64>> = (0..2000).map(|_| p.prior.sample(&mut rng)).collect();
        let lz0 = default_lz_net(1, &mut rng).unwrap();
        let q = divi(&p, &nu, lz0, &DiviConfig::default(), None, &mut rng).unwrap();
        assert_eq!(q.kind, super::super::PosteriorKind::Standard);
        let spread = centered_spread(q.lz_net.as_ref().unwrap(), |t| t * t / 2.0);
        println!("divi centered spread {spread:.4}");
        assert!(spread <= 0.1, "spread {spread}");
    }

    #[test]
    fn theta_free_energy_gives_a_flat_lz() {
        let prior = Prior::uniform_box(1, -3.0, 3.0).unwrap();
        let p = PosteriorModel::doubly_intractable(prior, ExpFamily { p: [1.0, 0.0] }, vec![0.5]).unwrap();
        let mut rng = SeedTree::new(2).rng();
        let nu: Vec<Vec<f64>> = (0..500).map(|_| p.prior.sample(&mut rng)).collect();
        let lz0 = default_lz_net(1, &mut rng).unwrap();
        let cfg = DiviConfig { n: 300, m: 1, inner_steps: 10, ..Default::default() };
        let q = divi(&p, &nu, lz0, &cfg, None, &mut rng).unwrap();
        let lz = q.lz_net.unwrap();
        let worst = (0..21)
            .map(|k| lz.grad_input(&[-2.5 + 0.25 * k as f64]).unwrap()[0].abs())
            .fold(0.0, f64::max);
        assert!(worst <= 0.05, "gradient {worst}");
    }

    #[test]
    fn more_likelihood_draws_reduce_loss_variance() {
        let p = toy_posterior();
        let mut rng = SeedTree::new(3).rng();
        let lz = default_lz_net(1, &mut rng).unwrap();
        let thetas: Vec<Vec<f64>> = (0..100).map(|_| p.prior.sample(&mut rng)).collect();
        let starts = vec![vec![0.5]; thetas.len()];
        let losses = |m: usize| -> Vec<f64> {
            (0..20u64)
                .map(|s| {
                    let mut r = SeedTree::new(100 + s).rng();
                    let g = divi_targets(&p.energy, &thetas, &starts, m, 50, 0.1, &mut r).unwrap();
                    divi_loss(&lz, &thetas, &g)
                })
                .collect()
        };
        let var = |v: &[f64]| {
            let m = v.iter().sum::<f64>() / v.len() as f64;
            v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64
        };
        let (v10, v1) = (var(&losses(10)), var(&losses(1)));
        assert!(v10 < v1, "M=10 variance {v10} vs M=1 {v1}");
    }

    #[test]
    fn rejects_empty_requests() {
        let p = toy_posterior();
        let mut rng = SeedTree::new(0).rng();
        let lz0 = default_lz_net(1, &mut rng).unwrap();
        let cfg = DiviConfig { n: 0, ..Default::default() };
        assert!(divi(&p, &[vec![0.0]], lz0.clone(), &cfg, None, &mut rng).is_err());
        assert!(divi(&p, &[], lz0, &DiviConfig::default(), None, &mut rng).is_err());
    }

    fn toy_data(n: usize, seed: u64) -> Dataset {
        use rand_distr::{Distribution, Normal};
        let mut rng = SeedTree::new(seed).rng();
        let prior = Prior::uniform_box(1, -3.0, 3.0).unwrap();
        let mut d = Dataset::new(1, 1);
        for _ in 0..n {
            let t = prior.sample(&mut rng);
            let x = Normal::new(t[0], 1.0).unwrap().sample(&mut rng);
            d.push(0, t, vec![x]).unwrap();
        }
        d
    }

    #[test]
    fn online_without_lz_updates_matches_plain_training() {
        let data = toy_data(200, 1);
        let train = TrainConfig { max_iter: 20, mcmc_steps: 5, warmup_steps: 5, batch_size: Some(50), ..Default::default() };
        let e0 = ExpFamily { p: [0.7, 1.3] };
        let lz0 = default_lz_net(1, &mut SeedTree::new(9).rng()).unwrap();
        let off = DiviOnlineConfig { train, update_lz: false, ..Default::default() };
        let on = DiviOnlineConfig { train, ..Default::default() };
        let a = divi_online(&data, e0.clone(), lz0.clone(), &off, &mut SeedTree::new(4).rng()).unwrap();
        let b = crate::ebm::maximize_cebm_log_l(&data, e0.clone(), &train, &mut SeedTree::new(4).rng()).unwrap();
        let c = divi_online(&data, e0.clone(), lz0.clone(), &on, &mut SeedTree::new(4).rng()).unwrap();
        assert_eq!(a.energy, b.energy);
        assert_eq!(a.lz, lz0);
        assert_eq!(c.energy, b.energy);
        assert_ne!(c.lz, lz0);

        let zero = DiviOnlineConfig { train: TrainConfig { max_iter: 0, ..train }, ..Default::default() };
        let z = divi_online(&data, e0.clone(), lz0.clone(), &zero, &mut SeedTree::new(4).rng()).unwrap();
        assert_eq!((z.energy, z.lz), (e0, lz0));
    }

    #[test]
    fn online_lz_matches_the_log_normalizer() {
        let data = toy_data(1000, 2);
        let train = TrainConfig {
            max_iter: 600,
            learning_rate: 0.002,
            mcmc_steps: 10,
            warmup_steps: 20,
            ..Default::default()
        };
        let cfg = DiviOnlineConfig { train, lz_learning_rate: 0.01, update_lz: true };
        let lz0 = default_lz_net(1, &mut SeedTree::new(5).rng()).unwrap();
        let fit = divi_online(&data, ExpFamily { p: [1.0, 1.0] }, lz0, &cfg, &mut SeedTree::new(6).rng()).unwrap();
        let spread = centered_spread(&fit.lz, |t| fit.energy.log_z(t));
        println!("online centered spread {spread:.4} params {:?}", fit.energy.p);
        assert!(spread <= 0.1, "spread {spread}");
    }
}
