//! End-to-end posterior estimators: amortized UNLE on the tilted joint model,
//! sequential UNLE on the conditional model, and the log-normalizer network
//! that turns a doubly-intractable posterior into a standard one.

mod divi;
mod pipeline;

use serde::{Deserialize, Serialize};

pub use divi::{default_lz_net, divi, divi_loss, divi_online, divi_targets, fit_lz, DiviConfig, DiviOnlineConfig, DiviOnlineFit, LzNet};
pub use pipeline::{
    aunle, simulate_pairs, sunle, write_round, AunleOutput, InferenceMode, PipelineConfig, RoundRecord, SunleOutput,
    Timings,
};

use crate::ebm::{Energy, EnergyModel};
use crate::error::{invalid, Error, Result};
use crate::nn::NetParams;
use crate::rng::Rng;
use crate::samplers::{
    run_chains_collect, run_exchange_chains, systematic_resample, Bound, DoublyIntractable, ExchangeChain,
    ParticleCloud, SamplerDiagnostics, UnnormalizedTarget,
};
use crate::tasks::Prior;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PosteriorKind {
    /// `p(theta) exp(-E(x_o, theta))`, optionally divided by `exp(LZ(theta))`.
    Standard,
    /// `p(theta) exp(-E(x_o, theta)) / Z(theta)` with the normalizer left implicit.
    DoublyIntractable,
}

/// Posterior over `theta` at an observation `x_o` built from a trained energy.
#[derive(Debug, Clone)]
pub struct PosteriorModel<E = EnergyModel> {
    pub prior: Prior,
    pub energy: E,
    pub x_o: Vec<f64>,
    pub kind: PosteriorKind,
    /// Log-normalizer surrogate, subtracted from the standard log-density.
    pub lz_net: Option<NetParams<f64>>,
}

impl<E: Energy> PosteriorModel<E> {
    pub fn standard(prior: Prior, energy: E, x_o: Vec<f64>) -> Result<Self> {
        Self::build(prior, energy, x_o, PosteriorKind::Standard)
    }

    pub fn doubly_intractable(prior: Prior, energy: E, x_o: Vec<f64>) -> Result<Self> {
        Self::build(prior, energy, x_o, PosteriorKind::DoublyIntractable)
    }

    fn build(prior: Prior, energy: E, x_o: Vec<f64>, kind: PosteriorKind) -> Result<Self> {
        if x_o.len() != energy.x_dim() || prior.dim() != energy.theta_dim() {
            return Err(invalid("observation, prior and energy dimensions disagree"));
        }
        Ok(PosteriorModel { prior, energy, x_o, kind, lz_net: None })
    }

    /// Standard posterior corrected by `lz_net`.
    pub fn with_lz(mut self, lz_net: NetParams<f64>) -> Result<Self> {
        if lz_net.input_dim() != self.prior.dim() || lz_net.output_dim() != 1 {
            return Err(invalid("log-normalizer net must map theta to a scalar"));
        }
        self.kind = PosteriorKind::Standard;
        self.lz_net = Some(lz_net);
        Ok(self)
    }

    pub fn theta_dim(&self) -> usize {
        self.prior.dim()
    }

    /// Target view for standard MCMC. Fails for doubly-intractable posteriors.
    pub fn standard_target(&self) -> Result<StandardPosterior<'_, E>> {
        match self.kind {
            PosteriorKind::Standard => Ok(StandardPosterior { model: self }),
            PosteriorKind::DoublyIntractable => Err(Error::Unsupported(
                "a doubly-intractable posterior can only be sampled by the exchange sampler".into(),
            )),
        }
    }

    /// Log-density used to rank chain initializations: the standard
    /// log-density, or the one with `Z(theta)` dropped.
    fn init_score(&self, theta: &[f64]) -> f64 {
        let lp = self.prior.log_pdf(theta);
        if !lp.is_finite() {
            return f64::NEG_INFINITY;
        }
        let lz = match (&self.lz_net, self.kind) {
            (Some(net), PosteriorKind::Standard) => net.eval_scalar(theta),
            _ => 0.0,
        };
        lp - self.energy.energy(&self.x_o, theta) - lz
    }
}

/// `log p(theta) - E(x_o, theta) - LZ(theta)`.
pub struct StandardPosterior<'a, E> {
    model: &'a PosteriorModel<E>,
}

impl<E: Energy> UnnormalizedTarget<f64> for StandardPosterior<'_, E> {
    fn dim(&self) -> usize {
        self.model.theta_dim()
    }

    fn log_density(&self, theta: &[f64]) -> f64 {
        self.model.init_score(theta)
    }

    fn log_density_and_grad(&self, theta: &[f64], grad: &mut [f64]) -> f64 {
        let m = self.model;
        let lp = m.prior.log_pdf_and_grad(theta, grad);
        if !lp.is_finite() {
            return f64::NEG_INFINITY;
        }
        let mut gx = vec![0.0; m.x_o.len()];
        let mut gt = vec![0.0; theta.len()];
        let e = m.energy.energy_and_grads(&m.x_o, theta, &mut gx, &mut gt);
        grad.iter_mut().zip(&gt).for_each(|(g, d)| *g -= d);
        let mut lz = 0.0;
        if let Some(net) = &m.lz_net {
            let mut gl = vec![0.0; theta.len()];
            lz = net.value_and_grad_input(theta, &mut gl);
            grad.iter_mut().zip(&gl).for_each(|(g, d)| *g -= d);
        }
        lp - e - lz
    }

    fn support(&self) -> Option<&[Bound<f64>]> {
        UnnormalizedTarget::support(&self.model.prior)
    }
}

impl<E: Energy> DoublyIntractable<f64> for PosteriorModel<E> {
    fn theta_dim(&self) -> usize {
        self.prior.dim()
    }

    fn x_dim(&self) -> usize {
        self.x_o.len()
    }

    fn log_prior(&self, theta: &[f64]) -> f64 {
        self.prior.log_pdf(theta)
    }

    fn energy(&self, x: &[f64], theta: &[f64]) -> f64 {
        self.energy.energy(x, theta)
    }

    fn energy_and_grad_x(&self, x: &[f64], theta: &[f64], grad_x: &mut [f64]) -> f64 {
        let mut gt = vec![0.0; theta.len()];
        self.energy.energy_and_grads(x, theta, grad_x, &mut gt)
    }

    fn observation(&self) -> &[f64] {
        &self.x_o
    }
}

/// Chain layout of [`posterior_sample`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SampleConfig {
    pub chains: usize,
    /// Adaptive burn-in per chain, discarded.
    pub warmup: usize,
    /// Moves between kept samples.
    pub thin: usize,
    /// Auxiliary MALA moves per exchange update.
    pub inner_steps: usize,
    /// Prior draws screened per chain to place the chains.
    pub candidates_per_chain: usize,
    pub initial_step_size: f64,
}

impl Default for SampleConfig {
    fn default() -> Self {
        SampleConfig { chains: 100, warmup: 500, thin: 10, inner_steps: 100, candidates_per_chain: 10, initial_step_size: 0.1 }
    }
}

impl SampleConfig {
    pub fn validate(&self) -> Result<()> {
        if self.chains == 0 || self.inner_steps == 0 || !(self.initial_step_size > 0.0) {
            return Err(invalid("sampler needs chains, inner steps and a positive step size"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct PosteriorSamples {
    pub samples: Vec<Vec<f64>>,
    pub diagnostics: SamplerDiagnostics,
}

/// Starting points for `chains` chains: resampled from `previous` when given,
/// otherwise prior candidates resampled in proportion to `exp(score)`.
fn chain_starts<E: Energy>(p: &PosteriorModel<E>, cfg: &SampleConfig, previous: Option<&[Vec<f64>]>, rng: &mut Rng) -> Result<Vec<Vec<f64>>> {
    if let Some(prev) = previous.filter(|s| !s.is_empty()) {
        let usable: Vec<&Vec<f64>> = prev.iter().filter(|t| p.init_score(t).is_finite()).collect();
        if !usable.is_empty() {
            let idx = systematic_resample(&vec![1.0; usable.len()], cfg.chains, rng);
            return Ok(idx.into_iter().map(|i| usable[i].clone()).collect());
        }
    }
    let n_cand = (cfg.chains * cfg.candidates_per_chain).max(cfg.chains);
    for _ in 0..=5 {
        let cands: Vec<Vec<f64>> = (0..n_cand).map(|_| p.prior.sample(rng)).collect();
        let scores: Vec<f64> = cands.iter().map(|t| p.init_score(t)).collect();
        let top = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if top.is_finite() {
            let w: Vec<f64> = scores.iter().map(|s| (s - top).exp()).collect();
            let idx = systematic_resample(&w, cfg.chains, rng);
            return Ok(idx.into_iter().map(|i| cands[i].clone()).collect());
        }
    }
    Err(Error::InitializationFailure { retries: 5, reason: "no prior draw has a finite posterior density".into() })
}

/// Draws `n` posterior samples with standard MALA chains or, for a
/// doubly-intractable posterior, exchange chains. `previous` samples (e.g.
/// from an earlier round) seed the chains when available.
pub fn posterior_sample<E: Energy>(
    p: &PosteriorModel<E>,
    n: usize,
    cfg: &SampleConfig,
    previous: Option<&[Vec<f64>]>,
    rng: &mut Rng,
) -> Result<PosteriorSamples> {
    if n == 0 {
        return Ok(PosteriorSamples { samples: Vec::new(), diagnostics: SamplerDiagnostics::default() });
    }
    cfg.validate()?;
    let starts = chain_starts(p, cfg, previous, rng)?;
    let per_chain = n.div_ceil(starts.len());
    let thin = cfg.thin.max(1);
    let (chains, diagnostics) = match p.kind {
        PosteriorKind::Standard => {
            let target = p.standard_target()?;
            let cloud = ParticleCloud::uniform(starts, cfg.initial_step_size)?;
            let run = run_chains_collect(&target, &cloud, per_chain * thin, cfg.warmup, thin, rng)?;
            (run.samples, run.diagnostics)
        }
        PosteriorKind::DoublyIntractable => {
            let scale: Vec<f64> = p.prior.spread().iter().map(|s| 0.1 * s).collect();
            let mut chains = starts
                .into_iter()
                .map(|t| ExchangeChain::new(p, t, p.x_o.clone(), scale.clone(), cfg.inner_steps))
                .collect::<Result<Vec<_>>>()?;
            run_exchange_chains(p, &mut chains, cfg.warmup, per_chain, thin, rng)
        }
    };
    let mut samples = Vec::with_capacity(n);
    'outer: for k in 0..per_chain {
        for chain in &chains {
            if samples.len() == n {
                break 'outer;
            }
            if let Some(s) = chain.get(k) {
                samples.push(s.clone());
            }
        }
    }
    Ok(PosteriorSamples { samples, diagnostics })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeedTree;

    /// `E(x, theta) = (x - theta)^2 / 2`: a unit-variance Gaussian likelihood.
    #[derive(Clone)]
    struct Shift;

    impl Energy for Shift {
        fn x_dim(&self) -> usize {
            1
        }
        fn theta_dim(&self) -> usize {
            1
        }
        fn energy(&self, x: &[f64], t: &[f64]) -> f64 {
            0.5 * (x[0] - t[0]).powi(2)
        }
        fn energy_and_grads(&self, x: &[f64], t: &[f64], gx: &mut [f64], gt: &mut [f64]) -> f64 {
            gx[0] = x[0] - t[0];
            gt[0] = t[0] - x[0];
            self.energy(x, t)
        }
    }

    struct Zero;

    impl Energy for Zero {
        fn x_dim(&self) -> usize {
            1
        }
        fn theta_dim(&self) -> usize {
            2
        }
        fn energy(&self, _: &[f64], _: &[f64]) -> f64 {
            0.0
        }
        fn energy_and_grads(&self, _: &[f64], _: &[f64], gx: &mut [f64], gt: &mut [f64]) -> f64 {
            gx.fill(0.0);
            gt.fill(0.0);
            0.0
        }
    }

    fn moments(s: &[Vec<f64>], d: usize) -> (f64, f64) {
        let n = s.len() as f64;
        let m = s.iter().map(|v| v[d]).sum::<f64>() / n;
        (m, s.iter().map(|v| (v[d] - m).powi(2)).sum::<f64>() / (n - 1.0))
    }

    #[test]
    fn zero_energy_samples_the_prior() {
        let prior = Prior::uniform_box(2, -1.0, 3.0).unwrap();
        let p = PosteriorModel::standard(prior, Zero, vec![0.0]).unwrap();
        let s = posterior_sample(&p, 2000, &SampleConfig::default(), None, &mut SeedTree::new(1).rng()).unwrap();
        assert_eq!(s.samples.len(), 2000);
        for d in 0..2 {
            let (m, v) = moments(&s.samples, d);
            // uniform on [-1, 3]: mean 1, variance 4/3; samples are correlated so allow a wide band
            assert!((m - 1.0).abs() < 0.15, "mean {m}");
            assert!((v - 4.0 / 3.0).abs() < 0.2, "var {v}");
        }
    }

    #[test]
    fn zero_samples_is_empty() {
        let prior = Prior::gaussian(vec![0.0], vec![1.0]).unwrap();
        let p = PosteriorModel::standard(prior, Shift, vec![1.0]).unwrap();
        let s = posterior_sample(&p, 0, &SampleConfig::default(), None, &mut SeedTree::new(1).rng()).unwrap();
        assert!(s.samples.is_empty());
    }

    #[test]
    fn both_kinds_agree_on_the_conjugate_toy() {
        let prior = Prior::gaussian(vec![0.0], vec![1.0]).unwrap();
        let std = PosteriorModel::standard(prior.clone(), Shift, vec![1.0]).unwrap();
        let di = PosteriorModel::doubly_intractable(prior, Shift, vec![1.0]).unwrap();
        assert!(di.standard_target().is_err());
        let cfg = SampleConfig { chains: 50, warmup: 300, thin: 5, inner_steps: 30, ..Default::default() };
        let a = posterior_sample(&std, 1000, &cfg, None, &mut SeedTree::new(3).rng()).unwrap();
        let b = posterior_sample(&di, 1000, &cfg, None, &mut SeedTree::new(4).rng()).unwrap();
        for s in [&a.samples, &b.samples] {
            let (m, v) = moments(s, 0);
            assert!((m - 0.5).abs() < 0.1, "mean {m}");
            assert!((v - 0.5).abs() < 0.1, "var {v}");
        }
    }

    #[test]
    fn lz_net_enters_the_log_density() {
        let prior = Prior::gaussian(vec![0.0], vec![1.0]).unwrap();
        let mut net = NetParams::<f64>::zeros(&[1, 1], crate::nn::Activation::Identity).unwrap();
        net.weight_mut(0)[0] = 2.0;
        let p = PosteriorModel::standard(prior, Shift, vec![1.0]).unwrap();
        let base = p.standard_target().unwrap().log_density(&[0.3]);
        let q = p.clone().with_lz(net).unwrap();
        let t = q.standard_target().unwrap();
        assert!((base - t.log_density(&[0.3]) - 0.6).abs() < 1e-12);
        let mut g = [0.0];
        t.log_density_and_grad(&[0.3], &mut g);
        // d/dtheta [-theta^2/2 - (1 - theta)^2/2 - 2 theta] = -theta + (1 - theta) - 2
        assert!((g[0] - (-0.3 + 0.7 - 2.0)).abs() < 1e-12);
    }
}
