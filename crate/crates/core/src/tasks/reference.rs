use serde::{Deserialize, Serialize};

use super::Task;
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::samplers::{run_chains_collect, systematic_resample, Bound, ParticleCloud, UnnormalizedTarget};

/// Unnormalized true posterior `p(theta) p(x_o | theta)` of a task.
pub struct TruePosterior<'a> {
    pub task: &'a Task,
    pub x_o: &'a [f64],
}

impl UnnormalizedTarget<f64> for TruePosterior<'_> {
    fn dim(&self) -> usize {
        self.task.theta_dim()
    }

    fn log_density(&self, theta: &[f64]) -> f64 {
        let lp = self.task.prior().log_pdf(theta);
        if !lp.is_finite() {
            return f64::NEG_INFINITY;
        }
        lp + self.task.true_loglik(self.x_o, theta).unwrap_or(f64::NEG_INFINITY)
    }

    fn log_density_and_grad(&self, theta: &[f64], grad: &mut [f64]) -> f64 {
        let lp = self.task.prior().log_pdf_and_grad(theta, grad);
        if !lp.is_finite() {
            return f64::NEG_INFINITY;
        }
        let mut g = vec![0.0; theta.len()];
        match self.task.true_loglik_and_grad(self.x_o, theta, &mut g) {
            Ok(ll) => {
                grad.iter_mut().zip(&g).for_each(|(a, b)| *a += b);
                lp + ll
            }
            Err(_) => f64::NEG_INFINITY,
        }
    }

    fn support(&self) -> Option<&[Bound<f64>]> {
        UnnormalizedTarget::support(self.task.prior())
    }
}

/// Chain layout of [`reference_posterior`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReferenceConfig {
    pub chains: usize,
    /// Adaptive burn-in steps per chain (discarded).
    pub warmup: usize,
    /// Kept-phase steps per chain.
    pub steps: usize,
    /// Prior draws screened to initialize the chains.
    pub candidates: usize,
    pub initial_step_size: f64,
}

impl Default for ReferenceConfig {
    fn default() -> Self {
        ReferenceConfig { chains: 1000, warmup: 1000, steps: 1000, candidates: 10_000, initial_step_size: 0.05 }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ReferenceDiagnostics {
    pub mean_acceptance: f64,
    /// Largest split-chain potential scale reduction over coordinates.
    pub max_split_rhat: f64,
    pub initialization_retries: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReferencePosterior {
    pub samples: Vec<Vec<f64>>,
    pub diagnostics: ReferenceDiagnostics,
}

const MAX_INIT_RETRIES: usize = 5;

/// Draws `n` samples from the true posterior of `task` at `x_o` by MALA.
///
/// Chains start from prior candidates resampled systematically in proportion
/// to their likelihood, so every posterior mode receives chains in proportion
/// to its mass; each chain adapts during `warmup`, then runs `steps` moves
/// from which the `n` samples are taken evenly across chains.
pub fn reference_posterior(
    task: &Task,
    x_o: &[f64],
    n: usize,
    config: &ReferenceConfig,
    rng: &mut Rng,
) -> Result<ReferencePosterior> {
    if n == 0 {
        return Ok(ReferencePosterior { samples: Vec::new(), diagnostics: ReferenceDiagnostics::default() });
    }
    let target = TruePosterior { task, x_o };
    let mut retries = 0;
    let init = loop {
        let cands: Vec<Vec<f64>> = (0..config.candidates.max(1)).map(|_| task.prior().sample(rng)).collect();
        let logw: Vec<f64> = cands.iter().map(|t| task.true_loglik(x_o, t).unwrap_or(f64::NEG_INFINITY)).collect();
        let top = logw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if top.is_finite() {
            let w: Vec<f64> = logw.iter().map(|l| (l - top).exp()).collect();
            let idx = systematic_resample(&w, config.chains.max(1), rng);
            break idx.into_iter().map(|i| cands[i].clone()).collect::<Vec<_>>();
        }
        retries += 1;
        if retries > MAX_INIT_RETRIES {
            return Err(Error::InitializationFailure {
                retries: MAX_INIT_RETRIES,
                reason: format!("no prior candidate has a finite likelihood at x_o = {x_o:?}"),
            });
        }
    };
    let chains = init.len();
    let per_chain = n.div_ceil(chains);
    let thin = (config.steps / per_chain).max(1);
    let steps = thin * per_chain;
    let cloud = ParticleCloud::uniform(init, config.initial_step_size)?;
    let run = run_chains_collect(&target, &cloud, steps, config.warmup, thin, rng)?;

    // interleave chains so any prefix mixes all of them
    let mut samples = Vec::with_capacity(n);
    'outer: for k in 0..per_chain {
        for chain in &run.samples {
            if samples.len() == n {
                break 'outer;
            }
            samples.push(chain[k].clone());
        }
    }
    let diagnostics = ReferenceDiagnostics {
        mean_acceptance: run.diagnostics.mean_acceptance(),
        max_split_rhat: split_rhat(&run.samples),
        initialization_retries: retries,
    };
    Ok(ReferencePosterior { samples, diagnostics })
}

/// Split-chain potential scale reduction, maximized over coordinates.
pub(crate) fn split_rhat(chains: &[Vec<Vec<f64>>]) -> f64 {
    let halves: Vec<&[Vec<f64>]> = chains
        .iter()
        .filter(|c| c.len() >= 4)
        .flat_map(|c| {
            let h = c.len() / 2;
            [&c[..h], &c[h..2 * h]]
        })
        .collect();
    if halves.len() < 2 {
        return f64::NAN;
    }
    let dim = halves[0][0].len();
    let m = halves.len() as f64;
    let len = halves[0].len() as f64;
    let mut worst: f64 = 1.0;
    for d in 0..dim {
        let means: Vec<f64> = halves.iter().map(|h| h.iter().map(|s| s[d]).sum::<f64>() / len).collect();
        let vars: Vec<f64> = halves
            .iter()
            .zip(&means)
            .map(|(h, &mu)| h.iter().map(|s| (s[d] - mu).powi(2)).sum::<f64>() / (len - 1.0))
            .collect();
        let grand = means.iter().sum::<f64>() / m;
        let b = len / (m - 1.0) * means.iter().map(|mu| (mu - grand).powi(2)).sum::<f64>();
        let w = vars.iter().sum::<f64>() / m;
        if w > 0.0 {
            let var_plus = (len - 1.0) / len * w + b / len;
            worst = worst.max((var_plus / w).sqrt());
        }
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeedTree;
    use crate::tasks::TaskName;

    #[test]
    fn zero_samples_is_empty() {
        let task = Task::new(TaskName::TwoMoons);
        let r = reference_posterior(&task, &[0.0, 0.0], 0, &ReferenceConfig::default(), &mut SeedTree::new(0).rng())
            .unwrap();
        assert!(r.samples.is_empty());
    }

    #[test]
    fn impossible_observation_fails_initialization() {
        let task = Task::new(TaskName::TwoMoons);
        let cfg = ReferenceConfig { candidates: 50, ..Default::default() };
        let r = reference_posterior(&task, &[-50.0, 0.0], 10, &cfg, &mut SeedTree::new(0).rng());
        assert!(matches!(r, Err(Error::InitializationFailure { .. })));
    }
}
