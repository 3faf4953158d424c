use rand::Rng as _;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::cloud::ParticleCloud;
use super::target::{Unconstrained, UnnormalizedTarget};
use crate::error::{invalid, Error, Result};
use crate::rng::{fork, Rng};
use crate::scalar::Scalar;

/// Multiplicative gain of the step-size controller.
pub const ADAPT_GAIN: f64 = 0.05;

/// Acceptance rate the MALA step-size controller aims for.
pub const TARGET_ACCEPTANCE: f64 = 0.5;

/// One MALA chain: position with cached log-density and gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainState<S> {
    pub position: Vec<S>,
    log_density: S,
    grad: Vec<S>,
    pub step_size: S,
    window_accepted: usize,
    window_proposed: usize,
    pub accepted: usize,
    pub proposed: usize,
    pub frozen: bool,
}

impl<S: Scalar> ChainState<S> {
    pub fn new<T: UnnormalizedTarget<S> + ?Sized>(target: &T, position: Vec<S>, step_size: S) -> Result<Self> {
        if !(step_size > S::zero()) {
            return Err(invalid("step size must be positive"));
        }
        if position.len() != target.dim() {
            return Err(invalid("chain position has the wrong dimension"));
        }
        let mut grad = vec![S::zero(); position.len()];
        let log_density = target.log_density_and_grad(&position, &mut grad);
        if !log_density.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::SamplerFailure(format!(
                "non-finite log-density or gradient at initial position {:?}",
                position
            )));
        }
        Ok(ChainState {
            position,
            log_density,
            grad,
            step_size,
            window_accepted: 0,
            window_proposed: 0,
            accepted: 0,
            proposed: 0,
            frozen: false,
        })
    }

    pub fn log_density(&self) -> S {
        self.log_density
    }

    /// Re-evaluates the cache against a (possibly different) target.
    pub fn retarget<T: UnnormalizedTarget<S> + ?Sized>(&mut self, target: &T) -> Result<()> {
        self.log_density = target.log_density_and_grad(&self.position, &mut self.grad);
        if !self.log_density.is_finite() || self.grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::SamplerFailure("non-finite log-density after retargeting".into()));
        }
        Ok(())
    }

    pub fn acceptance_rate(&self) -> f64 {
        if self.proposed == 0 {
            0.0
        } else {
            self.accepted as f64 / self.proposed as f64
        }
    }
}

fn log_proposal<S: Scalar>(to: &[S], from: &[S], grad_from: &[S], sigma: S) -> S {
    let half_s2 = sigma * sigma * S::half();
    let mut sq = S::zero();
    for i in 0..to.len() {
        let d = to[i] - from[i] - half_s2 * grad_from[i];
        sq += d * d;
    }
    -sq / (S::two() * sigma * sigma)
}

/// One Metropolis-adjusted Langevin update in place. Returns whether the move was accepted.
///
/// Proposals with a non-finite density or gradient are rejected and counted.
pub fn mala_step<S: Scalar, T: UnnormalizedTarget<S> + ?Sized>(
    target: &T,
    state: &mut ChainState<S>,
    rng: &mut Rng,
) -> bool {
    let sigma = state.step_size;
    let half_s2 = sigma * sigma * S::half();
    let proposal: Vec<S> = state
        .position
        .iter()
        .zip(&state.grad)
        .map(|(&x, &g)| {
            let z: f64 = rng.sample(StandardNormal);
            x + half_s2 * g + sigma * S::of(z)
        })
        .collect();
    let mut grad_new = vec![S::zero(); proposal.len()];
    let lp_new = target.log_density_and_grad(&proposal, &mut grad_new);
    let u: f64 = rng.random();

    state.proposed += 1;
    state.window_proposed += 1;
    if !lp_new.is_finite() || grad_new.iter().any(|g| !g.is_finite()) {
        return false;
    }
    let log_alpha = lp_new - state.log_density + log_proposal(&state.position, &proposal, &grad_new, sigma)
        - log_proposal(&proposal, &state.position, &state.grad, sigma);
    if u.ln() < log_alpha.as_f64() {
        state.position = proposal;
        state.grad = grad_new;
        state.log_density = lp_new;
        state.accepted += 1;
        state.window_accepted += 1;
        true
    } else {
        false
    }
}

/// Multiplicative step-size update toward `target_rate`; resets the window counters.
/// Frozen chains are left untouched.
pub fn adapt_step<S: Scalar>(state: &mut ChainState<S>, target_rate: f64) {
    if state.frozen {
        return;
    }
    if state.window_proposed > 0 {
        let rate = state.window_accepted as f64 / state.window_proposed as f64;
        state.step_size *= S::of((ADAPT_GAIN * (rate - target_rate)).exp());
    }
    state.window_accepted = 0;
    state.window_proposed = 0;
}

/// Warmup with per-step adaptation, then freeze and run `steps` more moves.
/// Every `thin`-th post-warmup position is passed to `keep`.
pub fn evolve<S: Scalar, T: UnnormalizedTarget<S> + ?Sized>(
    target: &T,
    state: &mut ChainState<S>,
    warmup: usize,
    steps: usize,
    rng: &mut Rng,
    thin: usize,
    mut keep: impl FnMut(&[S]),
) {
    for _ in 0..warmup {
        mala_step(target, state, rng);
        adapt_step(state, TARGET_ACCEPTANCE);
    }
    if warmup > 0 {
        state.frozen = true;
    }
    let thin = thin.max(1);
    for s in 1..=steps {
        mala_step(target, state, rng);
        if s % thin == 0 {
            keep(&state.position);
        }
    }
}

/// Summary of a batch of chains, written out as JSON.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SamplerDiagnostics {
    pub acceptance_rates: Vec<f64>,
    pub final_step_sizes: Vec<f64>,
    pub ess_trajectory: Vec<f64>,
    pub resample_count: usize,
    pub diverged: usize,
}

impl SamplerDiagnostics {
    pub fn mean_acceptance(&self) -> f64 {
        if self.acceptance_rates.is_empty() {
            0.0
        } else {
            self.acceptance_rates.iter().sum::<f64>() / self.acceptance_rates.len() as f64
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Output of [`run_chains_collect`].
#[derive(Debug, Clone)]
pub struct ChainRun<S> {
    pub cloud: ParticleCloud<S>,
    /// Kept post-warmup positions, one list per chain.
    pub samples: Vec<Vec<Vec<S>>>,
    pub diagnostics: SamplerDiagnostics,
}

/// Evolves every particle of `init` as an independent MALA chain.
///
/// Chains adapt their step size during `warmup_steps`, then freeze. The
/// output cloud has uniform weights; its step sizes are the adapted ones.
pub fn run_chains<S: Scalar, T: UnnormalizedTarget<S> + ?Sized>(
    target: &T,
    init: &ParticleCloud<S>,
    n_steps: usize,
    warmup_steps: usize,
    rng: &mut Rng,
) -> Result<(ParticleCloud<S>, SamplerDiagnostics)> {
    let run = run_chains_collect(target, init, n_steps, warmup_steps, 0, rng)?;
    Ok((run.cloud, run.diagnostics))
}

/// Like [`run_chains`], also keeping every `thin`-th post-warmup position
/// (nothing is kept when `thin == 0`).
pub fn run_chains_collect<S: Scalar, T: UnnormalizedTarget<S> + ?Sized>(
    target: &T,
    init: &ParticleCloud<S>,
    n_steps: usize,
    warmup_steps: usize,
    thin: usize,
    rng: &mut Rng,
) -> Result<ChainRun<S>> {
    if init.is_empty() {
        return Err(invalid("run_chains needs at least one chain"));
    }
    let view = Unconstrained::new(target);
    let transform = view.transform().clone();
    let streams = fork(rng);
    let results: Vec<(Vec<S>, S, f64, bool, Vec<Vec<S>>)> = init
        .positions
        .par_iter()
        .zip(&init.step_sizes)
        .enumerate()
        .map(|(i, (pos, &sigma))| {
            let mut chain_rng = streams.child(i as u64).rng();
            let u = transform.to_unconstrained(pos);
            match ChainState::new(&view, u, sigma) {
                Ok(mut st) => {
                    let mut kept = Vec::new();
                    if thin > 0 {
                        evolve(&view, &mut st, warmup_steps, n_steps, &mut chain_rng, thin, |p| {
                            kept.push(transform.to_constrained(p))
                        });
                    } else {
                        evolve(&view, &mut st, warmup_steps, n_steps, &mut chain_rng, 1, |_| {});
                    }
                    let x = transform.to_constrained(&st.position);
                    let ok = x.iter().all(|v| v.is_finite());
                    let pos = if ok { x } else { pos.clone() };
                    (pos, st.step_size, st.acceptance_rate(), ok, kept)
                }
                Err(_) => (pos.clone(), sigma, 0.0, false, Vec::new()),
            }
        })
        .collect();

    let diverged = results.iter().filter(|r| !r.3).count();
    if diverged == results.len() {
        return Err(Error::SamplerFailure(format!(
            "all {diverged} chains have a non-finite log-density"
        )));
    }
    let mut diagnostics = SamplerDiagnostics { diverged, ..Default::default() };
    let mut positions = Vec::with_capacity(results.len());
    let mut step_sizes = Vec::with_capacity(results.len());
    let mut samples = Vec::with_capacity(results.len());
    for (p, s, acc, _, kept) in results {
        positions.push(p);
        step_sizes.push(s);
        diagnostics.acceptance_rates.push(acc);
        diagnostics.final_step_sizes.push(s.as_f64());
        samples.push(kept);
    }
    let n = positions.len();
    let cloud = ParticleCloud { positions, weights: vec![S::one() / S::of(n as f64); n], step_sizes };
    Ok(ChainRun { cloud, samples, diagnostics })
}
