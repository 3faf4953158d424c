//! Exchange-algorithm MCMC for posteriors `p(theta) exp(-E(x_o, theta)) / Z(theta)`.
//!
//! The exact auxiliary draw from the likelihood is replaced by a short MALA
//! chain on `x -> -E(x, theta')`, warm-started from the previous auxiliary state.
//! An inner chain that accepts no move rejects the proposal and is restarted
//! at the observation.

use rand::Rng as _;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use super::mala::{adapt_step, mala_step, ChainState, SamplerDiagnostics, ADAPT_GAIN};
use super::target::UnnormalizedTarget;
use crate::error::{invalid, Error, Result};
use crate::rng::{fork, Rng};
use crate::scalar::Scalar;

/// Acceptance rate the random-walk proposal scale is tuned to during burn-in.
pub const EXCHANGE_TARGET_ACCEPTANCE: f64 = 0.234;

/// Acceptance rate the auxiliary MALA step size is tuned to. Tuning to 0.5
/// drives 1-D Gaussian chains to the reflection regime `sigma ~ 2`, where
/// they decorrelate slowly.
pub const AUX_TARGET_ACCEPTANCE: f64 = 0.574;

/// A posterior whose likelihood is known only up to a `theta`-dependent normalizer.
pub trait DoublyIntractable<S: Scalar>: Sync {
    fn theta_dim(&self) -> usize;

    fn x_dim(&self) -> usize;

    /// Log prior density; `-inf` outside the support.
    fn log_prior(&self, theta: &[S]) -> S;

    fn energy(&self, x: &[S], theta: &[S]) -> S;

    /// Energy and its gradient in `x`.
    fn energy_and_grad_x(&self, x: &[S], theta: &[S], grad_x: &mut [S]) -> S;

    fn observation(&self) -> &[S];
}

/// `x -> -E(x, theta)` at fixed `theta`.
pub struct ConditionalLikelihood<'a, S, P: ?Sized> {
    pub model: &'a P,
    pub theta: &'a [S],
}

impl<S: Scalar, P: DoublyIntractable<S> + ?Sized> UnnormalizedTarget<S> for ConditionalLikelihood<'_, S, P> {
    fn dim(&self) -> usize {
        self.model.x_dim()
    }

    fn log_density(&self, x: &[S]) -> S {
        -self.model.energy(x, self.theta)
    }

    fn log_density_and_grad(&self, x: &[S], grad: &mut [S]) -> S {
        let e = self.model.energy_and_grad_x(x, self.theta, grad);
        grad.iter_mut().for_each(|g| *g = -*g);
        -e
    }
}

/// State of one exchange chain, including its persistent auxiliary chain.
#[derive(Debug, Clone)]
pub struct ExchangeChain<S> {
    pub theta: Vec<S>,
    log_prior: S,
    energy_obs: S,
    pub aux_position: Vec<S>,
    pub aux_step_size: S,
    pub proposal_scale: Vec<S>,
    pub inner_steps: usize,
    pub accepted: usize,
    pub proposed: usize,
    pub rejected_out_of_support: usize,
}

impl<S: Scalar> ExchangeChain<S> {
    pub fn new<P: DoublyIntractable<S> + ?Sized>(
        model: &P,
        theta: Vec<S>,
        aux_position: Vec<S>,
        proposal_scale: Vec<S>,
        inner_steps: usize,
    ) -> Result<Self> {
        if inner_steps == 0 {
            return Err(invalid("exchange sampler needs at least one inner step"));
        }
        if theta.len() != model.theta_dim() || proposal_scale.len() != theta.len() {
            return Err(invalid("theta or proposal scale has the wrong dimension"));
        }
        if aux_position.len() != model.x_dim() {
            return Err(invalid("auxiliary state has the wrong dimension"));
        }
        let log_prior = model.log_prior(&theta);
        let energy_obs = model.energy(model.observation(), &theta);
        if !log_prior.is_finite() || !energy_obs.is_finite() {
            return Err(Error::SamplerFailure(format!("non-finite posterior at initial theta {theta:?}")));
        }
        Ok(ExchangeChain {
            theta,
            log_prior,
            energy_obs,
            aux_position,
            aux_step_size: S::of(0.1),
            proposal_scale,
            inner_steps,
            accepted: 0,
            proposed: 0,
            rejected_out_of_support: 0,
        })
    }

    pub fn acceptance_rate(&self) -> f64 {
        if self.proposed == 0 {
            0.0
        } else {
            self.accepted as f64 / self.proposed as f64
        }
    }

    /// One exchange update. With `adapt`, the proposal scale is tuned toward
    /// 0.234 acceptance and the auxiliary MALA step size toward 0.574.
    /// Returns whether the proposal was accepted.
    pub fn step<P: DoublyIntractable<S> + ?Sized>(&mut self, model: &P, rng: &mut Rng, adapt: bool) -> bool {
        let proposal: Vec<S> = self
            .theta
            .iter()
            .zip(&self.proposal_scale)
            .map(|(&t, &s)| {
                let z: f64 = rng.sample(StandardNormal);
                t + s * S::of(z)
            })
            .collect();
        self.proposed += 1;
        let lp_new = model.log_prior(&proposal);
        let accepted = if !lp_new.is_finite() {
            self.rejected_out_of_support += 1;
            false
        } else {
            self.exchange_move(model, proposal, lp_new, rng, adapt)
        };
        if accepted {
            self.accepted += 1;
        }
        if adapt {
            let rate = if accepted { 1.0 } else { 0.0 };
            let f = S::of((ADAPT_GAIN * (rate - EXCHANGE_TARGET_ACCEPTANCE)).exp());
            self.proposal_scale.iter_mut().for_each(|s| *s *= f);
        }
        accepted
    }

    fn exchange_move<P: DoublyIntractable<S> + ?Sized>(
        &mut self,
        model: &P,
        proposal: Vec<S>,
        lp_new: S,
        rng: &mut Rng,
        adapt: bool,
    ) -> bool {
        let e_obs_new = model.energy(model.observation(), &proposal);
        if !e_obs_new.is_finite() {
            return false;
        }
        // auxiliary draw x' ~ q(. | theta') by warm-started MALA
        let lik = ConditionalLikelihood { model, theta: &proposal };
        let mut aux = match ChainState::new(&lik, self.aux_position.clone(), self.aux_step_size) {
            Ok(st) => st,
            Err(_) => return false,
        };
        for _ in 0..self.inner_steps {
            mala_step(&lik, &mut aux, rng);
            if adapt {
                adapt_step(&mut aux, AUX_TARGET_ACCEPTANCE);
            }
        }
        self.aux_step_size = aux.step_size;
        if aux.accepted == 0 {
            // a frozen auxiliary chain no longer tracks q(. | theta'); restart it at the observation
            self.aux_position = model.observation().to_vec();
            return false;
        }
        let e_aux_new = -aux.log_density();
        let x_aux = aux.position;
        let e_aux_cur = model.energy(&x_aux, &self.theta);
        self.aux_position = x_aux;
        if !e_aux_cur.is_finite() || !e_aux_new.is_finite() {
            return false;
        }
        let log_alpha = (lp_new - self.log_prior) + (self.energy_obs - e_obs_new) + (e_aux_new - e_aux_cur);
        let u: f64 = rng.random();
        if u.ln() < log_alpha.as_f64() {
            self.theta = proposal;
            self.log_prior = lp_new;
            self.energy_obs = e_obs_new;
            true
        } else {
            false
        }
    }
}

/// Functional single update: advances `chain` and returns the new `theta`.
pub fn exchange_step<S: Scalar, P: DoublyIntractable<S> + ?Sized>(
    model: &P,
    chain: &mut ExchangeChain<S>,
    rng: &mut Rng,
) -> Vec<S> {
    chain.step(model, rng, false);
    chain.theta.clone()
}

/// Runs independent exchange chains: `burn_in` adaptive steps, then `n_keep`
/// samples per chain taken every `thin` steps. Chains are advanced in place so
/// callers can warm-start later runs from them.
pub fn run_exchange_chains<S: Scalar, P: DoublyIntractable<S> + ?Sized>(
    model: &P,
    chains: &mut [ExchangeChain<S>],
    burn_in: usize,
    n_keep: usize,
    thin: usize,
    rng: &mut Rng,
) -> (Vec<Vec<Vec<S>>>, SamplerDiagnostics) {
    let streams = fork(rng);
    let thin = thin.max(1);
    let samples: Vec<Vec<Vec<S>>> = chains
        .par_iter_mut()
        .enumerate()
        .map(|(i, chain)| {
            let mut r = streams.child(i as u64).rng();
            for _ in 0..burn_in {
                chain.step(model, &mut r, true);
            }
            let mut kept = Vec::with_capacity(n_keep);
            for _ in 0..n_keep {
                for _ in 0..thin {
                    chain.step(model, &mut r, false);
                }
                kept.push(chain.theta.clone());
            }
            kept
        })
        .collect();
    let diagnostics = SamplerDiagnostics {
        acceptance_rates: chains.iter().map(ExchangeChain::acceptance_rate).collect(),
        final_step_sizes: chains.iter().map(|c| c.aux_step_size.as_f64()).collect(),
        ..Default::default()
    };
    (samples, diagnostics)
}
