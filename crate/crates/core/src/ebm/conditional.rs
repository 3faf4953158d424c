use rand::seq::index::sample as sample_indices;
use rayon::prelude::*;

use super::{l2, weighted_param_grad, ConditionalTarget, TrainConfig, TrainLogRow, TrainableEnergy};
use crate::error::{invalid, Error, Result};
use crate::nn::{AdamConfig, AdamState};
use crate::rng::{fork, Rng};
use crate::samplers::{adapt_step, mala_step, ChainState, TARGET_ACCEPTANCE};
use crate::tasks::Dataset;

/// Persistent particle `x~_i` of the conditional density `q(. | theta_i)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Slot {
    pub x: Vec<f64>,
    pub step_size: f64,
    /// Whether the slot's step size has gone through its warmup.
    pub adapted: bool,
}

/// Conditional EBM trainer with one persistent particle per data point.
///
/// Each iteration refreshes a random batch of slots by MALA on
/// `x -> -E(x, theta_i)` (theta held fixed) and takes one Adam step on the
/// batch estimate of the average conditional log-likelihood gradient.
#[derive(Debug, Clone)]
pub struct CondTrainer<E> {
    pub energy: E,
    pub adam: AdamState<f64>,
    pub slots: Vec<Slot>,
    config: TrainConfig,
    pub iteration: usize,
    pub log: Vec<TrainLogRow>,
}

/// Refreshed batch of one iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct Refresh {
    pub batch: Vec<usize>,
    pub row: TrainLogRow,
}

impl<E: TrainableEnergy> CondTrainer<E> {
    pub fn new(e0: E, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let adam = AdamState::new(e0.params().len(), AdamConfig::with_learning_rate(config.learning_rate));
        Ok(CondTrainer { energy: e0, adam, slots: Vec::new(), config, iteration: 0, log: Vec::new() })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    /// Replaces the loop settings while keeping parameters, optimizer moments and slots.
    pub fn set_config(&mut self, config: TrainConfig) -> Result<()> {
        config.validate()?;
        self.adam.config.learning_rate = config.learning_rate;
        self.config = config;
        Ok(())
    }

    /// Adds slots, initialized at the data, for pairs beyond the current slot count.
    pub fn extend_slots(&mut self, data: &Dataset) {
        for x in data.xs.iter().skip(self.slots.len()) {
            self.slots.push(Slot { x: x.clone(), step_size: self.config.initial_step_size, adapted: false });
        }
    }

    /// One training iteration over `data`; slots for new data are created first.
    pub fn step(&mut self, data: &Dataset, rng: &mut Rng) -> Result<TrainLogRow> {
        Ok(self.step_with_batch(data, rng)?.row)
    }

    pub fn step_with_batch(&mut self, data: &Dataset, rng: &mut Rng) -> Result<Refresh> {
        let n = data.len();
        if n == 0 {
            return Err(invalid("training needs a non-empty dataset"));
        }
        if data.x_dim() != self.energy.x_dim() || data.theta_dim() != self.energy.theta_dim() {
            return Err(invalid("dataset and energy dimensions disagree"));
        }
        self.extend_slots(data);
        let k = self.iteration;
        let b = self.config.effective_batch(n);
        let mut batch = if b == n { (0..n).collect() } else { sample_indices(rng, n, b).into_vec() };
        batch.sort_unstable();

        let streams = fork(rng);
        let cfg = self.config;
        let energy = &self.energy;
        let refreshed: Vec<(Slot, usize, usize, bool)> = batch
            .par_iter()
            .map(|&i| {
                let slot = &self.slots[i];
                let target = ConditionalTarget { energy, theta: &data.thetas[i] };
                let mut r = streams.child(i as u64).rng();
                match ChainState::new(&target, slot.x.clone(), slot.step_size) {
                    Ok(mut st) => {
                        let warmup = if slot.adapted { cfg.rewarm_steps } else { cfg.warmup_steps };
                        {
                            for _ in 0..warmup {
                                mala_step(&target, &mut st, &mut r);
                                adapt_step(&mut st, TARGET_ACCEPTANCE);
                            }
                        }
                        for _ in 0..cfg.mcmc_steps {
                            mala_step(&target, &mut st, &mut r);
                        }
                        let slot = Slot { x: st.position, step_size: st.step_size, adapted: true };
                        (slot, st.accepted, st.proposed, true)
                    }
                    Err(_) => (slot.clone(), 0, 0, false),
                }
            })
            .collect();
        if refreshed.iter().all(|r| !r.3) {
            return Err(Error::TrainingFailure { iteration: k, reason: "every refreshed particle has a non-finite energy".into() });
        }
        let (mut acc, mut prop) = (0usize, 0usize);
        for (&i, (slot, a, p, _)) in batch.iter().zip(refreshed) {
            self.slots[i] = slot;
            acc += a;
            prop += p;
        }

        let w = 1.0 / b as f64;
        let data_term =
            weighted_param_grad(&self.energy, b, |j| (w, data.xs[batch[j]].clone(), data.thetas[batch[j]].clone()));
        let model_term = weighted_param_grad(&self.energy, b, |j| {
            (w, self.slots[batch[j]].x.clone(), data.thetas[batch[j]].clone())
        });
        let grad: Vec<f64> = data_term.iter().zip(&model_term).map(|(a, m)| a - m).collect();
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::TrainingFailure { iteration: k, reason: "non-finite gradient".into() });
        }
        self.adam.step(self.energy.params_mut(), &grad)?;
        let row = TrainLogRow {
            iter: k,
            data_term_norm: l2(&data_term),
            model_term_norm: l2(&model_term),
            mean_acceptance: if prop == 0 { 0.0 } else { acc as f64 / prop as f64 },
            ess: None,
        };
        self.log.push(row);
        self.iteration += 1;
        Ok(Refresh { batch, row })
    }

    pub fn finish(self) -> CondFit<E> {
        CondFit { energy: self.energy, slots: self.slots, adam: self.adam, log: self.log }
    }
}

/// Result of [`maximize_cebm_log_l`].
#[derive(Debug, Clone)]
pub struct CondFit<E> {
    pub energy: E,
    pub slots: Vec<Slot>,
    pub adam: AdamState<f64>,
    pub log: Vec<TrainLogRow>,
}

/// Maximizes the average conditional log-likelihood `(1/N) sum_i log q(x_i | theta_i)`.
pub fn maximize_cebm_log_l<E: TrainableEnergy>(
    data: &Dataset,
    e0: E,
    config: &TrainConfig,
    rng: &mut Rng,
) -> Result<CondFit<E>> {
    let mut trainer = CondTrainer::new(e0, *config)?;
    if data.is_empty() {
        return Err(invalid("training needs a non-empty dataset"));
    }
    trainer.extend_slots(data);
    for _ in 0..config.max_iter {
        trainer.step(data, rng)?;
    }
    Ok(trainer.finish())
}
