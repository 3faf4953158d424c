use super::{l2, weighted_param_grad, Energy, TrainConfig, TrainLogRow, TrainMode, TrainableEnergy};
use crate::error::{invalid, Error, Result};
use crate::nn::{AdamConfig, AdamState};
use crate::rng::Rng;
use crate::samplers::{run_chains, smc_run, systematic_resample, Bound, ParticleCloud, UnnormalizedTarget};
use crate::tasks::{Dataset, Prior};

/// The tilted joint density `pi(theta) exp(-E(x, theta))` on `z = [x ; theta]`.
pub struct JointTarget<'a, E: ?Sized> {
    energy: &'a E,
    prior: &'a Prior,
    bounds: Option<Vec<Bound<f64>>>,
}

impl<'a, E: Energy + ?Sized> JointTarget<'a, E> {
    pub fn new(energy: &'a E, prior: &'a Prior) -> Self {
        let bounds = prior.is_bounded().then(|| {
            let mut b = vec![Bound::Free; energy.x_dim()];
            b.extend_from_slice(prior.bounds());
            b
        });
        JointTarget { energy, prior, bounds }
    }
}

impl<E: Energy + ?Sized> UnnormalizedTarget<f64> for JointTarget<'_, E> {
    fn dim(&self) -> usize {
        self.energy.x_dim() + self.energy.theta_dim()
    }

    fn log_density(&self, z: &[f64]) -> f64 {
        let (x, theta) = z.split_at(self.energy.x_dim());
        super::joint_tilted_logpdf(self.energy, self.prior, x, theta)
    }

    fn log_density_and_grad(&self, z: &[f64], grad: &mut [f64]) -> f64 {
        let dx = self.energy.x_dim();
        let (x, theta) = z.split_at(dx);
        let (gx, gt) = grad.split_at_mut(dx);
        let lp = self.prior.log_pdf_and_grad(theta, gt);
        if !lp.is_finite() {
            return f64::NEG_INFINITY;
        }
        let mut et = vec![0.0; theta.len()];
        let e = self.energy.energy_and_grads(x, theta, gx, &mut et);
        gx.iter_mut().for_each(|g| *g = -*g);
        gt.iter_mut().zip(&et).for_each(|(g, d)| *g -= d);
        lp - e
    }

    fn support(&self) -> Option<&[Bound<f64>]> {
        self.bounds.as_deref()
    }
}

/// Log-likelihood gradient terms at fixed particles.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientEstimate {
    /// `(1/N) sum_i dE(x_i, theta_i)/dpsi` over the data.
    pub data_term: Vec<f64>,
    /// `sum_j W_j dE(z_j)/dpsi` over the weighted particles.
    pub model_term: Vec<f64>,
    /// Gradient of the negative log-likelihood, `data_term - model_term`.
    pub grad: Vec<f64>,
}

/// Maximum-likelihood gradient of the joint model with the model expectation
/// taken under the weighted `cloud` over `[x ; theta]`.
pub fn gradient_estimate<E: TrainableEnergy>(energy: &E, data: &Dataset, cloud: &ParticleCloud<f64>) -> GradientEstimate {
    let n = data.len();
    let dx = energy.x_dim();
    let data_term = weighted_param_grad(energy, n, |i| (1.0 / n as f64, data.xs[i].clone(), data.thetas[i].clone()));
    let model_term = weighted_param_grad(energy, cloud.len(), |j| {
        let (x, t) = cloud.positions[j].split_at(dx);
        (cloud.weights[j], x.to_vec(), t.to_vec())
    });
    let grad = data_term.iter().zip(&model_term).map(|(a, b)| a - b).collect();
    GradientEstimate { data_term, model_term, grad }
}

/// Persistent-particle trainer of the tilted joint model.
///
/// The particle cloud starts at the data and is carried from one iteration
/// to the next; in smc mode each refresh bridges from the previous
/// iteration's density to the current one.
pub struct JointTrainer<'a, E> {
    pub energy: E,
    pub adam: AdamState<f64>,
    pub cloud: ParticleCloud<f64>,
    /// Energy the current cloud was last moved toward.
    previous: Option<E>,
    data: &'a Dataset,
    prior: &'a Prior,
    config: TrainConfig,
    pub iteration: usize,
    pub log: Vec<TrainLogRow>,
}

impl<'a, E: TrainableEnergy> JointTrainer<'a, E> {
    pub fn new(data: &'a Dataset, e0: E, prior: &'a Prior, config: TrainConfig, rng: &mut Rng) -> Result<Self> {
        config.validate()?;
        if data.is_empty() {
            return Err(invalid("training needs a non-empty dataset"));
        }
        if data.x_dim() != e0.x_dim() || data.theta_dim() != e0.theta_dim() || prior.dim() != e0.theta_dim() {
            return Err(invalid("dataset, prior and energy dimensions disagree"));
        }
        let idx = systematic_resample(&vec![1.0; data.len()], config.n_particles, rng);
        let positions = idx.into_iter().map(|i| data.joint(i)).collect();
        let cloud = ParticleCloud::uniform(positions, config.initial_step_size)?;
        let adam = AdamState::new(e0.params().len(), AdamConfig::with_learning_rate(config.learning_rate));
        Ok(JointTrainer { energy: e0, adam, cloud, previous: None, data, prior, config, iteration: 0, log: Vec::new() })
    }

    /// Refreshes the particles toward the current model, then takes one Adam step.
    pub fn step(&mut self, rng: &mut Rng) -> Result<TrainLogRow> {
        let k = self.iteration;
        let target = JointTarget::new(&self.energy, self.prior);
        let (mean_acceptance, ess) = match (&self.previous, self.config.mode) {
            (Some(prev), TrainMode::Smc) => {
                let initial = JointTarget::new(prev, self.prior);
                let out = smc_run(&target, &initial, &self.cloud, &self.config.smc, rng)
                    .map_err(|e| Error::TrainingFailure { iteration: k, reason: e.to_string() })?;
                self.cloud = out.cloud;
                (out.diagnostics.mean_acceptance(), Some(self.cloud.ess()))
            }
            _ => {
                let warmup = if k == 0 { self.config.warmup_steps } else { self.config.rewarm_steps };
                let (cloud, diag) = run_chains(&target, &self.cloud, self.config.mcmc_steps, warmup, rng)
                    .map_err(|e| Error::TrainingFailure { iteration: k, reason: e.to_string() })?;
                self.cloud = cloud;
                let ess = (self.config.mode == TrainMode::Smc).then(|| self.cloud.ess());
                (diag.mean_acceptance(), ess)
            }
        };
        if self.cloud.positions.iter().all(|z| !target.log_density(z).is_finite()) {
            return Err(Error::TrainingFailure { iteration: k, reason: "all particles have non-finite energy".into() });
        }
        let est = gradient_estimate(&self.energy, self.data, &self.cloud);
        if est.grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::TrainingFailure { iteration: k, reason: "non-finite gradient".into() });
        }
        self.previous = Some(self.energy.clone());
        self.adam.step(self.energy.params_mut(), &est.grad)?;
        let row = TrainLogRow {
            iter: k,
            data_term_norm: l2(&est.data_term),
            model_term_norm: l2(&est.model_term),
            mean_acceptance,
            ess,
        };
        self.log.push(row);
        self.iteration += 1;
        Ok(row)
    }

    pub fn finish(self) -> JointFit<E> {
        JointFit { energy: self.energy, cloud: self.cloud, adam: self.adam, log: self.log }
    }
}

/// Result of [`maximize_ebm_log_l`].
#[derive(Debug, Clone)]
pub struct JointFit<E> {
    pub energy: E,
    pub cloud: ParticleCloud<f64>,
    pub adam: AdamState<f64>,
    pub log: Vec<TrainLogRow>,
}

/// Fits the tilted joint model `pi(theta) exp(-E(x, theta))` to `data` by
/// `max_iter` Adam steps on the persistent-particle likelihood gradient.
pub fn maximize_ebm_log_l<E: TrainableEnergy>(
    data: &Dataset,
    e0: E,
    prior: &Prior,
    config: &TrainConfig,
    rng: &mut Rng,
) -> Result<JointFit<E>> {
    let mut trainer = JointTrainer::new(data, e0, prior, *config, rng)?;
    for _ in 0..config.max_iter {
        trainer.step(rng)?;
    }
    Ok(trainer.finish())
}
