//! Energy-based likelihood models and their maximum-likelihood training loops.

mod conditional;
mod joint;
mod log;

use rayon::prelude::*;

pub use conditional::{maximize_cebm_log_l, CondFit, CondTrainer, Refresh, Slot};
pub use joint::{gradient_estimate, maximize_ebm_log_l, GradientEstimate, JointFit, JointTarget, JointTrainer};
pub use log::{read_train_log_csv, write_train_log_csv, TrainLogRow};

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::nn::{Activation, NetParams};
use crate::rng::Rng;
use crate::samplers::{SmcConfig, UnnormalizedTarget};
use crate::tasks::Prior;

/// A conditional energy `E(x, theta)`.
pub trait Energy: Sync {
    fn x_dim(&self) -> usize;

    fn theta_dim(&self) -> usize;

    fn energy(&self, x: &[f64], theta: &[f64]) -> f64;

    /// Energy with its gradients in `x` and `theta`.
    fn energy_and_grads(&self, x: &[f64], theta: &[f64], grad_x: &mut [f64], grad_theta: &mut [f64]) -> f64;
}

/// An energy with a flat trainable parameter vector.
pub trait TrainableEnergy: Energy + Clone + Send {
    fn params(&self) -> &[f64];

    fn params_mut(&mut self) -> &mut [f64];

    /// Adds `scale * dE(x, theta) / dparams` into `acc` and returns the energy.
    fn accumulate_param_grad(&self, x: &[f64], theta: &[f64], scale: f64, acc: &mut [f64]) -> f64;
}

impl<E: Energy + ?Sized> Energy for &E {
    fn x_dim(&self) -> usize {
        (**self).x_dim()
    }

    fn theta_dim(&self) -> usize {
        (**self).theta_dim()
    }

    fn energy(&self, x: &[f64], theta: &[f64]) -> f64 {
        (**self).energy(x, theta)
    }

    fn energy_and_grads(&self, x: &[f64], theta: &[f64], gx: &mut [f64], gt: &mut [f64]) -> f64 {
        (**self).energy_and_grads(x, theta, gx, gt)
    }
}

/// Energy network on the concatenation `[x ; theta]` with a scalar output.
#[derive(Debug, Clone, PartialEq)]
pub struct EnergyModel {
    pub net: NetParams<f64>,
    x_dim: usize,
    theta_dim: usize,
}

/// Hidden widths of the default energy network: four layers of 50 units.
pub const DEFAULT_HIDDEN: [usize; 4] = [50, 50, 50, 50];

impl EnergyModel {
    pub fn new(x_dim: usize, theta_dim: usize, hidden: &[usize], activation: Activation, rng: &mut Rng) -> Result<Self> {
        let mut sizes = vec![x_dim + theta_dim];
        sizes.extend_from_slice(hidden);
        sizes.push(1);
        Self::from_net(NetParams::init(&sizes, activation, rng)?, x_dim, theta_dim)
    }

    /// Default swish network with [`DEFAULT_HIDDEN`] widths.
    pub fn default_arch(x_dim: usize, theta_dim: usize, rng: &mut Rng) -> Result<Self> {
        Self::new(x_dim, theta_dim, &DEFAULT_HIDDEN, Activation::Swish, rng)
    }

    pub fn from_net(net: NetParams<f64>, x_dim: usize, theta_dim: usize) -> Result<Self> {
        if net.input_dim() != x_dim + theta_dim || net.output_dim() != 1 {
            return Err(invalid(format!(
                "energy net must map {} inputs to a scalar, got {} -> {}",
                x_dim + theta_dim,
                net.input_dim(),
                net.output_dim()
            )));
        }
        Ok(EnergyModel { net, x_dim, theta_dim })
    }

    fn joint_input(&self, x: &[f64], theta: &[f64]) -> Vec<f64> {
        let mut z = Vec::with_capacity(self.x_dim + self.theta_dim);
        z.extend_from_slice(x);
        z.extend_from_slice(theta);
        z
    }

    pub fn to_json(&self) -> Result<String> {
        #[derive(Serialize)]
        struct Ckpt<'a> {
            x_dim: usize,
            theta_dim: usize,
            net: &'a crate::nn::NetDocument,
        }
        let doc = self.net.to_document();
        Ok(serde_json::to_string(&Ckpt { x_dim: self.x_dim, theta_dim: self.theta_dim, net: &doc })?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        #[derive(Deserialize)]
        struct Ckpt {
            x_dim: usize,
            theta_dim: usize,
            net: crate::nn::NetDocument,
        }
        let c: Ckpt = serde_json::from_str(s)?;
        Self::from_net(NetParams::from_document(&c.net)?, c.x_dim, c.theta_dim)
    }
}

impl Energy for EnergyModel {
    fn x_dim(&self) -> usize {
        self.x_dim
    }

    fn theta_dim(&self) -> usize {
        self.theta_dim
    }

    fn energy(&self, x: &[f64], theta: &[f64]) -> f64 {
        self.net.eval_scalar(&self.joint_input(x, theta))
    }

    fn energy_and_grads(&self, x: &[f64], theta: &[f64], grad_x: &mut [f64], grad_theta: &mut [f64]) -> f64 {
        let z = self.joint_input(x, theta);
        let mut g = vec![0.0; z.len()];
        let e = self.net.value_and_grad_input(&z, &mut g);
        grad_x.copy_from_slice(&g[..self.x_dim]);
        grad_theta.copy_from_slice(&g[self.x_dim..]);
        e
    }
}

impl TrainableEnergy for EnergyModel {
    fn params(&self) -> &[f64] {
        self.net.params()
    }

    fn params_mut(&mut self) -> &mut [f64] {
        self.net.params_mut()
    }

    fn accumulate_param_grad(&self, x: &[f64], theta: &[f64], scale: f64, acc: &mut [f64]) -> f64 {
        self.net.accumulate_grad_params(&self.joint_input(x, theta), scale, acc)
    }
}

/// Unconditional Gaussian energy `E(x) = x^T L L^T x / 2` with `L` lower
/// triangular, so the precision `L L^T` stays positive semi-definite.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticEnergy {
    dim: usize,
    /// Row-major lower triangle of `L`.
    chol: Vec<f64>,
}

impl QuadraticEnergy {
    /// Starts from the identity precision.
    pub fn identity(dim: usize) -> Self {
        let mut chol = vec![0.0; dim * (dim + 1) / 2];
        for i in 0..dim {
            chol[i * (i + 1) / 2 + i] = 1.0;
        }
        QuadraticEnergy { dim, chol }
    }

    fn l(&self, i: usize, j: usize) -> f64 {
        if j > i {
            0.0
        } else {
            self.chol[i * (i + 1) / 2 + j]
        }
    }

    /// `L^T x`.
    fn lt_x(&self, x: &[f64]) -> Vec<f64> {
        (0..self.dim).map(|j| (j..self.dim).map(|i| self.l(i, j) * x[i]).sum()).collect()
    }

    /// Dense precision matrix `L L^T`, row-major.
    pub fn precision(&self) -> Vec<f64> {
        let d = self.dim;
        let mut p = vec![0.0; d * d];
        for i in 0..d {
            for j in 0..d {
                p[i * d + j] = (0..d).map(|k| self.l(i, k) * self.l(j, k)).sum();
            }
        }
        p
    }

    /// Exact average log-likelihood of `xs` under `N(0, (L L^T)^-1)`.
    pub fn mean_log_likelihood(&self, xs: &[Vec<f64>]) -> f64 {
        let log_det: f64 = (0..self.dim).map(|i| 2.0 * self.l(i, i).abs().ln()).sum();
        let norm = 0.5 * log_det - 0.5 * self.dim as f64 * (2.0 * std::f64::consts::PI).ln();
        norm - xs.iter().map(|x| self.energy(x, &[])).sum::<f64>() / xs.len() as f64
    }
}

impl Energy for QuadraticEnergy {
    fn x_dim(&self) -> usize {
        self.dim
    }

    fn theta_dim(&self) -> usize {
        0
    }

    fn energy(&self, x: &[f64], _theta: &[f64]) -> f64 {
        0.5 * self.lt_x(x).iter().map(|v| v * v).sum::<f64>()
    }

    fn energy_and_grads(&self, x: &[f64], _theta: &[f64], grad_x: &mut [f64], _grad_theta: &mut [f64]) -> f64 {
        let y = self.lt_x(x);
        for (i, g) in grad_x.iter_mut().enumerate() {
            *g = (0..=i).map(|j| self.l(i, j) * y[j]).sum();
        }
        0.5 * y.iter().map(|v| v * v).sum::<f64>()
    }
}

impl TrainableEnergy for QuadraticEnergy {
    fn params(&self) -> &[f64] {
        &self.chol
    }

    fn params_mut(&mut self) -> &mut [f64] {
        &mut self.chol
    }

    fn accumulate_param_grad(&self, x: &[f64], _theta: &[f64], scale: f64, acc: &mut [f64]) -> f64 {
        let y = self.lt_x(x);
        for i in 0..self.dim {
            for j in 0..=i {
                acc[i * (i + 1) / 2 + j] += scale * x[i] * y[j];
            }
        }
        0.5 * y.iter().map(|v| v * v).sum::<f64>()
    }
}

/// `log pi(theta) - E(x, theta)`: the tilted joint model up to its normalizer.
pub fn joint_tilted_logpdf<E: Energy + ?Sized>(energy: &E, prior: &Prior, x: &[f64], theta: &[f64]) -> f64 {
    let lp = prior.log_pdf(theta);
    if !lp.is_finite() {
        return f64::NEG_INFINITY;
    }
    lp - energy.energy(x, theta)
}

/// `-E(x, theta)`: the conditional likelihood up to its `theta`-dependent normalizer.
pub fn likelihood_logpdf<E: Energy + ?Sized>(energy: &E, x: &[f64], theta: &[f64]) -> f64 {
    -energy.energy(x, theta)
}

/// `x -> -E(x, theta)` at a fixed `theta`.
pub struct ConditionalTarget<'a, E: ?Sized> {
    pub energy: &'a E,
    pub theta: &'a [f64],
}

impl<E: Energy + ?Sized> UnnormalizedTarget<f64> for ConditionalTarget<'_, E> {
    fn dim(&self) -> usize {
        self.energy.x_dim()
    }

    fn log_density(&self, x: &[f64]) -> f64 {
        -self.energy.energy(x, self.theta)
    }

    fn log_density_and_grad(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        let mut gt = vec![0.0; self.theta.len()];
        let e = self.energy.energy_and_grads(x, self.theta, grad, &mut gt);
        grad.iter_mut().for_each(|g| *g = -*g);
        -e
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrainMode {
    Mcmc,
    Smc,
}

impl std::str::FromStr for TrainMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mcmc" => Ok(TrainMode::Mcmc),
            "smc" => Ok(TrainMode::Smc),
            other => Err(invalid(format!("unknown training mode `{other}`"))),
        }
    }
}

/// Hyper-parameters of the training loops.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub max_iter: usize,
    pub learning_rate: f64,
    /// Persistent particles of joint training.
    pub n_particles: usize,
    /// MALA moves per particle and iteration.
    pub mcmc_steps: usize,
    /// Adaptive moves on a particle's first refresh.
    pub warmup_steps: usize,
    /// Adaptive moves before every later refresh; 0 keeps the step size frozen.
    pub rewarm_steps: usize,
    /// Conditional-training batch; `None` means `min(N, 1000)`.
    pub batch_size: Option<usize>,
    pub mode: TrainMode,
    pub smc: SmcConfig,
    pub initial_step_size: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            max_iter: 500,
            learning_rate: 0.01,
            n_particles: 1000,
            mcmc_steps: 50,
            warmup_steps: 50,
            rewarm_steps: 0,
            batch_size: None,
            mode: TrainMode::Mcmc,
            smc: SmcConfig::default(),
            initial_step_size: 0.1,
        }
    }
}

impl TrainConfig {
    /// Long-chain preset: 250 MALA moves per iteration.
    pub fn long_chains() -> Self {
        TrainConfig { mcmc_steps: 250, ..Default::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_particles == 0 || self.initial_step_size.partial_cmp(&0.0) != Some(std::cmp::Ordering::Greater) {
            return Err(invalid("training needs particles and a positive initial step size"));
        }
        if self.batch_size == Some(0) {
            return Err(invalid("batch size must be positive"));
        }
        if !(self.learning_rate > 0.0) {
            return Err(invalid("learning rate must be positive"));
        }
        if self.mode == TrainMode::Smc && self.smc.n_stages == 0 {
            return Err(invalid("smc mode needs at least one bridging stage"));
        }
        Ok(())
    }

    pub(crate) fn effective_batch(&self, n: usize) -> usize {
        self.batch_size.unwrap_or(1000).min(n)
    }
}

/// Items per reduction chunk; fixed so sums do not depend on the thread count.
const CHUNK: usize = 64;

/// `sum_i w_i dE(x_i, theta_i)/dparams` over `n` items given by `item`, in a
/// fixed reduction order.
pub(crate) fn weighted_param_grad<E, F>(energy: &E, n: usize, item: F) -> Vec<f64>
where
    E: TrainableEnergy,
    F: Fn(usize) -> (f64, Vec<f64>, Vec<f64>) + Sync,
{
    let p = energy.params().len();
    let partials: Vec<Vec<f64>> = (0..n.div_ceil(CHUNK))
        .into_par_iter()
        .map(|c| {
            let mut acc = vec![0.0; p];
            for i in c * CHUNK..((c + 1) * CHUNK).min(n) {
                let (w, x, theta) = item(i);
                if w != 0.0 {
                    energy.accumulate_param_grad(&x, &theta, w, &mut acc);
                }
            }
            acc
        })
        .collect();
    let mut total = vec![0.0; p];
    for part in partials {
        total.iter_mut().zip(&part).for_each(|(t, v)| *t += v);
    }
    total
}

pub(crate) fn l2(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeedTree;

    #[test]
    fn energy_model_gradients_match_differences() {
        let mut rng = SeedTree::new(2).rng();
        let e = EnergyModel::new(2, 3, &[8, 8], Activation::Swish, &mut rng).unwrap();
        let x = [0.3, -0.4];
        let t = [0.1, 0.9, -1.2];
        let mut gx = [0.0; 2];
        let mut gt = [0.0; 3];
        e.energy_and_grads(&x, &t, &mut gx, &mut gt);
        let h = 1e-6;
        for i in 0..2 {
            let mut xp = x;
            let mut xm = x;
            xp[i] += h;
            xm[i] -= h;
            let fd = (e.energy(&xp, &t) - e.energy(&xm, &t)) / (2.0 * h);
            assert!((fd - gx[i]).abs() < 1e-7);
        }
        for i in 0..3 {
            let mut tp = t;
            let mut tm = t;
            tp[i] += h;
            tm[i] -= h;
            let fd = (e.energy(&x, &tp) - e.energy(&x, &tm)) / (2.0 * h);
            assert!((fd - gt[i]).abs() < 1e-7);
        }
        assert!(EnergyModel::from_net(e.net.clone(), 3, 3).is_err());
        let back = EnergyModel::from_json(&e.to_json().unwrap()).unwrap();
        assert_eq!(back, e);
    }

    #[test]
    fn quadratic_energy_gradients() {
        let mut q = QuadraticEnergy::identity(3);
        q.params_mut().copy_from_slice(&[1.2, 0.3, 0.8, -0.4, 0.2, 1.5]);
        let x = [0.5, -1.0, 2.0];
        let mut gx = [0.0; 3];
        q.energy_and_grads(&x, &[], &mut gx, &mut []);
        let p = q.precision();
        for i in 0..3 {
            let expect: f64 = (0..3).map(|j| p[i * 3 + j] * x[j]).sum();
            assert!((gx[i] - expect).abs() < 1e-12);
        }
        let mut acc = vec![0.0; 6];
        q.accumulate_param_grad(&x, &[], 1.0, &mut acc);
        for k in 0..6 {
            let h = 1e-6;
            let mut a = q.clone();
            let mut b = q.clone();
            a.params_mut()[k] += h;
            b.params_mut()[k] -= h;
            let fd = (a.energy(&x, &[]) - b.energy(&x, &[])) / (2.0 * h);
            assert!((fd - acc[k]).abs() < 1e-6);
        }
    }

    #[test]
    fn logpdfs_shift_with_energy() {
        let prior = Prior::uniform_box(1, -1.0, 1.0).unwrap();
        let mut rng = SeedTree::new(0).rng();
        let mut e = EnergyModel::new(1, 1, &[4], Activation::Tanh, &mut rng).unwrap();
        let base = joint_tilted_logpdf(&e, &prior, &[0.2], &[0.3]);
        let last = e.net.n_layers() - 1;
        e.net.bias_mut(last)[0] += 2.5;
        let shifted = joint_tilted_logpdf(&e, &prior, &[0.2], &[0.3]);
        assert!((base - shifted - 2.5).abs() < 1e-12);
        assert_eq!(joint_tilted_logpdf(&e, &prior, &[0.2], &[3.0]), f64::NEG_INFINITY);
        assert_eq!(likelihood_logpdf(&e, &[0.2], &[0.3]), -e.energy(&[0.2], &[0.3]));
    }
}
