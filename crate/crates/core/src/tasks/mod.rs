//! Benchmark simulators, priors, closed-form likelihoods and reference posteriors.

mod dataset;
mod prior;
mod reference;
mod simulators;

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use dataset::{read_samples_csv, write_samples_csv, Dataset};
pub use prior::Prior;
pub use reference::{reference_posterior, ReferenceConfig, ReferenceDiagnostics, ReferencePosterior, TruePosterior};

use crate::error::{invalid, Error, Result};
use crate::rng::{Rng, SeedTree};
use simulators as sim;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskName {
    TwoMoons,
    Slcp,
    GaussianLinearUniform,
    LotkaVolterra,
    Bimodal,
}

impl TaskName {
    pub const ALL: [TaskName; 5] = [
        TaskName::TwoMoons,
        TaskName::Slcp,
        TaskName::GaussianLinearUniform,
        TaskName::LotkaVolterra,
        TaskName::Bimodal,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TaskName::TwoMoons => "two_moons",
            TaskName::Slcp => "slcp",
            TaskName::GaussianLinearUniform => "gaussian_linear_uniform",
            TaskName::LotkaVolterra => "lotka_volterra",
            TaskName::Bimodal => "bimodal",
        }
    }
}

impl fmt::Display for TaskName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TaskName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        TaskName::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| invalid(format!("unknown task `{s}`")))
    }
}

/// A simulation task: prior, simulator and closed-form likelihood.
#[derive(Debug, Clone, PartialEq)]
pub struct Task {
    name: TaskName,
    prior: Prior,
}

impl Task {
    pub fn new(name: TaskName) -> Self {
        let prior = match name {
            TaskName::TwoMoons => Prior::uniform_box(2, -1.0, 1.0),
            TaskName::Slcp => Prior::uniform_box(5, -3.0, 3.0),
            TaskName::GaussianLinearUniform => Prior::uniform_box(10, -1.0, 1.0),
            TaskName::LotkaVolterra => Prior::gaussian(vec![-0.125, -3.0, -0.125, -3.0], vec![0.5; 4]),
            TaskName::Bimodal => Prior::gaussian(vec![0.0], vec![1.0]),
        }
        .expect("built-in priors are valid");
        Task { name, prior }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        Ok(Task::new(name.parse()?))
    }

    pub fn name(&self) -> TaskName {
        self.name
    }

    pub fn prior(&self) -> &Prior {
        &self.prior
    }

    pub fn theta_dim(&self) -> usize {
        self.prior.dim()
    }

    pub fn x_dim(&self) -> usize {
        match self.name {
            TaskName::TwoMoons => 2,
            TaskName::Slcp => 8,
            TaskName::GaussianLinearUniform => 10,
            TaskName::LotkaVolterra => 2 * sim::LV_OBS_STEPS.len(),
            TaskName::Bimodal => 1,
        }
    }

    /// One draw `x ~ p(x | theta)`. `Ok(None)` flags a non-finite simulation.
    pub fn simulate(&self, theta: &[f64], rng: &mut Rng) -> Result<Option<Vec<f64>>> {
        if !self.prior.contains(theta) {
            return Err(invalid(format!("theta {theta:?} outside the prior support of {}", self.name)));
        }
        let x = match self.name {
            TaskName::TwoMoons => sim::two_moons_simulate(theta, rng),
            TaskName::Slcp => sim::slcp_simulate(theta, rng),
            TaskName::GaussianLinearUniform => sim::glu_simulate(theta, rng),
            TaskName::LotkaVolterra => sim::lv_simulate(theta, rng),
            TaskName::Bimodal => sim::bimodal_simulate(theta, rng),
        };
        Ok(x.iter().all(|v| v.is_finite()).then_some(x))
    }

    /// Simulates every `thetas[i]` with the stream `tree.child(i)`, in parallel.
    pub fn simulate_batch(&self, thetas: &[Vec<f64>], tree: SeedTree) -> Result<Vec<Option<Vec<f64>>>> {
        thetas
            .par_iter()
            .enumerate()
            .map(|(i, t)| self.simulate(t, &mut tree.child(i as u64).rng()))
            .collect()
    }

    /// Every built-in task has a closed-form likelihood.
    pub fn has_true_likelihood(&self) -> bool {
        true
    }

    /// Exact `log p(x | theta)`.
    pub fn true_loglik(&self, x: &[f64], theta: &[f64]) -> Result<f64> {
        self.check_dims(x, theta)?;
        Ok(match self.name {
            TaskName::TwoMoons => sim::two_moons_loglik(x, theta),
            TaskName::Slcp => sim::slcp_loglik(x, theta),
            TaskName::GaussianLinearUniform => sim::glu_loglik(x, theta, None),
            TaskName::LotkaVolterra => sim::lv_loglik(x, theta),
            TaskName::Bimodal => sim::bimodal_loglik(x, theta, None),
        })
    }

    /// `log p(x | theta)` and its gradient in `theta`; analytic where cheap,
    /// central differences otherwise.
    pub fn true_loglik_and_grad(&self, x: &[f64], theta: &[f64], grad: &mut [f64]) -> Result<f64> {
        self.check_dims(x, theta)?;
        match self.name {
            TaskName::GaussianLinearUniform => return Ok(sim::glu_loglik(x, theta, Some(grad))),
            TaskName::Bimodal => return Ok(sim::bimodal_loglik(x, theta, Some(grad))),
            _ => {}
        }
        let value = self.true_loglik(x, theta)?;
        let h = 1e-6;
        let mut t = theta.to_vec();
        for i in 0..theta.len() {
            t[i] = theta[i] + h;
            let up = self.true_loglik(x, &t)?;
            t[i] = theta[i] - h;
            let down = self.true_loglik(x, &t)?;
            t[i] = theta[i];
            grad[i] = (up - down) / (2.0 * h);
        }
        Ok(value)
    }

    fn check_dims(&self, x: &[f64], theta: &[f64]) -> Result<()> {
        if x.len() != self.x_dim() || theta.len() != self.theta_dim() {
            return Err(invalid(format!(
                "{} expects x of length {} and theta of length {}",
                self.name,
                self.x_dim(),
                self.theta_dim()
            )));
        }
        Ok(())
    }

    /// Deterministic observation number `index`: a simulation at a prior draw.
    pub fn observation(&self, index: u64) -> Vec<f64> {
        let tree = SeedTree::new(0x0b5e_7a71).named(self.name.as_str()).child(index);
        let mut rng = tree.rng();
        loop {
            let theta = self.prior.sample(&mut rng);
            if let Ok(Some(x)) = self.simulate(&theta, &mut rng) {
                return x;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_round_trip() {
        for t in TaskName::ALL {
            assert_eq!(t.as_str().parse::<TaskName>().unwrap(), t);
            let task = Task::new(t);
            let mut rng = SeedTree::new(0).rng();
            let theta = task.prior().sample(&mut rng);
            let x = task.simulate(&theta, &mut rng).unwrap().unwrap();
            assert_eq!(x.len(), task.x_dim());
            assert!(task.true_loglik(&x, &theta).unwrap().is_finite());
        }
        assert!("nope".parse::<TaskName>().is_err());
    }

    #[test]
    fn simulation_is_reproducible() {
        let task = Task::new(TaskName::Slcp);
        let theta = vec![0.5, -1.0, 1.2, 0.7, -0.3];
        let a = task.simulate(&theta, &mut SeedTree::new(4).rng()).unwrap();
        let b = task.simulate(&theta, &mut SeedTree::new(4).rng()).unwrap();
        assert_eq!(a, b);
        assert!(task.simulate(&[9.0, 0.0, 0.0, 0.0, 0.0], &mut SeedTree::new(4).rng()).is_err());
    }

    #[test]
    fn analytic_and_numeric_gradients_agree() {
        for name in TaskName::ALL {
            let task = Task::new(name);
            let mut rng = SeedTree::new(11).rng();
            let theta = task.prior().sample(&mut rng);
            let x = task.simulate(&theta, &mut rng).unwrap().unwrap();
            let mut g = vec![0.0; theta.len()];
            task.true_loglik_and_grad(&x, &theta, &mut g).unwrap();
            for i in 0..theta.len() {
                let h = 1e-5;
                let mut tp = theta.clone();
                let mut tm = theta.clone();
                tp[i] += h;
                tm[i] -= h;
                let fd = (task.true_loglik(&x, &tp).unwrap() - task.true_loglik(&x, &tm).unwrap()) / (2.0 * h);
                assert!((fd - g[i]).abs() <= 1e-4 * fd.abs().max(1.0), "{name} coordinate {i}: {fd} vs {}", g[i]);
            }
        }
    }
}
