use rand::Rng as _;

use crate::error::{invalid, Result};
use crate::rng::Rng;
use crate::scalar::Scalar;

/// Weighted particle approximation with a MALA step size per particle.
#[derive(Debug, Clone, PartialEq)]
pub struct ParticleCloud<S> {
    pub positions: Vec<Vec<S>>,
    pub weights: Vec<S>,
    pub step_sizes: Vec<S>,
}

impl<S: Scalar> ParticleCloud<S> {
    /// Uniformly weighted cloud with a common initial step size.
    pub fn uniform(positions: Vec<Vec<S>>, step_size: S) -> Result<Self> {
        if positions.is_empty() {
            return Err(invalid("a particle cloud needs at least one particle"));
        }
        let n = positions.len();
        let cloud = ParticleCloud {
            weights: vec![S::one() / S::of(n as f64); n],
            step_sizes: vec![step_size; n],
            positions,
        };
        cloud.validate()?;
        Ok(cloud)
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.positions.first().map_or(0, Vec::len)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.positions.len();
        if n == 0 {
            return Err(invalid("empty particle cloud"));
        }
        if self.weights.len() != n || self.step_sizes.len() != n {
            return Err(invalid("weights and step sizes must have one entry per particle"));
        }
        let d = self.dim();
        if self.positions.iter().any(|p| p.len() != d || p.iter().any(|v| !v.is_finite())) {
            return Err(invalid("particle positions must be finite and of equal dimension"));
        }
        if self.weights.iter().any(|&w| !(w >= S::zero()) || !w.is_finite()) {
            return Err(invalid("weights must be finite and non-negative"));
        }
        let total: S = self.weights.iter().copied().sum();
        if (total - S::one()).abs() > S::of(1e-12).max(S::epsilon() * S::of(4.0 * n as f64)) {
            return Err(invalid(format!("weights sum to {total}, not 1")));
        }
        if self.step_sizes.iter().any(|&s| !(s > S::zero())) {
            return Err(invalid("step sizes must be positive"));
        }
        Ok(())
    }

    pub fn ess(&self) -> S {
        effective_sample_size(&self.weights)
    }

    pub fn set_uniform_weights(&mut self) {
        let w = S::one() / S::of(self.len() as f64);
        self.weights.iter_mut().for_each(|v| *v = w);
    }

    /// Weighted mean of `f` over the cloud.
    pub fn expectation<F: Fn(&[S]) -> S>(&self, f: F) -> S {
        self.positions.iter().zip(&self.weights).map(|(p, &w)| w * f(p)).sum()
    }

    /// Replaces the cloud by the particles at `indices` with uniform weights.
    pub fn resample_indices(&mut self, indices: &[usize]) {
        self.positions = indices.iter().map(|&i| self.positions[i].clone()).collect();
        self.step_sizes = indices.iter().map(|&i| self.step_sizes[i]).collect();
        self.weights = vec![S::one() / S::of(indices.len() as f64); indices.len()];
    }
}

/// `1 / sum(w_i^2)` for normalized weights.
pub fn effective_sample_size<S: Scalar>(weights: &[S]) -> S {
    let total: S = weights.iter().copied().sum();
    let sq: S = weights.iter().map(|&w| (w / total) * (w / total)).sum();
    S::one() / sq
}

/// Systematic resampling: one uniform offset, `n` evenly spaced pointers into
/// the cumulative weights. Offspring count of particle `i` has mean `n * w_i`.
pub fn systematic_resample<S: Scalar>(weights: &[S], n: usize, rng: &mut Rng) -> Vec<usize> {
    let total: S = weights.iter().copied().sum();
    let offset: f64 = rng.random::<f64>();
    let step = total.as_f64() / n as f64;
    let mut out = Vec::with_capacity(n);
    let mut cum = weights[0].as_f64();
    let mut i = 0;
    for k in 0..n {
        let u = (k as f64 + offset) * step;
        while u >= cum && i + 1 < weights.len() {
            i += 1;
            cum += weights[i].as_f64();
        }
        out.push(i);
    }
    out
}
