use rand::Rng as _;
use rand_distr::StandardNormal;

use crate::error::{invalid, Result};
use crate::rng::Rng;
use crate::samplers::{Bound, UnnormalizedTarget};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Debug, Clone, PartialEq)]
enum Family {
    /// Independent uniforms on `[low_i, high_i]`.
    Uniform { low: Vec<f64>, high: Vec<f64> },
    /// Independent normals.
    Gaussian { mean: Vec<f64>, std: Vec<f64> },
}

/// Product prior over the parameters: a box-uniform or a diagonal Gaussian.
#[derive(Debug, Clone, PartialEq)]
pub struct Prior {
    family: Family,
    bounds: Vec<Bound<f64>>,
}

impl Prior {
    pub fn uniform(low: Vec<f64>, high: Vec<f64>) -> Result<Self> {
        if low.len() != high.len() || low.iter().zip(&high).any(|(l, h)| !(l < h)) {
            return Err(invalid("uniform prior needs low < high in every coordinate"));
        }
        let bounds = low.iter().zip(&high).map(|(&l, &h)| Bound::Interval(l, h)).collect();
        Ok(Prior { family: Family::Uniform { low, high }, bounds })
    }

    /// Uniform on `[lo, hi]^dim`.
    pub fn uniform_box(dim: usize, lo: f64, hi: f64) -> Result<Self> {
        Self::uniform(vec![lo; dim], vec![hi; dim])
    }

    pub fn gaussian(mean: Vec<f64>, std: Vec<f64>) -> Result<Self> {
        if mean.len() != std.len() || std.iter().any(|s| !(*s > 0.0)) {
            return Err(invalid("gaussian prior needs positive standard deviations"));
        }
        let bounds = vec![Bound::Free; mean.len()];
        Ok(Prior { family: Family::Gaussian { mean, std }, bounds })
    }

    pub fn dim(&self) -> usize {
        self.bounds.len()
    }

    pub fn is_bounded(&self) -> bool {
        matches!(self.family, Family::Uniform { .. })
    }

    /// Per-coordinate support.
    pub fn bounds(&self) -> &[Bound<f64>] {
        &self.bounds
    }

    /// Per-coordinate spread: the box width or the standard deviation.
    pub fn spread(&self) -> Vec<f64> {
        match &self.family {
            Family::Uniform { low, high } => low.iter().zip(high).map(|(l, h)| h - l).collect(),
            Family::Gaussian { std, .. } => std.clone(),
        }
    }

    pub fn contains(&self, theta: &[f64]) -> bool {
        theta.len() == self.dim()
            && theta.iter().zip(&self.bounds).all(|(&t, b)| match *b {
                Bound::Free => t.is_finite(),
                Bound::Interval(lo, hi) => t >= lo && t <= hi,
            })
    }

    pub fn sample(&self, rng: &mut Rng) -> Vec<f64> {
        match &self.family {
            Family::Uniform { low, high } => {
                low.iter().zip(high).map(|(&l, &h)| l + (h - l) * rng.random::<f64>()).collect()
            }
            Family::Gaussian { mean, std } => mean
                .iter()
                .zip(std)
                .map(|(&m, &s)| m + s * rng.sample::<f64, _>(StandardNormal))
                .collect(),
        }
    }

    pub fn log_pdf(&self, theta: &[f64]) -> f64 {
        if !self.contains(theta) {
            return f64::NEG_INFINITY;
        }
        match &self.family {
            Family::Uniform { low, high } => -low.iter().zip(high).map(|(l, h)| (h - l).ln()).sum::<f64>(),
            Family::Gaussian { mean, std } => theta
                .iter()
                .zip(mean.iter().zip(std))
                .map(|(&t, (&m, &s))| {
                    let z = (t - m) / s;
                    -0.5 * z * z - s.ln() - 0.5 * LN_2PI
                })
                .sum(),
        }
    }

    /// Log-density and its gradient (zero inside a box).
    pub fn log_pdf_and_grad(&self, theta: &[f64], grad: &mut [f64]) -> f64 {
        match &self.family {
            Family::Uniform { .. } => grad.iter_mut().for_each(|g| *g = 0.0),
            Family::Gaussian { mean, std } => {
                for (i, g) in grad.iter_mut().enumerate() {
                    *g = -(theta[i] - mean[i]) / (std[i] * std[i]);
                }
            }
        }
        self.log_pdf(theta)
    }
}

impl UnnormalizedTarget<f64> for Prior {
    fn dim(&self) -> usize {
        self.dim()
    }

    fn log_density(&self, x: &[f64]) -> f64 {
        self.log_pdf(x)
    }

    fn log_density_and_grad(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        self.log_pdf_and_grad(x, grad)
    }

    fn support(&self) -> Option<&[Bound<f64>]> {
        if self.is_bounded() {
            Some(&self.bounds)
        } else {
            None
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeedTree;

    #[test]
    fn box_volume_and_support() {
        let p = Prior::uniform_box(2, -1.0, 1.0).unwrap();
        assert!((p.log_pdf(&[0.0, 0.0]) + 4f64.ln()).abs() < 1e-15);
        assert_eq!(p.log_pdf(&[1.5, 0.0]), f64::NEG_INFINITY);
        let g = Prior::uniform_box(10, -1.0, 1.0).unwrap();
        assert!((g.log_pdf(&[0.3; 10]) + 10.0 * 2f64.ln()).abs() < 1e-12);
        assert!(Prior::uniform(vec![1.0], vec![0.0]).is_err());
    }

    #[test]
    fn gaussian_density_and_samples() {
        let p = Prior::gaussian(vec![1.0], vec![2.0]).unwrap();
        let expect = -0.5 * 0.25 - 2f64.ln() - 0.5 * LN_2PI;
        assert!((p.log_pdf(&[2.0]) - expect).abs() < 1e-14);
        let mut rng = SeedTree::new(3).rng();
        let n = 20_000;
        let m = (0..n).map(|_| p.sample(&mut rng)[0]).sum::<f64>() / n as f64;
        assert!((m - 1.0).abs() < 3.0 * 2.0 / (n as f64).sqrt());
    }
}
