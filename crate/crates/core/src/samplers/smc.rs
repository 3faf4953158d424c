use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::cloud::{effective_sample_size, systematic_resample, ParticleCloud};
use super::mala::{adapt_step, mala_step, ChainState, SamplerDiagnostics, TARGET_ACCEPTANCE};
use super::target::{BoxTransform, Bound, Unconstrained, UnnormalizedTarget};
use crate::error::{invalid, Error, Result};
use crate::rng::{fork, Rng};
use crate::scalar::Scalar;

/// Hyper-parameters of the tempered SMC sampler.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SmcConfig {
    /// Number of bridging densities `L`.
    pub n_stages: usize,
    /// MALA moves per particle and stage.
    pub kernel_steps: usize,
    /// Resample when `ESS < threshold * N`.
    pub resample_threshold: f64,
    /// Adapt per-particle step sizes during the moves.
    pub adapt: bool,
}

impl Default for SmcConfig {
    fn default() -> Self {
        SmcConfig { n_stages: 20, kernel_steps: 3, resample_threshold: 0.5, adapt: true }
    }
}

/// Result of [`smc_run`].
#[derive(Debug, Clone)]
pub struct SmcOutput<S> {
    pub cloud: ParticleCloud<S>,
    /// Estimate of `log(Z_target / Z_initial)`.
    pub log_normalizer_ratio: S,
    pub diagnostics: SamplerDiagnostics,
}

/// Geometric bridge `initial^(1 - beta) * target^beta`.
struct Bridge<'a, S, A: ?Sized, B: ?Sized> {
    initial: &'a A,
    target: &'a B,
    beta: S,
    support: Option<Vec<Bound<S>>>,
}

impl<S: Scalar, A, B> UnnormalizedTarget<S> for Bridge<'_, S, A, B>
where
    A: UnnormalizedTarget<S> + ?Sized,
    B: UnnormalizedTarget<S> + ?Sized,
{
    fn dim(&self) -> usize {
        self.target.dim()
    }

    fn log_density(&self, x: &[S]) -> S {
        let b = self.beta;
        if b == S::one() {
            return self.target.log_density(x);
        }
        if b == S::zero() {
            return self.initial.log_density(x);
        }
        (S::one() - b) * self.initial.log_density(x) + b * self.target.log_density(x)
    }

    fn log_density_and_grad(&self, x: &[S], grad: &mut [S]) -> S {
        let b = self.beta;
        if b == S::one() {
            return self.target.log_density_and_grad(x, grad);
        }
        if b == S::zero() {
            return self.initial.log_density_and_grad(x, grad);
        }
        let mut g0 = vec![S::zero(); x.len()];
        let l0 = self.initial.log_density_and_grad(x, &mut g0);
        let l1 = self.target.log_density_and_grad(x, grad);
        for (g, &h) in grad.iter_mut().zip(&g0) {
            *g = (S::one() - b) * h + b * *g;
        }
        (S::one() - b) * l0 + b * l1
    }

    fn support(&self) -> Option<&[Bound<S>]> {
        self.support.as_deref()
    }
}

/// Tempered SMC sampler moving `cloud0` (approximating `initial`) to `target`
/// along the geometric path `initial^(1 - l/L) * target^(l/L)`, `l = 1..L`.
///
/// Each stage reweights, resamples systematically when the ESS drops below
/// `threshold * N`, and applies `kernel_steps` MALA moves per particle. Both
/// densities are evaluated in the unconstrained coordinates of `target`'s support.
pub fn smc_run<S, T, I>(
    target: &T,
    initial: &I,
    cloud0: &ParticleCloud<S>,
    config: &SmcConfig,
    rng: &mut Rng,
) -> Result<SmcOutput<S>>
where
    S: Scalar,
    T: UnnormalizedTarget<S> + ?Sized,
    I: UnnormalizedTarget<S> + ?Sized,
{
    let n = cloud0.len();
    if n == 0 {
        return Err(invalid("SMC needs a non-empty initial cloud"));
    }
    if config.n_stages == 0 {
        return Err(invalid("SMC needs at least one bridging stage"));
    }
    let a = config.resample_threshold;
    if !(a >= 1.0 / n as f64 && a < 1.0) {
        return Err(invalid(format!("resample threshold {a} outside [1/N, 1)")));
    }
    let support = target.support().map(<[Bound<S>]>::to_vec);
    let transform = match &support {
        Some(b) => BoxTransform::new(b),
        None => BoxTransform::identity(target.dim()),
    };
    let mut cloud = cloud0.clone();
    let mut u_positions: Vec<Vec<S>> = cloud.positions.iter().map(|p| transform.to_unconstrained(p)).collect();
    let mut log_z = S::zero();
    let mut diagnostics = SamplerDiagnostics::default();
    diagnostics.ess_trajectory.push(cloud.ess().as_f64());
    let mut accepted = vec![0usize; n];
    let mut proposed = vec![0usize; n];
    let l_total = S::of(config.n_stages as f64);

    for stage in 1..=config.n_stages {
        let beta_prev = S::of((stage - 1) as f64) / l_total;
        let beta = S::of(stage as f64) / l_total;
        let d_beta = beta - beta_prev;

        // incremental importance weights; the Jacobian of the shared transform cancels
        let log_inc: Vec<S> = cloud
            .positions
            .par_iter()
            .map(|x| {
                let lt = target.log_density(x);
                let l0 = initial.log_density(x);
                let diff = lt - l0;
                if lt.is_finite() && l0.is_finite() {
                    d_beta * diff
                } else {
                    S::neg_infinity()
                }
            })
            .collect();
        let m = log_inc.iter().copied().fold(S::neg_infinity(), S::max);
        if !m.is_finite() {
            return Err(Error::DegenerateBridge { stage });
        }
        let mut unnorm: Vec<S> = cloud.weights.iter().zip(&log_inc).map(|(&w, &l)| w * (l - m).exp()).collect();
        let prev_total: S = cloud.weights.iter().copied().sum();
        let total: S = unnorm.iter().copied().sum();
        if !(total > S::zero()) {
            return Err(Error::DegenerateBridge { stage });
        }
        log_z += m + (total / prev_total).ln();
        unnorm.iter_mut().for_each(|w| *w /= total);
        cloud.weights = unnorm;

        let ess = effective_sample_size(&cloud.weights);
        diagnostics.ess_trajectory.push(ess.as_f64());
        if ess.as_f64() < a * n as f64 {
            let idx = systematic_resample(&cloud.weights, n, rng);
            u_positions = idx.iter().map(|&i| u_positions[i].clone()).collect();
            accepted = idx.iter().map(|&i| accepted[i]).collect();
            proposed = idx.iter().map(|&i| proposed[i]).collect();
            cloud.resample_indices(&idx);
            diagnostics.resample_count += 1;
        }

        if config.kernel_steps > 0 {
            let bridge = Bridge { initial, target, beta, support: support.clone() };
            let view = Unconstrained::new(&bridge);
            let streams = fork(rng);
            let moved: Vec<(Vec<S>, S, usize, usize)> = u_positions
                .par_iter()
                .zip(&cloud.step_sizes)
                .enumerate()
                .map(|(i, (u, &sigma))| {
                    let mut r = streams.child(i as u64).rng();
                    match ChainState::new(&view, u.clone(), sigma) {
                        Ok(mut st) => {
                            for _ in 0..config.kernel_steps {
                                mala_step(&view, &mut st, &mut r);
                                if config.adapt {
                                    adapt_step(&mut st, TARGET_ACCEPTANCE);
                                }
                            }
                            (st.position, st.step_size, st.accepted, st.proposed)
                        }
                        Err(_) => (u.clone(), sigma, 0, 0),
                    }
                })
                .collect();
            for (i, (u, sigma, acc, prop)) in moved.into_iter().enumerate() {
                cloud.positions[i] = transform.to_constrained(&u);
                u_positions[i] = u;
                cloud.step_sizes[i] = sigma;
                accepted[i] += acc;
                proposed[i] += prop;
            }
        }
    }

    diagnostics.acceptance_rates = accepted
        .iter()
        .zip(&proposed)
        .map(|(&a, &p)| if p == 0 { 0.0 } else { a as f64 / p as f64 })
        .collect();
    diagnostics.final_step_sizes = cloud.step_sizes.iter().map(|s| s.as_f64()).collect();
    Ok(SmcOutput { cloud, log_normalizer_ratio: log_z, diagnostics })
}
