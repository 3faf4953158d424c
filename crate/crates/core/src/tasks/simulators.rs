//! Generative processes and closed-form likelihoods of the benchmark tasks.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

use rand::Rng as _;
use rand_distr::StandardNormal;

use crate::rng::Rng;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

fn normal(rng: &mut Rng) -> f64 {
    rng.sample(StandardNormal)
}

fn log_normal_pdf(x: f64, mean: f64, std: f64) -> f64 {
    let z = (x - mean) / std;
    -0.5 * z * z - std.ln() - 0.5 * LN_2PI
}

pub(crate) const MOONS_RADIUS_MEAN: f64 = 0.1;
pub(crate) const MOONS_RADIUS_STD: f64 = 0.01;

/// Shift applied to the crescent point by the parameters.
fn moons_shift(theta: &[f64]) -> (f64, f64) {
    (-(theta[0] + theta[1]).abs() * FRAC_1_SQRT_2, (-theta[0] + theta[1]) * FRAC_1_SQRT_2)
}

pub(crate) fn two_moons_simulate(theta: &[f64], rng: &mut Rng) -> Vec<f64> {
    let a = PI * (rng.random::<f64>() - 0.5);
    let r = MOONS_RADIUS_MEAN + MOONS_RADIUS_STD * normal(rng);
    let (sx, sy) = moons_shift(theta);
    vec![r * a.cos() + 0.25 + sx, r * a.sin() + sy]
}

/// `log N(r; 0.1, 0.01^2) - log pi - log r` in the polar coordinates of the
/// unshifted crescent point; zero density on the half-plane the angle never reaches.
pub(crate) fn two_moons_loglik(x: &[f64], theta: &[f64]) -> f64 {
    let (sx, sy) = moons_shift(theta);
    let u0 = x[0] - sx - 0.25;
    let u1 = x[1] - sy;
    if u0 <= 0.0 {
        return f64::NEG_INFINITY;
    }
    let r = u0.hypot(u1);
    log_normal_pdf(r, MOONS_RADIUS_MEAN, MOONS_RADIUS_STD) - PI.ln() - r.ln()
}

/// Mean and covariance entries `(m0, m1, s00, s01, s11)` of the SLCP Gaussian.
fn slcp_moments(theta: &[f64]) -> (f64, f64, f64, f64, f64) {
    let s1 = theta[2] * theta[2];
    let s2 = theta[3] * theta[3];
    let rho = theta[4].tanh();
    (theta[0], theta[1], s1 * s1, rho * s1 * s2, s2 * s2)
}

pub(crate) fn slcp_simulate(theta: &[f64], rng: &mut Rng) -> Vec<f64> {
    let (m0, m1, _, _, _) = slcp_moments(theta);
    let s1 = theta[2] * theta[2];
    let s2 = theta[3] * theta[3];
    let rho = theta[4].tanh();
    let mut x = Vec::with_capacity(8);
    for _ in 0..4 {
        let z0 = normal(rng);
        let z1 = normal(rng);
        x.push(m0 + s1 * z0);
        x.push(m1 + s2 * (rho * z0 + (1.0 - rho * rho).sqrt() * z1));
    }
    x
}

pub(crate) fn slcp_loglik(x: &[f64], theta: &[f64]) -> f64 {
    let (m0, m1, a, b, c) = slcp_moments(theta);
    let det = a * c - b * b;
    if !(det > 0.0) {
        return f64::NEG_INFINITY;
    }
    let mut total = 0.0;
    for k in 0..4 {
        let d0 = x[2 * k] - m0;
        let d1 = x[2 * k + 1] - m1;
        let q = (c * d0 * d0 - 2.0 * b * d0 * d1 + a * d1 * d1) / det;
        total += -0.5 * q - 0.5 * det.ln() - LN_2PI;
    }
    total
}

pub(crate) const GLU_NOISE: f64 = 0.1;

pub(crate) fn glu_simulate(theta: &[f64], rng: &mut Rng) -> Vec<f64> {
    theta.iter().map(|&t| t + GLU_NOISE * normal(rng)).collect()
}

pub(crate) fn glu_loglik(x: &[f64], theta: &[f64], grad_theta: Option<&mut [f64]>) -> f64 {
    if let Some(g) = grad_theta {
        for i in 0..theta.len() {
            g[i] = (x[i] - theta[i]) / (GLU_NOISE * GLU_NOISE);
        }
    }
    x.iter().zip(theta).map(|(&xi, &t)| log_normal_pdf(xi, t, GLU_NOISE)).sum()
}

pub(crate) const LV_INITIAL: [f64; 2] = [30.0, 1.0];
pub(crate) const LV_DT: f64 = 0.1;
/// Observation times as RK4 step indices (t = 4, 8, ..., 20).
pub(crate) const LV_OBS_STEPS: [usize; 5] = [40, 80, 120, 160, 200];
pub(crate) const LV_NOISE: f64 = 0.1;

fn lv_rhs(p: &[f64; 4], s: [f64; 2]) -> [f64; 2] {
    let (x, y) = (s[0], s[1]);
    [p[0] * x - p[1] * x * y, -p[2] * y + p[3] * x * y]
}

/// Log populations `[prey, predator]` at the observation times, or `None` if
/// the trajectory leaves the positive quadrant or overflows.
pub(crate) fn lv_log_trajectory(theta: &[f64]) -> Option<Vec<f64>> {
    let p = [theta[0].exp(), theta[1].exp(), theta[2].exp(), theta[3].exp()];
    let mut s = LV_INITIAL;
    let mut out = Vec::with_capacity(2 * LV_OBS_STEPS.len());
    let mut next = 0;
    let h = LV_DT;
    for step in 1..=LV_OBS_STEPS[LV_OBS_STEPS.len() - 1] {
        let k1 = lv_rhs(&p, s);
        let k2 = lv_rhs(&p, [s[0] + 0.5 * h * k1[0], s[1] + 0.5 * h * k1[1]]);
        let k3 = lv_rhs(&p, [s[0] + 0.5 * h * k2[0], s[1] + 0.5 * h * k2[1]]);
        let k4 = lv_rhs(&p, [s[0] + h * k3[0], s[1] + h * k3[1]]);
        for i in 0..2 {
            s[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        if !(s[0] > 0.0 && s[1] > 0.0 && s[0].is_finite() && s[1].is_finite()) {
            return None;
        }
        if step == LV_OBS_STEPS[next] {
            out.push(s[0].ln());
            out.push(s[1].ln());
            next += 1;
        }
    }
    Some(out)
}

pub(crate) fn lv_simulate(theta: &[f64], rng: &mut Rng) -> Vec<f64> {
    match lv_log_trajectory(theta) {
        Some(traj) => traj.into_iter().map(|v| v + LV_NOISE * normal(rng)).collect(),
        None => vec![f64::NAN; 2 * LV_OBS_STEPS.len()],
    }
}

pub(crate) fn lv_loglik(x: &[f64], theta: &[f64]) -> f64 {
    match lv_log_trajectory(theta) {
        Some(traj) => x.iter().zip(&traj).map(|(&xi, &m)| log_normal_pdf(xi, m, LV_NOISE)).sum(),
        None => f64::NEG_INFINITY,
    }
}

pub(crate) const BIMODAL_OFFSET: f64 = 2.0;
pub(crate) const BIMODAL_STD: f64 = 0.5;

pub(crate) fn bimodal_simulate(theta: &[f64], rng: &mut Rng) -> Vec<f64> {
    let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
    vec![theta[0] + sign * BIMODAL_OFFSET + BIMODAL_STD * normal(rng)]
}

pub(crate) fn bimodal_loglik(x: &[f64], theta: &[f64], grad_theta: Option<&mut [f64]>) -> f64 {
    let lm = log_normal_pdf(x[0], theta[0] - BIMODAL_OFFSET, BIMODAL_STD);
    let lp = log_normal_pdf(x[0], theta[0] + BIMODAL_OFFSET, BIMODAL_STD);
    let top = lm.max(lp);
    let (wm, wp) = ((lm - top).exp(), (lp - top).exp());
    if let Some(g) = grad_theta {
        let s2 = BIMODAL_STD * BIMODAL_STD;
        let dm = (x[0] - theta[0] + BIMODAL_OFFSET) / s2;
        let dp = (x[0] - theta[0] - BIMODAL_OFFSET) / s2;
        g[0] = (wm * dm + wp * dp) / (wm + wp);
    }
    top + (0.5 * (wm + wp)).ln()
}
