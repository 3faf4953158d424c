use rand::Rng as _;
use rand_distr::StandardNormal;
use statrs::distribution::{ContinuousCDF, Normal};
use unle::metrics::{energy_distance, energy_distance_null, quantile};
use unle::rng::SeedTree;
use unle::samplers::{
    mala_step, run_chains_collect, run_exchange_chains, smc_run, systematic_resample, ChainState, DoublyIntractable,
    ExchangeChain, FnTarget, ParticleCloud, SmcConfig,
};

fn std_normal() -> FnTarget<impl Fn(&[f64], &mut [f64]) -> f64 + Sync> {
    FnTarget::new(1, |x: &[f64], g: &mut [f64]| {
        g[0] = -x[0];
        -0.5 * x[0] * x[0]
    })
}

fn bin(x: f64) -> usize {
    if x < -0.5 {
        0
    } else if x < 0.5 {
        1
    } else {
        2
    }
}

/// One MALA move from exact target draws, binned into three states: the
/// binned target is invariant and the transition counts are symmetric.
#[test]
fn mala_leaves_a_three_state_histogram_invariant() {
    let target = std_normal();
    let mut rng = SeedTree::new(0).rng();
    let n = 200_000;
    let mut counts = [[0f64; 3]; 3];
    for _ in 0..n {
        let x0: f64 = rng.sample(StandardNormal);
        let mut st = ChainState::new(&target, vec![x0], 1.2).unwrap();
        mala_step(&target, &mut st, &mut rng);
        counts[bin(x0)][bin(st.position[0])] += 1.0;
    }
    let phi = Normal::new(0.0, 1.0).unwrap();
    let p = [phi.cdf(-0.5), phi.cdf(0.5) - phi.cdf(-0.5), 1.0 - phi.cdf(0.5)];
    for j in 0..3 {
        let after: f64 = (0..3).map(|i| counts[i][j]).sum::<f64>() / n as f64;
        let se = (p[j] * (1.0 - p[j]) / n as f64).sqrt();
        assert!((after - p[j]).abs() < 4.0 * se, "bin {j}: {after} vs {}", p[j]);
    }
    for i in 0..3 {
        for j in (i + 1)..3 {
            let (a, b) = (counts[i][j], counts[j][i]);
            assert!((a - b).abs() < 4.0 * (a + b).sqrt(), "flow {i}->{j} {a} vs {b}");
        }
    }
}

#[test]
fn resampled_weights_are_exactly_uniform() {
    let mut rng = SeedTree::new(1).rng();
    let pos: Vec<Vec<f64>> = (0..37).map(|i| vec![i as f64]).collect();
    let mut cloud = ParticleCloud::uniform(pos, 0.1).unwrap();
    cloud.weights = (0..37).map(|i| (i + 1) as f64).collect();
    let total: f64 = cloud.weights.iter().sum();
    cloud.weights.iter_mut().for_each(|w| *w /= total);
    let idx = systematic_resample(&cloud.weights, 37, &mut rng);
    cloud.resample_indices(&idx);
    assert!(cloud.weights.iter().all(|&w| w == 1.0 / 37.0));
    assert!(cloud.validate().is_ok());
}

#[test]
fn smc_between_identical_densities_keeps_the_law() {
    let target = std_normal();
    let mut rng = SeedTree::new(2).rng();
    let draw = |rng: &mut unle::rng::Rng, n: usize| (0..n).map(|_| vec![rng.sample::<f64, _>(StandardNormal)]).collect::<Vec<_>>();
    let cloud = ParticleCloud::uniform(draw(&mut rng, 1000), 0.5).unwrap();
    let out = smc_run(&target, &target, &cloud, &SmcConfig::default(), &mut rng).unwrap();
    let w: f64 = out.cloud.weights.iter().sum();
    assert!((w - 1.0).abs() < 1e-12);
    let fresh = draw(&mut rng, 1000);
    let d = energy_distance(&out.cloud.positions, &fresh).unwrap().value;
    let null = energy_distance_null(&out.cloud.positions, &fresh, 200, &mut rng).unwrap();
    assert!(d <= quantile(&null, 0.95), "{d} vs {}", quantile(&null, 0.95));
}

/// `E(x, theta) = (x - theta)^2 / 2`: `Z(theta)` is constant, so exchange
/// and standard MH target the same posterior, Normal(x_o / 2, 1 / 2).
struct Shift {
    x_o: Vec<f64>,
}

impl DoublyIntractable<f64> for Shift {
    fn theta_dim(&self) -> usize {
        1
    }
    fn x_dim(&self) -> usize {
        1
    }
    fn log_prior(&self, t: &[f64]) -> f64 {
        -0.5 * t[0] * t[0]
    }
    fn energy(&self, x: &[f64], t: &[f64]) -> f64 {
        0.5 * (x[0] - t[0]).powi(2)
    }
    fn energy_and_grad_x(&self, x: &[f64], t: &[f64], g: &mut [f64]) -> f64 {
        g[0] = x[0] - t[0];
        self.energy(x, t)
    }
    fn observation(&self) -> &[f64] {
        &self.x_o
    }
}

#[test]
fn exchange_agrees_with_standard_mh_under_constant_normalizer() {
    let model = Shift { x_o: vec![1.0] };
    let mut rng = SeedTree::new(3).rng();
    let mut chains: Vec<_> = (0..100).map(|_| ExchangeChain::new(&model, vec![0.0], vec![1.0], vec![1.0], 100).unwrap()).collect();
    let (ex, _) = run_exchange_chains(&model, &mut chains, 300, 10, 20, &mut rng);
    let ex: Vec<Vec<f64>> = ex.into_iter().flatten().collect();

    let post = FnTarget::new(1, |t: &[f64], g: &mut [f64]| {
        // prior times likelihood at x_o = 1
        g[0] = -t[0] + (1.0 - t[0]);
        -0.5 * t[0] * t[0] - 0.5 * (1.0 - t[0]).powi(2)
    });
    let init = ParticleCloud::uniform(vec![vec![0.0]; 100], 0.5).unwrap();
    let run = run_chains_collect(&post, &init, 300 + 200, 300, 20, &mut rng).unwrap();
    let mh: Vec<Vec<f64>> = run.samples.into_iter().flatten().collect();

    let d = energy_distance(&ex, &mh).unwrap().value;
    let null = energy_distance_null(&ex, &mh, 200, &mut rng).unwrap();
    assert!(d <= quantile(&null, 0.95), "{d} vs {}", quantile(&null, 0.95));
}
