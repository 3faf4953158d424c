use rand_distr::{Distribution, Normal};
use statrs::distribution::{ContinuousCDF, Normal as SNormal};
use unle::metrics::{c2st, energy_distance, energy_distance_null, quantile, C2stConfig};
use unle::rng::{Rng, SeedTree};

fn normal(n: usize, d: usize, mean: f64, rng: &mut Rng) -> Vec<Vec<f64>> {
    let g = Normal::new(mean, 1.0).unwrap();
    (0..n).map(|_| (0..d).map(|_| g.sample(rng)).collect()).collect()
}

/// `E|Z|` for `Z ~ N(mu, s^2)`.
fn mean_abs(mu: f64, s: f64) -> f64 {
    let phi = SNormal::new(0.0, 1.0).unwrap();
    s * (2.0 / std::f64::consts::PI).sqrt() * (-mu * mu / (2.0 * s * s)).exp() + mu * (1.0 - 2.0 * phi.cdf(-mu / s))
}

#[test]
fn c2st_null_case() {
    let mut rng = SeedTree::new(21).rng();
    let s = normal(4000, 5, 0.0, &mut rng);
    let r = c2st(&s[..2000], &s[2000..], &C2stConfig::default(), &mut rng).unwrap();
    println!("c2st null {:.4}", r.value);
    assert!((0.47..=0.55).contains(&r.value), "{}", r.value);
}

#[test]
fn c2st_matches_bayes_accuracy() {
    let mut rng = SeedTree::new(22).rng();
    let a = normal(2000, 1, 0.0, &mut rng);
    let b = normal(2000, 1, 1.0, &mut rng);
    let bayes = SNormal::new(0.0, 1.0).unwrap().cdf(0.5);
    let r = c2st(&a, &b, &C2stConfig::default(), &mut rng).unwrap();
    println!("c2st shifted {:.4} bayes {bayes:.4}", r.value);
    assert!((r.value - bayes).abs() <= 0.03);
}

#[test]
fn c2st_is_nearly_symmetric() {
    let mut worst: f64 = 0.0;
    for seed in 0..10 {
        let mut rng = SeedTree::new(300 + seed).rng();
        let a = normal(2000, 2, 0.0, &mut rng);
        let b = normal(2000, 2, 0.7, &mut rng);
        let ab = c2st(&a, &b, &C2stConfig::default(), &mut SeedTree::new(seed).rng()).unwrap().value;
        let ba = c2st(&b, &a, &C2stConfig::default(), &mut SeedTree::new(seed).rng()).unwrap().value;
        worst = worst.max((ab - ba).abs());
    }
    println!("c2st asymmetry {worst:.4}");
    assert!(worst <= 0.03);
}

#[test]
fn c2st_is_deterministic() {
    let mut rng = SeedTree::new(5).rng();
    let a = normal(200, 2, 0.0, &mut rng);
    let b = normal(200, 2, 0.3, &mut rng);
    let x = c2st(&a, &b, &C2stConfig::default(), &mut SeedTree::new(1).rng()).unwrap();
    let y = c2st(&a, &b, &C2stConfig::default(), &mut SeedTree::new(1).rng()).unwrap();
    assert_eq!(x, y);
}

#[test]
fn energy_distance_matches_gaussian_closed_form() {
    for (seed, mu) in [(1u64, 0.5), (2, 1.0), (3, 2.0)] {
        let mut rng = SeedTree::new(seed).rng();
        let a = normal(1500, 1, 0.0, &mut rng);
        let b = normal(1500, 1, mu, &mut rng);
        let exact = 2.0 * mean_abs(mu, 2f64.sqrt()) - 2.0 * 2.0 / std::f64::consts::PI.sqrt();
        let r = energy_distance(&a, &b).unwrap();
        let se = r.std_error.unwrap();
        println!("energy distance mu {mu}: {:.5} exact {exact:.5} se {se:.5}", r.value);
        assert!((r.value - exact).abs() <= 3.0 * se);
    }
}

#[test]
fn equal_laws_fall_inside_the_permutation_null() {
    let mut rng = SeedTree::new(8).rng();
    let a = normal(300, 2, 0.0, &mut rng);
    let b = normal(300, 2, 0.0, &mut rng);
    let v = energy_distance(&a, &b).unwrap().value;
    let null = energy_distance_null(&a, &b, 200, &mut rng).unwrap();
    assert!(v.abs() < quantile(&null, 0.95));
    let c = normal(300, 2, 0.5, &mut rng);
    let null = energy_distance_null(&a, &c, 200, &mut rng).unwrap();
    assert!(energy_distance(&a, &c).unwrap().value > quantile(&null, 0.95));
}
