use proptest::prelude::*;
use unle::metrics::energy_distance;
use unle::nn::{Activation, NetParams};
use unle::rng::SeedTree;
use unle::samplers::systematic_resample;
use unle::tasks::{Dataset, Task, TaskName};

fn points(n: std::ops::Range<usize>, d: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(prop::collection::vec(-5.0f64..5.0, d), n)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn resample_counts_stay_within_one_of_expectation(
        w in prop::collection::vec(0.0f64..1.0, 1..40),
        n in 1usize..200,
        seed in any::<u64>(),
    ) {
        let total: f64 = w.iter().sum();
        prop_assume!(total > 1e-6);
        let idx = systematic_resample(&w, n, &mut SeedTree::new(seed).rng());
        prop_assert_eq!(idx.len(), n);
        let mut counts = vec![0usize; w.len()];
        for &i in &idx {
            counts[i] += 1;
        }
        for (c, wi) in counts.iter().zip(&w) {
            let expect = n as f64 * wi / total;
            prop_assert!((*c as f64 - expect).abs() < 1.0 + 1e-9, "count {} vs {}", c, expect);
        }
    }

    #[test]
    fn energy_distance_ignores_order(a in points(2..12, 2), b in points(2..12, 2), k in 0usize..100) {
        let d = energy_distance(&a, &b).unwrap().value;
        let mut a2 = a.clone();
        a2.rotate_left(k % a.len());
        let mut b2 = b.clone();
        b2.reverse();
        prop_assert_eq!(d, energy_distance(&a2, &b2).unwrap().value);
        prop_assert_eq!(energy_distance(&a, &a).unwrap().value, 0.0);
    }

    #[test]
    fn energy_distance_scales_linearly(a in points(2..10, 3), b in points(2..10, 3), c in 0.1f64..10.0) {
        let d = energy_distance(&a, &b).unwrap().value;
        let scale = |v: &Vec<Vec<f64>>| v.iter().map(|p| p.iter().map(|x| c * x).collect()).collect::<Vec<Vec<f64>>>();
        let dc = energy_distance(&scale(&a), &scale(&b)).unwrap().value;
        prop_assert!((dc - c * d).abs() <= 1e-9 * (1.0 + c * d.abs()), "{} vs {}", dc, c * d);
    }

    #[test]
    fn input_gradient_matches_finite_differences(seed in any::<u64>(), x in prop::collection::vec(-2.0f64..2.0, 3)) {
        let net = NetParams::<f64>::init(&[3, 8, 8, 1], Activation::Swish, &mut SeedTree::new(seed).rng()).unwrap();
        let g = net.grad_input(&x).unwrap();
        let h = 1e-5;
        for i in 0..3 {
            let (mut xp, mut xm) = (x.clone(), x.clone());
            xp[i] += h;
            xm[i] -= h;
            let fd = (net.forward(&xp).unwrap()[0] - net.forward(&xm).unwrap()[0]) / (2.0 * h);
            prop_assert!((fd - g[i]).abs() <= 1e-6 * (1.0 + fd.abs()), "{} vs {}", fd, g[i]);
        }
    }

    #[test]
    fn checkpoints_round_trip_exactly(seed in any::<u64>(), width in 1usize..10) {
        let net = NetParams::<f64>::init(&[2, width, 1], Activation::Tanh, &mut SeedTree::new(seed).rng()).unwrap();
        let back = NetParams::<f64>::from_json(&net.to_json().unwrap()).unwrap();
        prop_assert_eq!(net, back);
    }

    #[test]
    fn datasets_round_trip_through_csv(mut rows in prop::collection::vec((0usize..4, prop::collection::vec(-1e6f64..1e6, 3)), 0..20)) {
        rows.sort_by_key(|r| r.0);
        let mut ds = Dataset::new(1, 2);
        for (r, v) in &rows {
            ds.push(*r, vec![v[0]], vec![v[1], v[2]]).unwrap();
        }
        let mut buf = Vec::new();
        ds.write_csv(&mut buf).unwrap();
        prop_assert_eq!(Dataset::read_csv(buf.as_slice()).unwrap(), ds);
    }

    #[test]
    fn prior_draws_lie_in_the_support(seed in any::<u64>(), which in 0usize..5) {
        let task = Task::new(TaskName::ALL[which]);
        let mut rng = SeedTree::new(seed).rng();
        for _ in 0..20 {
            let t = task.prior().sample(&mut rng);
            prop_assert!(task.prior().contains(&t));
            prop_assert!(task.prior().log_pdf(&t).is_finite());
        }
    }

    #[test]
    fn seed_streams_are_reproducible(seed in any::<u64>(), i in any::<u64>()) {
        use rand::Rng;
        let t = SeedTree::new(seed);
        prop_assert_eq!(t.child(i).rng().random::<u64>(), t.child(i).rng().random::<u64>());
        prop_assert_ne!(t.child(i).key(), t.child(i.wrapping_add(1)).key());
    }
}
