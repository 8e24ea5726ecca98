use mesocal::calibrate::{
    spsa_calibrate, Bounds, CalibError, CountingObjective, Evaluation, FnObjective, GainSchedule, SpsaSettings, Tolerance,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const DIM: usize = 6;

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

fn bounds() -> Bounds {
    Bounds::new(vec![-5.0; DIM], vec![5.0; DIM]).unwrap()
}

/// Interior target and a start at least 3 units away in every coordinate.
fn instance(seed: u64) -> (Vec<f64>, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let target: Vec<f64> = (0..DIM).map(|_| rng.random_range(-2.0..2.0)).collect();
    let start: Vec<f64> = target
        .iter()
        .map(|t| {
            if *t > 0.0 {
                -5.0 + rng.random_range(0.0..1.0)
            } else {
                5.0 - rng.random_range(0.0..1.0)
            }
        })
        .collect();
    (target, start)
}

fn quadratic(target: Vec<f64>) -> impl Fn(&[f64], u64) -> Result<Evaluation, CalibError> + Sync {
    move |theta: &[f64], _| {
        let l = sq_dist(theta, &target);
        Ok(Evaluation {
            loss: l,
            total_travel_time: l,
        })
    }
}

/// Deterministic noise in `[-amp, amp]` from the point and seed, so the two
/// evaluations of an iteration see different noise.
fn noise(theta: &[f64], seed: u64, amp: f64) -> f64 {
    let mut h = seed ^ 0x51_7c_c1_b7_27_22_0a_95;
    for v in theta {
        h = (h ^ v.to_bits()).wrapping_mul(0x100_0000_01b3);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(h);
    rng.random_range(-amp..=amp)
}

const MAX_ITER: usize = 200;

fn gains() -> GainSchedule {
    // In unit coordinates the surrogate's curvature is 2 * 10² per axis.
    GainSchedule::standard(0.02, 0.05, MAX_ITER)
}

fn settings(seed: u64) -> SpsaSettings {
    SpsaSettings {
        max_iter: MAX_ITER,
        tolerance: Tolerance::Absolute(1e-12),
        min_iter: 0,
        seed,
    }
}

#[test]
fn quadratic_surrogate_converges_for_every_seed() {
    for seed in 0..10 {
        let (target, start) = instance(seed);
        let obj = FnObjective(quadratic(target.clone()));
        let run = spsa_calibrate(&obj, &start, &bounds(), &gains(), &settings(seed)).unwrap();
        let ratio = sq_dist(&run.theta_opt, &target).sqrt() / sq_dist(&start, &target).sqrt();
        assert!(run.iterations() <= MAX_ITER);
        assert!(ratio <= 0.05, "seed {seed}: ratio {ratio}");
    }
}

#[test]
fn noisy_surrogate_reaches_noise_floor() {
    let amp = 0.1;
    let mut hits = 0;
    for seed in 0..10 {
        let (target, start) = instance(100 + seed);
        let t2 = target.clone();
        let obj = FnObjective(move |theta: &[f64], s: u64| {
            let l = sq_dist(theta, &t2) + noise(theta, s, amp);
            Ok(Evaluation {
                loss: l,
                total_travel_time: l,
            })
        });
        let run = spsa_calibrate(&obj, &start, &bounds(), &gains(), &settings(seed)).unwrap();
        if sq_dist(&run.theta_opt, &target) <= 4.0 * amp {
            hits += 1;
        }
    }
    assert!(hits >= 8, "{hits}/10 seeds reached the noise floor");
}

#[test]
fn gradient_sign_matches_on_one_dimension() {
    // One SPSA step on a 1-D quadratic moves toward the minimizer whenever
    // the iterate is farther than the perturbation from it.
    let b = Bounds::new(vec![0.0], vec![1.0]).unwrap();
    let g = GainSchedule::standard(1e-3, 0.02, 10);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..500 {
        let target = rng.random_range(0.1..0.9);
        let x0: f64 = rng.random_range(0.0..1.0);
        if (x0 - target).abs() <= g.perturbation(0) {
            continue;
        }
        let obj = FnObjective(quadratic(vec![target]));
        let s = SpsaSettings {
            max_iter: 1,
            tolerance: Tolerance::Absolute(1.0),
            min_iter: 0,
            seed: rng.random(),
        };
        let run = spsa_calibrate(&obj, &[x0], &b, &g, &s).unwrap();
        let x1 = run.theta_opt[0];
        assert!((x1 - x0) * (target - x0) > 0.0, "x0 {x0} target {target} x1 {x1}");
    }
}

#[test]
fn evaluation_count_is_twice_iterations() {
    for seed in 0..5 {
        let (target, start) = instance(seed);
        let obj = FnObjective(quadratic(target));
        let counter = CountingObjective::new(&obj);
        let s = SpsaSettings {
            tolerance: Tolerance::Relative(1e-3),
            ..settings(seed)
        };
        let run = spsa_calibrate(&counter, &start, &bounds(), &gains(), &s).unwrap();
        assert_eq!(counter.count(), 2 * run.iterations() + 2 * run.retries);
        assert_eq!(run.retries, 0);
    }
}

#[test]
fn reruns_are_identical() {
    let (target, start) = instance(9);
    let t2 = target.clone();
    let obj = FnObjective(move |theta: &[f64], s: u64| {
        let l = sq_dist(theta, &t2) + noise(theta, s, 0.5);
        Ok(Evaluation {
            loss: l,
            total_travel_time: l,
        })
    });
    let a = spsa_calibrate(&obj, &start, &bounds(), &gains(), &settings(4)).unwrap();
    let b = spsa_calibrate(&obj, &start, &bounds(), &gains(), &settings(4)).unwrap();
    assert_eq!(a, b);
    let c = spsa_calibrate(&obj, &start, &bounds(), &gains(), &settings(5)).unwrap();
    assert_ne!(a.history, c.history);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn iterates_stay_in_box(
        seed in any::<u64>(),
        target in prop::collection::vec(-20.0f64..20.0, DIM),
        a in 0.001f64..5.0,
        c in 0.01f64..0.5,
    ) {
        // Targets outside the box and aggressive gains push against the walls.
        let b = bounds();
        let obj = FnObjective(quadratic(target));
        let run = spsa_calibrate(&obj, &[0.0; DIM], &b, &GainSchedule::standard(a, c, 30), &SpsaSettings {
            max_iter: 30,
            tolerance: Tolerance::Absolute(1e-300),
            min_iter: 0,
            seed,
        }).unwrap();
        prop_assert_eq!(run.theta_history().len(), run.loss_history().len());
        prop_assert_eq!(run.loss_history().len(), run.total_travel_time_history().len());
        for th in run.theta_history() {
            prop_assert!(b.contains(&th));
        }
        prop_assert!(b.contains(&run.theta_opt));
    }
}
