//! Property tests for invariants that span the public API.

use kappaface_core::class_stats::MemoryBuffer;
use kappaface_core::data::{generate, SyntheticSpec};
use kappaface_core::eval::{evaluate_scores, DEFAULT_FAR_LEVELS};
use kappaface_core::losses::{loss_and_gradients, LossFamily, MarginLossConfig};
use kappaface_core::sphere::{estimate_kappa, normalize};
use kappaface_core::trainer::{lr_at, TrainConfig};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_matrix(rows: usize, cols: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..rows * cols)
        .map(|_| rng.random_range(-1.0..1.0))
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn normalize_yields_unit_vectors(v in prop::collection::vec(-1e3f64..1e3, 2..20)) {
        prop_assume!(v.iter().map(|x| x * x).sum::<f64>() > 1e-6);
        let u = normalize(&v).unwrap();
        let n: f64 = u.as_slice().iter().map(|x| x * x).sum::<f64>().sqrt();
        prop_assert!((n - 1.0).abs() < 1e-12);
    }

    #[test]
    fn kappa_estimate_increases_with_resultant(a in 0.0f64..0.999, b in 0.0f64..0.999, d in 2usize..256) {
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        prop_assume!(hi - lo > 1e-9);
        prop_assert!(estimate_kappa(lo, d).unwrap() < estimate_kappa(hi, d).unwrap());
    }

    #[test]
    fn buffer_rows_stay_unit(seed in 0u64..1000, updates in 1usize..200) {
        let labels: Vec<usize> = (0..40).map(|i| i % 5).collect();
        let mut buffer = MemoryBuffer::new(&labels, 6, 0.3, seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 1);
        for _ in 0..updates {
            let i = rng.random_range(0..labels.len());
            let z: Vec<f64> = (0..6).map(|_| rng.random_range(-1.0..1.0)).collect();
            let _ = buffer.update_sample(i, &normalize(&z).unwrap());
        }
        for i in 0..buffer.len() {
            let n: f64 = buffer.row(i).iter().map(|x| x * x).sum::<f64>().sqrt();
            prop_assert!((n - 1.0).abs() < 1e-9);
        }
        for r in buffer.epoch_concentrations().r_hat {
            prop_assert!((0.0..=1.0).contains(&r));
        }
    }

    #[test]
    fn losses_are_finite_probabilities_normalized(
        seed in 0u64..10_000,
        family_idx in 0usize..5,
        batch in 1usize..6,
        classes in 2usize..9,
        dim in 2usize..10,
        margin in 0.0f64..0.9,
    ) {
        let family = LossFamily::ALL[family_idx];
        let cfg = MarginLossConfig::new(family, 16.0, margin);
        let z = random_matrix(batch, dim, seed);
        let w = random_matrix(classes, dim, seed ^ 1);
        let labels: Vec<usize> = (0..batch).map(|i| (i * 7 + seed as usize) % classes).collect();
        let psi: Vec<f64> = (0..classes).map(|c| c as f64 / classes as f64).collect();
        let psi = (family == LossFamily::KappaFace).then_some(psi.as_slice());
        let (res, grads) = loss_and_gradients(&z, &w, &labels, dim, psi, &cfg).unwrap();
        prop_assert!(res.loss.is_finite() && res.loss >= 0.0);
        for b in 0..batch {
            let s: f64 = res.probs[b * classes..(b + 1) * classes].iter().sum();
            prop_assert!((s - 1.0).abs() < 1e-12);
        }
        prop_assert!(grads.grad_embeddings.iter().chain(&grads.grad_class_weights).all(|g| g.is_finite()));
    }

    #[test]
    fn verification_report_is_monotone(scores in prop::collection::vec((-1.0f64..1.0, any::<bool>()), 2..300)) {
        prop_assume!(scores.iter().any(|s| s.1) && scores.iter().any(|s| !s.1));
        let report = evaluate_scores(&scores, &DEFAULT_FAR_LEVELS).unwrap();
        prop_assert!((0.0..=1.0).contains(&report.accuracy));
        prop_assert!((-1.0..=1.0).contains(&report.best_threshold));
        for w in report.roc.windows(2) {
            prop_assert!(w[0].far <= w[1].far && w[0].tar <= w[1].tar);
        }
        for w in report.tar_at_far.windows(2) {
            // Levels are listed from loose to strict.
            prop_assert!(w[0].1 >= w[1].1);
        }
    }

    #[test]
    fn populations_follow_the_law(
        classes in 2usize..200,
        min_n in 2usize..20,
        extra in 0usize..600,
        exponent in 0.0f64..2.5,
    ) {
        let spec = SyntheticSpec {
            num_classes: classes,
            min_n,
            max_n: min_n + extra,
            pop_exponent: exponent,
            ..SyntheticSpec::default()
        };
        let pops = spec.populations();
        prop_assert_eq!(pops.len(), classes);
        prop_assert!(pops.windows(2).all(|w| w[0] >= w[1]));
        prop_assert!(pops.iter().all(|&n| n >= min_n && n <= min_n + extra));
    }

    #[test]
    fn lr_never_increases(lr in 1e-4f64..1.0, epochs in 2usize..60, decays in prop::collection::btree_set(1usize..59, 0..4)) {
        let decays: Vec<usize> = decays.into_iter().filter(|&e| e < epochs).collect();
        let cfg = TrainConfig { lr, epochs, lr_decay_epochs: decays, ..TrainConfig::default() };
        cfg.validate().unwrap();
        for e in 1..epochs {
            prop_assert!(lr_at(e, &cfg) <= lr_at(e - 1, &cfg));
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn generation_is_deterministic(seed in 0u64..1000) {
        let spec = SyntheticSpec { num_classes: 5, max_n: 30, seed, ..SyntheticSpec::default() };
        let a = generate(&spec).unwrap();
        prop_assert_eq!(&a, &generate(&spec).unwrap());
        prop_assert_eq!(a.populations.iter().sum::<usize>(), a.len());
    }
}
