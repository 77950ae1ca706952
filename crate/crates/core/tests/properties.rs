use dylora_core::optimizer::OptimizerState;
use dylora_core::trainer::{apply_update_cascade, apply_update_frozen, dynamic_loss};
use dylora_core::Rng;
use dylora_core::*;
use proptest::prelude::*;

fn matrix(seed: u64, rows: usize, cols: usize) -> Matrix {
    Matrix::gaussian(&mut Rng::new(seed), rows, cols, 1.0).unwrap()
}

fn random_adapter(seed: u64, m: usize, d: usize, r_min: usize, r_max: usize) -> DyLoraAdapter {
    let mut rng = Rng::new(seed);
    let w0 = Matrix::gaussian(&mut rng, m, d, 1.0).unwrap();
    let up = Matrix::gaussian(&mut rng, m, r_max, 0.3).unwrap();
    let dw = Matrix::gaussian(&mut rng, r_max, d, 0.3).unwrap();
    DyLoraAdapter::from_parts(w0, up, dw, 16.0, r_min, r_max).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn matmul_is_associative(seed in any::<u64>(), m in 1usize..8, k in 1usize..8, l in 1usize..8, n in 1usize..8) {
        let a = matrix(seed, m, k);
        let b = matrix(seed ^ 1, k, l);
        let c = matrix(seed ^ 2, l, n);
        let left = a.matmul(&b).unwrap().matmul(&c).unwrap();
        let right = a.matmul(&b.matmul(&c).unwrap()).unwrap();
        let err = left.sub(&right).unwrap().frobenius_norm() / left.frobenius_norm().max(1e-300);
        prop_assert!(err < 1e-10);
    }

    #[test]
    fn full_slices_are_identity(seed in any::<u64>(), r in 1usize..9, c in 1usize..9) {
        let a = matrix(seed, r, c);
        let copy = a.clone();
        prop_assert_eq!(a.slice_rows(1, r).unwrap(), a.clone());
        prop_assert_eq!(a.slice_cols(1, c).unwrap(), a.clone());
        prop_assert_eq!(a, copy);
    }

    #[test]
    fn rng_state_round_trips(seed in any::<u64>(), stream in 0u64..4, skip in 0usize..100) {
        let mut rng = Rng::with_stream(seed, stream);
        for _ in 0..skip { rng.next_u64(); }
        let mut resumed = Rng::from_state(RngState::from_bytes(&rng.state().to_bytes()));
        prop_assert_eq!(rng.next_u64(), resumed.next_u64());
        prop_assert_eq!(rng.standard_normal(), resumed.standard_normal());
    }

    #[test]
    fn samples_stay_in_support(seed in any::<u64>(), r_min in 1usize..6, extra in 0usize..6, p in 0.01f64..0.99) {
        let r_max = r_min + extra;
        let mut rng = Rng::new(seed);
        for dist in [RankDistribution::uniform(r_min, r_max).unwrap(), RankDistribution::geometric(r_min, r_max, p).unwrap()] {
            prop_assert!((dist.probabilities().iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(dist.probabilities().iter().all(|&q| q > 0.0));
            for _ in 0..50 {
                let b = dist.sample(&mut rng);
                prop_assert!((r_min..=r_max).contains(&b));
            }
        }
    }

    #[test]
    fn forward_matches_merge_and_keeps_w0(seed in any::<u64>(), m in 2usize..10, d in 2usize..10, n in 1usize..5) {
        let r_max = m.min(d);
        let a = random_adapter(seed, m, d, 1, r_max);
        let w0 = a.w0().clone();
        let x = matrix(seed ^ 7, d, n);
        for b in 1..=r_max {
            let h = a.forward(&x, b).unwrap();
            let via_merge = a.merge(b).unwrap().matmul(&x).unwrap();
            prop_assert!(h.sub(&via_merge).unwrap().max_abs() < 1e-12);
            let g = a.backward(&x, b, &h).unwrap();
            prop_assert_eq!(g.g_up.shape(), (m, b));
            prop_assert_eq!(g.g_dw.shape(), (b, d));
        }
        prop_assert_eq!(a.w0(), &w0);
    }

    #[test]
    fn update_isolation(seed in any::<u64>(), b in 1usize..6) {
        let task = TeacherTask::generate(&mut Rng::new(seed), TeacherSpec { m: 6, d: 7, r_star: 2, samples: 20, noise: 0.01 }).unwrap();
        let mut a = DyLoraAdapter::from_parts(
            task.w0.clone(),
            matrix(seed ^ 3, 6, 5).scale(0.2),
            matrix(seed ^ 4, 5, 7).scale(0.2),
            16.0, 1, 5,
        ).unwrap();
        let mut state = OptimizerState::new(OptimizerKind::adamw_default(), &a);
        let (_, g) = dynamic_loss(&a, task.train_set(), b).unwrap();
        let before = a.clone();
        apply_update_frozen(&mut a, &g, b, 1e-2, &mut state).unwrap();
        for k in 1..=5 {
            if k != b {
                prop_assert_eq!(a.w_dw().row(k - 1), before.w_dw().row(k - 1));
                prop_assert_eq!(a.w_up().slice_cols(k, k).unwrap(), before.w_up().slice_cols(k, k).unwrap());
            }
        }
        let before = a.clone();
        let (_, g) = dynamic_loss(&a, task.train_set(), b).unwrap();
        apply_update_cascade(&mut a, &g, b, 1e-2, &mut state).unwrap();
        if b < 5 {
            prop_assert_eq!(a.w_dw().slice_rows(b + 1, 5).unwrap(), before.w_dw().slice_rows(b + 1, 5).unwrap());
            prop_assert_eq!(a.w_up().slice_cols(b + 1, 5).unwrap(), before.w_up().slice_cols(b + 1, 5).unwrap());
        }
        prop_assert_eq!(a.w0(), before.w0());
    }
}

#[test]
fn cascade_leaves_higher_slices_over_many_steps() {
    let task = TeacherTask::generate(
        &mut Rng::new(1),
        TeacherSpec {
            m: 8,
            d: 8,
            r_star: 4,
            samples: 64,
            noise: 0.0,
        },
    )
    .unwrap();
    let mut a =
        DyLoraAdapter::init(&mut Rng::new(2), task.w0.clone(), AdapterSpec::new(1, 6)).unwrap();
    let mut state = OptimizerState::new(OptimizerKind::Sgd, &a);
    let dist = RankDistribution::uniform(1, 6).unwrap();
    let mut rng = Rng::new(3);
    for _ in 0..100 {
        let b = dist.sample(&mut rng);
        let (_, g) = dynamic_loss(&a, task.train_set(), b).unwrap();
        let before = a.clone();
        apply_update_cascade(&mut a, &g, b, 0.01, &mut state).unwrap();
        if b < 6 {
            assert_eq!(
                a.w_dw().slice_rows(b + 1, 6).unwrap(),
                before.w_dw().slice_rows(b + 1, 6).unwrap()
            );
            assert_eq!(
                a.w_up().slice_cols(b + 1, 6).unwrap(),
                before.w_up().slice_cols(b + 1, 6).unwrap()
            );
        }
    }
}

#[test]
fn noiseless_teacher_is_fit_at_its_rank() {
    let spec = TeacherSpec {
        m: 16,
        d: 16,
        r_star: 4,
        samples: 512,
        noise: 0.0,
    };
    let task = TeacherTask::generate(&mut Rng::new(11), spec).unwrap();
    let a =
        DyLoraAdapter::init(&mut Rng::new(12), task.w0.clone(), AdapterSpec::new(4, 4)).unwrap();
    let cfg = TrainConfig {
        steps: 4000,
        learning_rate: 5e-3,
        ..TrainConfig::default()
    };
    let out = trainer::train_static_lora(a, &task, &cfg, 4).unwrap();
    let mse = tasks::eval_task(&out.adapter, &task, 4).unwrap();
    assert!(mse < 1e-4, "eval mse {mse}");
}

#[test]
fn separable_two_class_task_reaches_full_accuracy() {
    let spec = ClassifySpec {
        input_dim: 4,
        feature_dim: 8,
        classes: 2,
        samples: 200,
        separation: 3.0,
        spread: 0.3,
    };
    let task = ClassifyTask::generate(&mut Rng::new(21), spec).unwrap();
    let a =
        DyLoraAdapter::init(&mut Rng::new(22), task.head.clone(), AdapterSpec::new(1, 2)).unwrap();
    let cfg = TrainConfig {
        steps: 1500,
        learning_rate: 1e-2,
        ..TrainConfig::default()
    };
    let out = trainer::train(a, &task, &cfg).unwrap();
    for b in 1..=2 {
        assert_eq!(
            tasks::eval_task(&out.adapter, &task, b).unwrap(),
            1.0,
            "rank {b}"
        );
    }
}
