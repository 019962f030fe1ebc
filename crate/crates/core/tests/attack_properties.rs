use std::sync::OnceLock;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use mixattack::attack::{
    attack, objective_q, AttackConfig, CategoricalDistribution, GradientEstimator, GumbelNoise, INIT_CONFIDENCE,
};
use mixattack::harness::{sample_seed, DataSource, ExperimentConfig, Pipeline};
use mixattack::model::TrainConfig;
use mixattack::numerics::l1_steepest_step;

fn pipeline() -> &'static Pipeline {
    static P: OnceLock<Pipeline> = OnceLock::new();
    P.get_or_init(|| {
        let cfg = ExperimentConfig {
            data: DataSource::Synthetic { n_samples: 2000 },
            seed: 7,
            training: TrainConfig {
                epochs: 15,
                ..TrainConfig::default()
            },
            ..ExperimentConfig::default()
        };
        Pipeline::build(&cfg).unwrap()
    })
}

fn without_time(mut r: mixattack::attack::AttackResult) -> mixattack::attack::AttackResult {
    r.wall_time_secs = 0.0;
    r
}

#[test]
fn zero_steps_returns_clean_sample() {
    let p = pipeline();
    let ctx = p.context();
    for &i in &p.eval_indices(10, 1).unwrap() {
        let cfg = AttackConfig {
            steps: 0,
            lambda: 6.0,
            ..AttackConfig::default()
        };
        let r = attack(&ctx, &p.test_x[i], p.test_y[i], &cfg).unwrap();
        assert_eq!(r.dense(&p.layout), p.test_x[i]);
        assert!(!r.success);
        assert_eq!(r.l0_cat_changes, 0);
        assert_eq!(r.l1_num_perturbation, 0.0);
    }
}

#[test]
fn identical_seed_gives_identical_result() {
    let p = pipeline();
    let ctx = p.context();
    let i = p.eval_indices(1, 2).unwrap()[0];
    let cfg = AttackConfig {
        lambda: 0.5,
        seed: 99,
        record_trace: true,
        ..AttackConfig::default()
    };
    let a = without_time(attack(&ctx, &p.test_x[i], p.test_y[i], &cfg).unwrap());
    let b = without_time(attack(&ctx, &p.test_x[i], p.test_y[i], &cfg).unwrap());
    assert_eq!(a, b);
}

#[test]
fn loss_rises_on_almost_every_sample() {
    let p = pipeline();
    let ctx = p.context();
    let idx = p.eval_indices(100, 3).unwrap();
    let risen = idx
        .iter()
        .filter(|&&i| {
            let cfg = AttackConfig {
                seed: sample_seed(3, i),
                ..AttackConfig::default()
            };
            let r = attack(&ctx, &p.test_x[i], p.test_y[i], &cfg).unwrap();
            r.loss >= p.model.loss(&p.test_x[i], p.test_y[i])
        })
        .count();
    assert!(risen * 100 >= 95 * idx.len(), "{risen}/{}", idx.len());
}

#[test]
fn q_reduces_to_clean_loss() {
    let p = pipeline();
    let ctx = p.context();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let sizes: Vec<usize> = p.layout.blocks.iter().map(|b| b.size).collect();
    for &i in &p.eval_indices(5, 4).unwrap() {
        let x = &p.test_x[i];
        let cats = p.layout.categories_of(x);
        let mut pi = CategoricalDistribution::concentrated(&cats, &sizes, INIT_CONFIDENCE);
        pi.logits.iter_mut().zip(&cats).for_each(|(l, &c)| l[c] = 30.0);
        let noise = vec![GumbelNoise::sample(&sizes, &mut rng)];
        let cfg = AttackConfig {
            alpha_ce: 0.0,
            ..AttackConfig::default()
        };
        let q = objective_q(&ctx, x, p.test_y[i], &x[..p.layout.num_numerical], &pi, &noise, &cfg).unwrap();
        let clean = p.model.loss(x, p.test_y[i]);
        assert!((q.q - clean).abs() < 1e-9, "{} vs {clean}", q.q);
    }
}

#[test]
fn q_never_increases_with_lambda() {
    let p = pipeline();
    let ctx = p.context();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let sizes: Vec<usize> = p.layout.blocks.iter().map(|b| b.size).collect();
    let i = p.eval_indices(1, 5).unwrap()[0];
    let x = &p.test_x[i];
    let x_num: Vec<f64> = x[..p.layout.num_numerical].iter().map(|v| v + 0.05).collect();
    let pi = CategoricalDistribution::concentrated(&p.layout.categories_of(x), &sizes, 0.6);
    let noise: Vec<GumbelNoise> = (0..4).map(|_| GumbelNoise::sample(&sizes, &mut rng)).collect();
    let mut last = f64::INFINITY;
    for lambda in [0.0, 0.1, 1.0, 6.0, 50.0] {
        let cfg = AttackConfig {
            lambda,
            ..AttackConfig::default()
        };
        let q = objective_q(&ctx, x, p.test_y[i], &x_num, &pi, &noise, &cfg).unwrap().q;
        assert!(q <= last);
        last = q;
    }
}

/// A tiny step along the analytic gradient never lowers Q (frozen noise, λ=0).
#[test]
fn small_steps_ascend() {
    let p = pipeline();
    let ctx = p.context();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let sizes: Vec<usize> = p.layout.blocks.iter().map(|b| b.size).collect();
    let d_n = p.layout.num_numerical;
    for &i in &p.eval_indices(20, 6).unwrap() {
        let x = &p.test_x[i];
        let y = p.test_y[i];
        let pi = CategoricalDistribution::concentrated(&p.layout.categories_of(x), &sizes, 0.7);
        let noise: Vec<GumbelNoise> = (0..2).map(|_| GumbelNoise::sample(&sizes, &mut rng)).collect();
        let cfg = AttackConfig {
            estimator: GradientEstimator::Relaxed,
            ..AttackConfig::default()
        };
        let x_num = x[..d_n].to_vec();
        let before = objective_q(&ctx, x, y, &x_num, &pi, &noise, &cfg).unwrap();
        let delta = l1_steepest_step(&before.grad_num, 1e-7, 1).unwrap();
        let moved: Vec<f64> = x_num.iter().zip(&delta).map(|(a, b)| a + b).collect();
        let mut stepped = pi.clone();
        for (l, g) in stepped.logits.iter_mut().zip(&before.grad_logits) {
            l.iter_mut().zip(g).for_each(|(a, b)| *a += 1e-7 * b);
        }
        let after = objective_q(&ctx, x, y, &moved, &stepped, &noise, &cfg).unwrap();
        assert!(after.q >= before.q - 1e-8, "{} < {}", after.q, before.q);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn results_respect_budgets(
        eps1 in 0.01f64..2.0,
        eps2 in 0usize..=7,
        lambda in prop_oneof![Just(0.0), 0.0f64..8.0],
        seed in any::<u64>(),
        pick in 0usize..50,
    ) {
        let p = pipeline();
        let ctx = p.context();
        let idx = p.eval_indices(50, 8).unwrap();
        let i = idx[pick % idx.len()];
        let cfg = AttackConfig {
            epsilon1: eps1,
            epsilon2: eps2,
            lambda,
            steps: 40,
            seed,
            ..AttackConfig::default()
        };
        let r = attack(&ctx, &p.test_x[i], p.test_y[i], &cfg).unwrap();
        let clean = &p.test_x[i];
        let l1: f64 = r.adv_numerics.iter().zip(clean).map(|(a, b)| (a - b).abs()).sum();
        let l0 = r.adv_categoricals.iter().zip(p.layout.categories_of(clean)).filter(|(a, b)| **a != *b).count();
        prop_assert!(l1 <= eps1 + 1e-9);
        prop_assert!(l0 <= eps2);
        prop_assert_eq!(l0, r.l0_cat_changes);
        prop_assert_eq!(r.success, p.model.predict(&r.dense(&p.layout)) != p.test_y[i]);
    }
}
