use fairbandit_core::dataset::LoggingPolicyKind;
use fairbandit_core::multigroup::{MultigroupTrainer, multigroup_weight};
use fairbandit_core::trainer::{dual_step, group_weight, VanillaTrainer};
use fairbandit_core::{
    BanditDataset, DualState, Epsilon, GbtConfig, GbtRewardModel, GcpgTrainer, PlantedAdvantage,
    TrainConfig,
};
use proptest::prelude::*;

fn setup(n: usize, seed: u64) -> (BanditDataset, GbtRewardModel) {
    let data = PlantedAdvantage::two_group()
        .generate(n, &LoggingPolicyKind::Random, seed)
        .unwrap();
    let model = GbtRewardModel::fit(
        &data,
        &GbtConfig {
            num_trees: 5,
            ..GbtConfig::default()
        },
    )
    .unwrap();
    (data, model)
}

fn small_config(seed: u64) -> TrainConfig {
    TrainConfig {
        alpha: 0.05,
        beta: 2.0,
        iterations: 30,
        batch_size: 64,
        hidden: vec![8],
        seed,
        epsilon: Epsilon::Value(0.0),
        ..TrainConfig::default()
    }
}

#[test]
fn unconstrained_run_is_bitwise_plain_policy_gradient() {
    let (data, model) = setup(1500, 1);
    let config = TrainConfig {
        unconstrained: true,
        ..small_config(3)
    };
    let mut gc = GcpgTrainer::new(&data, &model, &config).unwrap();
    let mut plain = VanillaTrainer::new(&data, &model, &config).unwrap();
    for _ in 0..config.iterations {
        let rec = gc.step().unwrap();
        assert_eq!((rec.lambda, rec.eta), (0.0, 0.0));
        plain.step().unwrap();
        let same = gc
            .policy()
            .params()
            .iter()
            .zip(plain.policy().params())
            .all(|(a, b)| a.to_bits() == b.to_bits());
        assert!(same);
    }
}

#[test]
fn training_is_reproducible() {
    let (data, model) = setup(1000, 2);
    let a = fairbandit_core::train(&data, &model, &small_config(5)).unwrap();
    let b = fairbandit_core::train(&data, &model, &small_config(5)).unwrap();
    assert_eq!(a.policy, b.policy);
    assert_eq!(a.trace.records, b.trace.records);
    let c = fairbandit_core::train(&data, &model, &small_config(6)).unwrap();
    assert_ne!(a.policy, c.policy);
}

#[test]
fn traces_respect_projection_bounds() {
    let (data, model) = setup(1500, 4);
    let out = fairbandit_core::train(&data, &model, &small_config(0)).unwrap();
    assert_eq!(out.trace.len(), 30);
    for r in &out.trace.records {
        assert!((0.0..=0.5).contains(&r.lambda) && (0.0..=0.5).contains(&r.eta));
        assert!(r.min_weight >= 0.5 && r.max_weight <= 1.5);
    }
}

#[test]
fn two_group_multigroup_run_matches_the_two_group_trainer() {
    let (data, model) = setup(1500, 7);
    let config = small_config(2);
    let two = fairbandit_core::train(&data, &model, &config).unwrap();
    let mut multi = MultigroupTrainer::new(&data, &model, &config).unwrap();
    for _ in 0..config.iterations {
        multi.step().unwrap();
    }
    assert_eq!(&two.policy, multi.policy());
}

proptest! {
    #[test]
    fn dual_step_stays_in_box(
        lambda in 0.0f64..=0.5, eta in 0.0f64..=0.5,
        v0 in -2.0f64..2.0, v1 in -2.0f64..2.0,
        eps in 0.0f64..0.3, beta in 0.0f64..10.0,
    ) {
        let d = dual_step(DualState { lambda, eta }, v0, v1, eps, beta, 0.5);
        prop_assert!((0.0..=0.5).contains(&d.lambda));
        prop_assert!((0.0..=0.5).contains(&d.eta));
        for g in 0..2 {
            for flip in [false, true] {
                let w = group_weight(g, d, flip);
                prop_assert!((0.5..=1.5).contains(&w));
            }
        }
        for g in 0..4 {
            let w = multigroup_weight(g, (1, 3), d, false);
            prop_assert!((0.5..=1.5).contains(&w));
        }
    }

    #[test]
    fn lambda_grows_only_on_violation(v0 in 0.0f64..1.0, v1 in 0.0f64..1.0, eps in 0.0f64..0.2) {
        let d = dual_step(DualState::default(), v0, v1, eps, 1.0, 0.5);
        if v1 - v0 > eps { prop_assert!(d.lambda > 0.0) } else { prop_assert_eq!(d.lambda, 0.0) }
        if v0 - v1 > eps { prop_assert!(d.eta > 0.0) } else { prop_assert_eq!(d.eta, 0.0) }
    }
}
