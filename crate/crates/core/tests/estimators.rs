mod common;

use common::{close, three_samples, Fixed, Lookup};
use fairbandit_core::dataset::{GroupFilter, LoggedSample, LoggingPolicyKind};
use fairbandit_core::estimators::{
    dr_per_sample_reward, mse_bound_check, value_dm, value_dr, value_ips, variance_breakdown,
    DiagnosticOptions,
};
use fairbandit_core::rng::stream_rng;
use fairbandit_core::{BanditDataset, Evaluator, Method, PlantedAdvantage, PredictionTable};

const TOL: f64 = 1e-12;

#[test]
fn three_sample_values_match_hand_sums() {
    let (d, p, m) = three_samples();
    let dm = (0.2 * 0.3 + 0.8 * 0.6) + (0.2 * 0.5 + 0.8 * 0.1) + (0.2 * 0.9 + 0.8 * 0.2);
    close(value_dm(&p, &m, &d, GroupFilter::Overall).unwrap().value, dm / 3.0, TOL);

    let ips = 0.8 / 0.5 * 1.0 + 0.2 / 0.25 * 0.0 + 0.2 / 0.75 * 1.0;
    close(value_ips(&p, &d, GroupFilter::Overall).unwrap().value, ips / 3.0, TOL);

    let dr0 = 0.54 + 0.8 / 0.5 * (1.0 - 0.6);
    let dr1 = 0.18 + 0.2 / 0.25 * (0.0 - 0.5);
    let dr2 = 0.34 + 0.2 / 0.75 * (1.0 - 0.9);
    close(value_dr(&p, &m, &d, GroupFilter::Overall).unwrap().value, (dr0 + dr1 + dr2) / 3.0, TOL);
    close(value_dr(&p, &m, &d, GroupFilter::Group(0)).unwrap().value, dr0, TOL);
    close(value_dr(&p, &m, &d, GroupFilter::Group(1)).unwrap().value, (dr1 + dr2) / 2.0, TOL);
    close(
        fairbandit_core::estimators::disparity(&p, &m, &d, Method::Dr, 0, 1).unwrap(),
        (dr0 - (dr1 + dr2) / 2.0).abs(),
        TOL,
    );
}

#[test]
fn three_sample_variance_terms_match_hand_sums() {
    let (d, p, m) = three_samples();
    let v = variance_breakdown(&p, &m, &d).unwrap();
    let xi2 = (0.4f64 * 1.6).powi(2) + (0.5f64 * 0.8).powi(2) + (0.1f64 * 0.2 / 0.75).powi(2);
    close(v.term_if_error, xi2 / 3.0, TOL);
    let dms = [0.54, 0.18, 0.34];
    let mean = (0.54 + 0.18 + 0.34) / 3.0;
    let var = dms.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / 3.0;
    close(v.term_dm_variance, var, TOL);
    let pen = 0.2 / 0.8 * 0.16 + 0.8 / 0.2 * 0.25 + 0.8 / 0.2 * 0.01;
    close(v.term_weight_penalty, pen / 3.0, TOL);
    close(v.total_bound, (xi2 / 3.0 + var + pen / 3.0) / 3.0, TOL);
}

#[test]
fn weight_cap_applies_to_if_term_only() {
    let s = LoggedSample::new(vec![0.0], 0, 1.0, 0.001, 0).unwrap();
    let d = BanditDataset::new(vec![s], 2, 1, 2, 1.0).unwrap();
    let m = Lookup(vec![vec![0.0, 0.0]]);
    let p = Fixed(vec![0.5, 0.5]);
    let t = PredictionTable::build(&m, &d).unwrap();
    let v = Evaluator::new(&d, &t)
        .unwrap()
        .variance_breakdown(&p, DiagnosticOptions::default())
        .unwrap();
    close(v.term_if_error, 100.0 * 100.0, TOL);
    close(v.term_weight_penalty, 1.0, TOL);
}

#[test]
fn group_disparity_example() {
    assert!(((0.902f64 - 0.737).abs() - 0.165).abs() < 1e-12);
    let samples = vec![
        LoggedSample::new(vec![0.0], 0, 0.902, 0.5, 0).unwrap(),
        LoggedSample::new(vec![1.0], 0, 0.737, 0.5, 1).unwrap(),
    ];
    let d = BanditDataset::new(samples, 2, 1, 2, 1.0).unwrap();
    let m = Lookup(vec![vec![0.902, 0.0], vec![0.737, 0.0]]);
    let p = Fixed(vec![1.0, 0.0]);
    let gap = fairbandit_core::estimators::disparity(&p, &m, &d, Method::Dm, 0, 1)
        .unwrap();
    close(gap, 0.165, 1e-12);
}

#[test]
fn per_sample_reward_expectation_is_the_dr_term() {
    let (d, p, m) = three_samples();
    for s in d.samples() {
        let expected: f64 = (0..2)
            .map(|a| p.0[a] * dr_per_sample_reward(&m, s, a).unwrap().value)
            .sum();
        let single = BanditDataset::new(vec![s.clone()], 2, 1, 2, 1.0).unwrap();
        let filter = GroupFilter::Group(s.group);
        close(expected, value_dr(&p, &m, &single, filter).unwrap().value, TOL);
    }
}

#[test]
fn ips_and_dr_are_unbiased_on_the_synthetic() {
    let env = PlantedAdvantage::two_group();
    let target = Fixed(vec![0.8, 0.2]);
    let (truth, _) = env.true_values(&target, 200_000, 11).unwrap();
    struct Flat;
    impl fairbandit_core::RewardEstimator for Flat {
        fn num_arms(&self) -> usize {
            2
        }
        fn predict(&self, _: &[f64], _: usize) -> fairbandit_core::Result<f64> {
            Ok(0.3)
        }
    }
    let (mut ips, mut dr) = (Vec::new(), Vec::new());
    for seed in 0..200 {
        let d = env.generate(500, &LoggingPolicyKind::Random, 1000 + seed).unwrap();
        ips.push(value_ips(&target, &d, GroupFilter::Overall).unwrap().value);
        dr.push(value_dr(&target, &Flat, &d, GroupFilter::Overall).unwrap().value);
    }
    for xs in [ips, dr] {
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let se = (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt() / n.sqrt();
        assert!((mean - truth).abs() <= 3.0 * se, "mean {mean} truth {truth} se {se}");
    }
}

#[test]
fn mse_bound_holds_for_a_perfect_model() {
    let env = PlantedAdvantage::two_group();
    let d = env.generate(300, &LoggingPolicyKind::Random, 5).unwrap();
    struct Truth(PlantedAdvantage);
    impl fairbandit_core::RewardEstimator for Truth {
        fn num_arms(&self) -> usize {
            2
        }
        fn predict(&self, x: &[f64], a: usize) -> fairbandit_core::Result<f64> {
            Ok(self.0.reward_prob(x, a))
        }
    }
    let mut rng = stream_rng(0, 0);
    let c = mse_bound_check(&Fixed(vec![0.3, 0.7]), &Truth(env.clone()), &d, Some(&env), &mut rng)
        .unwrap();
    assert!(c.holds);
    assert!(c.bound >= 3.0);
}
