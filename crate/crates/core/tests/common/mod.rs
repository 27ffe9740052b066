#![allow(dead_code)]

use fairbandit_core::dataset::{BanditDataset, LoggedSample};
use fairbandit_core::{RewardEstimator, StochasticPolicy};

/// Context-free policy.
pub struct Fixed(pub Vec<f64>);

impl StochasticPolicy for Fixed {
    fn num_arms(&self) -> usize {
        self.0.len()
    }
    fn action_probs(&self, _: &[f64]) -> fairbandit_core::Result<Vec<f64>> {
        Ok(self.0.clone())
    }
}

/// Reward model indexed by the first context coordinate.
pub struct Lookup(pub Vec<Vec<f64>>);

impl RewardEstimator for Lookup {
    fn num_arms(&self) -> usize {
        self.0[0].len()
    }
    fn predict(&self, context: &[f64], action: usize) -> fairbandit_core::Result<f64> {
        Ok(self.0[context[0] as usize][action])
    }
}

pub fn close(a: f64, b: f64, tol: f64) {
    assert!((a - b).abs() <= tol, "{a} vs {b} (tol {tol})");
}

/// Three hand-built samples over two arms and two groups.
pub fn three_samples() -> (BanditDataset, Fixed, Lookup) {
    let samples = vec![
        LoggedSample::new(vec![0.0], 1, 1.0, 0.5, 0).unwrap(),
        LoggedSample::new(vec![1.0], 0, 0.0, 0.25, 1).unwrap(),
        LoggedSample::new(vec![2.0], 0, 1.0, 0.75, 1).unwrap(),
    ];
    (
        BanditDataset::new(samples, 2, 1, 2, 1.0).unwrap(),
        Fixed(vec![0.2, 0.8]),
        Lookup(vec![vec![0.3, 0.6], vec![0.5, 0.1], vec![0.9, 0.2]]),
    )
}

use fairbandit_core::SoftmaxMlpPolicy;

/// Analytic score `d/dtheta log pi(a|x)`.
pub fn score(policy: &SoftmaxMlpPolicy, x: &[f64], a: usize) -> Vec<f64> {
    let mut buf = policy.gradient_buffer();
    policy.accumulate_score_gradient(&mut buf, x, a, 1.0).unwrap();
    buf.values().to_vec()
}

/// Max relative error between the analytic score and central differences
/// with step `h`. Relative error uses `max(|analytic|, |numeric|, floor)`.
pub fn finite_difference_error(
    policy: &SoftmaxMlpPolicy,
    x: &[f64],
    a: usize,
    h: f64,
    floor: f64,
) -> f64 {
    let analytic = score(policy, x, a);
    let mut probe = policy.clone();
    let mut worst = 0.0f64;
    for (k, &g) in analytic.iter().enumerate() {
        let orig = probe.params()[k];
        probe.params_mut()[k] = orig + h;
        let up = probe.log_prob(x, a).unwrap();
        probe.params_mut()[k] = orig - h;
        let down = probe.log_prob(x, a).unwrap();
        probe.params_mut()[k] = orig;
        let numeric = (up - down) / (2.0 * h);
        let rel = (g - numeric).abs() / g.abs().max(numeric.abs()).max(floor);
        worst = worst.max(rel);
    }
    worst
}
