//! Planted-advantage environment with known expected rewards.
//!
//! Contexts are `[z, group indicators]` with `z ~ N(0, I)` and one indicator
//! column per group beyond group 0. Group `g` reads one feature `z_f` and
//! arm `a` pays off with logit `strength_g * u_a * z_f`, where the arm
//! loadings `u_a` are evenly spaced from 1 down to `last_loading`. Every arm averages 0.5 in every group because `z_f` is symmetric,
//! so uniform play is fair, while the best attainable value grows with
//! `strength_g` and a reward-maximizing learner widens the gap between
//! strong and weak groups.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{
    BanditDataset, LoggedSample, LoggingPolicy, LoggingPolicyKind, Provenance,
};
use crate::error::{Error, Result};
use crate::estimators::TrueReward;
use crate::policy::StochasticPolicy;
use crate::rng::{sample_categorical, standard_normal, stream_rng, streams};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroupEffect {
    /// Index into `z` of the feature this group's preference depends on.
    pub feature: usize,
    pub strength: f64,
    /// Sampling weight of the group (normalized over groups).
    pub share: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedAdvantage {
    pub num_features: usize,
    pub num_arms: usize,
    /// Loading of the last arm, in `[-1, 1)`. Values away from -1 leave a
    /// marginal effect of `z_f` that greedy trees can pick up.
    #[serde(default = "default_last_loading")]
    pub last_loading: f64,
    pub groups: Vec<GroupEffect>,
}

fn default_last_loading() -> f64 {
    DEFAULT_LAST_LOADING
}

pub const DEFAULT_LAST_LOADING: f64 = -0.5;

impl PlantedAdvantage {
    /// Group 1 carries a strong signal, group 0 a weak one.
    pub fn two_group() -> Self {
        Self {
            num_features: 4,
            num_arms: 2,
            last_loading: DEFAULT_LAST_LOADING,
            groups: vec![
                GroupEffect {
                    feature: 1,
                    strength: 1.0,
                    share: 0.5,
                },
                GroupEffect {
                    feature: 0,
                    strength: 2.2,
                    share: 0.5,
                },
            ],
        }
    }

    /// Group 2 advantaged over groups 0 and 1.
    pub fn three_group() -> Self {
        Self {
            num_features: 4,
            num_arms: 2,
            last_loading: DEFAULT_LAST_LOADING,
            groups: vec![
                GroupEffect {
                    feature: 1,
                    strength: 1.0,
                    share: 1.0 / 3.0,
                },
                GroupEffect {
                    feature: 2,
                    strength: 1.2,
                    share: 1.0 / 3.0,
                },
                GroupEffect {
                    feature: 0,
                    strength: 2.2,
                    share: 1.0 / 3.0,
                },
            ],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_arms < 2 {
            return Err(Error::Config("synthetic environment needs at least 2 arms".into()));
        }
        if self.groups.len() < 2 {
            return Err(Error::Config("synthetic environment needs at least 2 groups".into()));
        }
        if !(-1.0..1.0).contains(&self.last_loading) {
            return Err(Error::Config("last_loading must lie in [-1, 1)".into()));
        }
        for (g, e) in self.groups.iter().enumerate() {
            if e.feature >= self.num_features {
                return Err(Error::Config(format!(
                    "group {g} reads feature {} but there are {}",
                    e.feature, self.num_features
                )));
            }
            if !(e.share > 0.0) || !e.strength.is_finite() {
                return Err(Error::Config(format!("group {g} needs a positive share and finite strength")));
            }
        }
        Ok(())
    }

    pub fn num_groups(&self) -> usize {
        self.groups.len()
    }

    pub fn context_dim(&self) -> usize {
        self.num_features + self.groups.len() - 1
    }

    /// Group encoded in a context's indicator columns.
    pub fn group_of(&self, context: &[f64]) -> usize {
        context[self.num_features..]
            .iter()
            .position(|&v| v > 0.5)
            .map_or(0, |i| i + 1)
    }

    fn arm_loading(&self, action: usize) -> f64 {
        1.0 - (1.0 - self.last_loading) * action as f64 / (self.num_arms - 1) as f64
    }

    /// Expected reward of `action` at `context`.
    pub fn reward_prob(&self, context: &[f64], action: usize) -> f64 {
        let e = self.groups[self.group_of(context)];
        let logit = e.strength * self.arm_loading(action) * context[e.feature];
        1.0 / (1.0 + (-logit).exp())
    }

    /// Draw a context from group `group`.
    pub fn sample_context<R: Rng + ?Sized>(&self, group: usize, rng: &mut R) -> Vec<f64> {
        let mut x: Vec<f64> = (0..self.num_features).map(|_| standard_normal(rng)).collect();
        x.extend((1..self.groups.len()).map(|g| if g == group { 1.0 } else { 0.0 }));
        x
    }

    pub fn sample_group<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let total: f64 = self.groups.iter().map(|g| g.share).sum();
        let probs: Vec<f64> = self.groups.iter().map(|g| g.share / total).collect();
        sample_categorical(&probs, rng)
    }

    /// `n` logged interactions under a context-free logging policy.
    pub fn generate(&self, n: usize, logging: &LoggingPolicyKind, seed: u64) -> Result<BanditDataset> {
        self.validate()?;
        let policy = LoggingPolicy::new(logging.clone(), self.num_arms)?;
        if policy.needs_fit() {
            return Err(Error::Config(
                "the synthetic environment supports Random and Tweak-1 logging only".into(),
            ));
        }
        let mut rng = stream_rng(seed, streams::SYNTHETIC);
        let mut samples = Vec::with_capacity(n);
        for _ in 0..n {
            let group = self.sample_group(&mut rng);
            let context = self.sample_context(group, &mut rng);
            let probs = policy.propensities(&context)?;
            let action = sample_categorical(&probs, &mut rng);
            let reward = f64::from(u8::from(rng.random::<f64>() < self.reward_prob(&context, action)));
            samples.push(LoggedSample::new(context, action, reward, probs[action], group)?);
        }
        Ok(BanditDataset::new(
            samples,
            self.num_arms,
            self.context_dim(),
            self.groups.len(),
            1.0,
        )?
        .with_provenance(Provenance {
            seed,
            logging: policy,
        }))
    }

    /// Monte-Carlo true values `(overall, per group)` of `policy` over
    /// `n` fresh contexts, using exact expectations over arms.
    pub fn true_values<P: StochasticPolicy + ?Sized>(
        &self,
        policy: &P,
        n: usize,
        seed: u64,
    ) -> Result<(f64, Vec<f64>)> {
        let mut rng = stream_rng(seed, streams::DIAGNOSTIC);
        let g = self.groups.len();
        let (mut sums, mut counts) = (vec![0.0; g], vec![0usize; g]);
        for _ in 0..n {
            let group = self.sample_group(&mut rng);
            let x = self.sample_context(group, &mut rng);
            let probs = policy.action_probs(&x)?;
            sums[group] += probs
                .iter()
                .enumerate()
                .map(|(a, p)| p * self.reward_prob(&x, a))
                .sum::<f64>();
            counts[group] += 1;
        }
        let overall = sums.iter().sum::<f64>() / n as f64;
        let per_group = sums.iter().zip(&counts).map(|(s, &c)| s / c.max(1) as f64).collect();
        Ok((overall, per_group))
    }
}

impl TrueReward for PlantedAdvantage {
    fn true_reward(&self, context: &[f64], action: usize) -> f64 {
        self.reward_prob(context, action)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Uniform(usize);
    impl StochasticPolicy for Uniform {
        fn num_arms(&self) -> usize {
            self.0
        }
        fn action_probs(&self, _: &[f64]) -> Result<Vec<f64>> {
            Ok(vec![1.0 / self.0 as f64; self.0])
        }
    }

    #[test]
    fn uniform_play_is_fair() {
        let env = PlantedAdvantage::two_group();
        let mut rng = stream_rng(3, streams::DIAGNOSTIC);
        for group in 0..env.num_groups() {
            for _ in 0..50 {
                let x = env.sample_context(group, &mut rng);
                let mut mirrored = x.clone();
                mirrored[..env.num_features].iter_mut().for_each(|v| *v = -*v);
                for a in 0..env.num_arms {
                    let pair = env.reward_prob(&x, a) + env.reward_prob(&mirrored, a);
                    assert!((pair - 1.0).abs() < 1e-12);
                }
            }
        }
        let (overall, groups) = env.true_values(&Uniform(env.num_arms), 20_000, 1).unwrap();
        assert!((overall - 0.5).abs() < 0.01, "{overall}");
        for v in groups {
            assert!((v - 0.5).abs() < 0.015, "{v}");
        }
    }

    #[test]
    fn group_flags_round_trip() {
        let env = PlantedAdvantage::three_group();
        let mut rng = stream_rng(0, 0);
        for g in 0..3 {
            let x = env.sample_context(g, &mut rng);
            assert_eq!(x.len(), env.context_dim());
            assert_eq!(env.group_of(&x), g);
        }
    }

    #[test]
    fn generated_data_is_consistent() {
        let env = PlantedAdvantage::two_group();
        let d = env.generate(500, &LoggingPolicyKind::Random, 3).unwrap();
        assert_eq!(d.len(), 500);
        assert!(d.group_counts().iter().all(|&c| c > 150));
        for s in d.samples() {
            assert_eq!(env.group_of(&s.context), s.group);
            assert_eq!(s.propensity, 0.5);
        }
        assert_eq!(d, env.generate(500, &LoggingPolicyKind::Random, 3).unwrap());
        assert!(env.generate(10, &LoggingPolicyKind::mixed_default(), 3).is_err());
    }
}
