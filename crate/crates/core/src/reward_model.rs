//! Reward model `r_hat(x, a)`: squared-error gradient-boosted regression trees
//! over the input `context ++ one_hot(action)`.
//!
//! Each tree is grown greedily on the current residuals with exact split
//! search. A split's gain is
//! `0.5 * (G_L^2 / (n_L + l2) + G_R^2 / (n_R + l2) - G^2 / (n + l2))`
//! where `G` is a residual sum, and it is accepted when the gain is positive
//! and at least `min_split_gain`. Leaves store `G / (n + l2)`; prediction is
//! `base + learning_rate * sum(trees)`, clamped to `[0, R_max]`.

use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::dataset::BanditDataset;
use crate::error::{check_dim, Error, Result};
use crate::rng::{stream_rng, streams};

/// Anything that predicts a reward for every arm of a context.
pub trait RewardEstimator {
    fn num_arms(&self) -> usize;

    fn predict(&self, context: &[f64], action: usize) -> Result<f64>;

    fn predict_all_arms(&self, context: &[f64]) -> Result<Vec<f64>> {
        (0..self.num_arms()).map(|a| self.predict(context, a)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GbtConfig {
    pub max_depth: usize,
    pub num_trees: usize,
    pub subsample: f64,
    pub min_split_gain: f64,
    pub l2_leaf_reg: f64,
    pub learning_rate: f64,
    pub min_samples_leaf: usize,
    pub seed: u64,
}

impl Default for GbtConfig {
    fn default() -> Self {
        Self {
            max_depth: 5,
            num_trees: 100,
            subsample: 0.8,
            min_split_gain: 5.0,
            l2_leaf_reg: 0.1,
            learning_rate: 0.3,
            min_samples_leaf: 1,
            seed: 0,
        }
    }
}

impl GbtConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.num_trees == 0 {
            return bad("num_trees must be at least 1");
        }
        if self.max_depth == 0 {
            return bad("max_depth must be at least 1");
        }
        if !(self.subsample > 0.0 && self.subsample <= 1.0) {
            return bad("subsample must lie in (0, 1]");
        }
        if !(self.min_split_gain >= 0.0) || !(self.l2_leaf_reg >= 0.0) {
            return bad("min_split_gain and l2_leaf_reg must be nonnegative");
        }
        if !(self.learning_rate > 0.0) {
            return bad("learning_rate must be positive");
        }
        if self.min_samples_leaf == 0 {
            return bad("min_samples_leaf must be at least 1");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Node {
    Leaf {
        value: f64,
    },
    /// `x[feature] < threshold` goes left.
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionTree {
    nodes: Vec<Node>,
}

impl RegressionTree {
    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                Node::Leaf { value } => return value,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => i = if x[feature] < threshold { left } else { right },
            }
        }
    }

    /// Number of split levels on the longest root-to-leaf path.
    pub fn depth(&self) -> usize {
        fn go(nodes: &[Node], i: usize) -> usize {
            match nodes[i] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + go(nodes, left).max(go(nodes, right)),
            }
        }
        go(&self.nodes, 0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GbtRewardModel {
    base_prediction: f64,
    trees: Vec<RegressionTree>,
    config: GbtConfig,
    context_dim: usize,
    num_arms: usize,
    reward_upper_bound: f64,
}

struct TreeBuilder<'a> {
    x: &'a [f64],
    width: usize,
    residuals: &'a [f64],
    config: &'a GbtConfig,
    nodes: Vec<Node>,
}

impl TreeBuilder<'_> {
    fn feature(&self, row: usize, f: usize) -> f64 {
        self.x[row * self.width + f]
    }

    fn leaf_value(&self, rows: &[usize]) -> f64 {
        let g: f64 = rows.iter().map(|&r| self.residuals[r]).sum();
        g / (rows.len() as f64 + self.config.l2_leaf_reg)
    }

    fn grow(&mut self, rows: Vec<usize>, depth: usize) -> usize {
        let id = self.nodes.len();
        self.nodes.push(Node::Leaf {
            value: self.leaf_value(&rows),
        });
        if depth >= self.config.max_depth || rows.len() < 2 * self.config.min_samples_leaf {
            return id;
        }
        let Some((feature, threshold)) = self.best_split(&rows) else {
            return id;
        };
        let (left_rows, right_rows): (Vec<usize>, Vec<usize>) = rows
            .iter()
            .partition(|&&r| self.feature(r, feature) < threshold);
        let left = self.grow(left_rows, depth + 1);
        let right = self.grow(right_rows, depth + 1);
        self.nodes[id] = Node::Split {
            feature,
            threshold,
            left,
            right,
        };
        id
    }

    fn best_split(&self, rows: &[usize]) -> Option<(usize, f64)> {
        let lambda = self.config.l2_leaf_reg;
        let min_leaf = self.config.min_samples_leaf;
        let n = rows.len();
        let total: f64 = rows.iter().map(|&r| self.residuals[r]).sum();
        let parent = total * total / (n as f64 + lambda);
        let mut best: Option<(f64, usize, f64)> = None;
        let mut order = rows.to_vec();
        for f in 0..self.width {
            order.sort_by(|&a, &b| {
                self.feature(a, f)
                    .total_cmp(&self.feature(b, f))
                    .then(a.cmp(&b))
            });
            let mut left_sum = 0.0;
            for p in 1..n {
                left_sum += self.residuals[order[p - 1]];
                if p < min_leaf || n - p < min_leaf {
                    continue;
                }
                let (lo, hi) = (self.feature(order[p - 1], f), self.feature(order[p], f));
                if lo == hi {
                    continue;
                }
                let right_sum = total - left_sum;
                let gain = 0.5
                    * (left_sum * left_sum / (p as f64 + lambda)
                        + right_sum * right_sum / ((n - p) as f64 + lambda)
                        - parent);
                if best.is_none_or(|(g, _, _)| gain > g) {
                    let mut threshold = 0.5 * (lo + hi);
                    if !(lo < threshold) {
                        threshold = hi;
                    }
                    best = Some((gain, f, threshold));
                }
            }
        }
        match best {
            Some((gain, f, t)) if gain > 0.0 && gain >= self.config.min_split_gain => Some((f, t)),
            _ => None,
        }
    }
}

impl GbtRewardModel {
    pub fn fit(train: &BanditDataset, config: &GbtConfig) -> Result<Self> {
        config.validate()?;
        if train.is_empty() {
            return Err(Error::Data("cannot fit a reward model on an empty dataset".into()));
        }
        let (d, k) = (train.context_dim(), train.num_arms());
        let width = d + k;
        let n = train.len();
        let mut x = Vec::with_capacity(n * width);
        let mut y = Vec::with_capacity(n);
        for s in train.samples() {
            x.extend(encode(&s.context, s.action, k));
            y.push(s.reward);
        }
        let base = y.iter().sum::<f64>() / n as f64;
        let mut pred = vec![base; n];
        let mut rng = stream_rng(config.seed, streams::REWARD_MODEL);
        let take = ((n as f64 * config.subsample).round() as usize).clamp(1, n);
        let mut all_rows: Vec<usize> = (0..n).collect();
        let mut trees = Vec::with_capacity(config.num_trees);
        for _ in 0..config.num_trees {
            let residuals: Vec<f64> = y.iter().zip(&pred).map(|(t, p)| t - p).collect();
            let rows = if take < n {
                all_rows.shuffle(&mut rng);
                let mut r = all_rows[..take].to_vec();
                r.sort_unstable();
                r
            } else {
                (0..n).collect()
            };
            let mut builder = TreeBuilder {
                x: &x,
                width,
                residuals: &residuals,
                config,
                nodes: Vec::new(),
            };
            builder.grow(rows, 0);
            let tree = RegressionTree {
                nodes: builder.nodes,
            };
            for (i, p) in pred.iter_mut().enumerate() {
                *p += config.learning_rate * tree.eval(&x[i * width..(i + 1) * width]);
            }
            trees.push(tree);
        }
        Ok(Self {
            base_prediction: base,
            trees,
            config: config.clone(),
            context_dim: d,
            num_arms: k,
            reward_upper_bound: train.reward_upper_bound(),
        })
    }

    pub fn base_prediction(&self) -> f64 {
        self.base_prediction
    }

    pub fn trees(&self) -> &[RegressionTree] {
        &self.trees
    }

    pub fn config(&self) -> &GbtConfig {
        &self.config
    }

    pub fn context_dim(&self) -> usize {
        self.context_dim
    }

    /// The model restricted to its first `n` trees.
    pub fn truncated(&self, n: usize) -> Self {
        let mut m = self.clone();
        m.trees.truncate(n);
        m
    }

    /// Ensemble output before clamping.
    pub fn predict_raw(&self, context: &[f64], action: usize) -> Result<f64> {
        check_dim(self.context_dim, context.len())?;
        if action >= self.num_arms {
            return Err(Error::Data(format!(
                "action {action} out of range for {} arms",
                self.num_arms
            )));
        }
        let x = encode(context, action, self.num_arms);
        let sum: f64 = self.trees.iter().map(|t| t.eval(&x)).sum();
        Ok(self.base_prediction + self.config.learning_rate * sum)
    }

    pub fn save_json(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load_json(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    #[cfg(test)]
    fn constant(base: f64, context_dim: usize, num_arms: usize, r_max: f64) -> Self {
        Self {
            base_prediction: base,
            trees: vec![],
            config: GbtConfig::default(),
            context_dim,
            num_arms,
            reward_upper_bound: r_max,
        }
    }
}

impl RewardEstimator for GbtRewardModel {
    fn num_arms(&self) -> usize {
        self.num_arms
    }

    fn predict(&self, context: &[f64], action: usize) -> Result<f64> {
        Ok(self
            .predict_raw(context, action)?
            .clamp(0.0, self.reward_upper_bound))
    }
}

fn encode(context: &[f64], action: usize, num_arms: usize) -> Vec<f64> {
    let mut x = Vec::with_capacity(context.len() + num_arms);
    x.extend_from_slice(context);
    x.extend((0..num_arms).map(|a| if a == action { 1.0 } else { 0.0 }));
    x
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::LoggedSample;
    use proptest::prelude::*;

    fn dataset(rows: &[(Vec<f64>, usize, f64)], k: usize) -> BanditDataset {
        let d = rows[0].0.len();
        let samples = rows
            .iter()
            .map(|(x, a, r)| LoggedSample::new(x.clone(), *a, *r, 0.5, 0).unwrap())
            .collect();
        BanditDataset::new(samples, k, d, 2, 1.0).unwrap()
    }

    #[test]
    fn constant_targets_predict_constant() {
        let rows: Vec<_> = (0..20).map(|i| (vec![i as f64], i % 3, 0.6)).collect();
        let m = GbtRewardModel::fit(&dataset(&rows, 3), &GbtConfig::default()).unwrap();
        for v in m.predict_all_arms(&[3.0]).unwrap() {
            assert!((v - 0.6).abs() < 1e-12);
        }
        assert!(m.trees().iter().all(|t| t.depth() == 0));
        assert_eq!(m.predict_all_arms(&[-100.0]).unwrap().len(), 3);
    }

    #[test]
    fn four_point_single_split_oracle() {
        // Exhaustive oracle: the only useful split is on x, separating the
        // two zero targets from the two one targets.
        let rows = vec![
            (vec![0.0], 0, 0.0),
            (vec![0.0], 0, 0.0),
            (vec![1.0], 0, 1.0),
            (vec![1.0], 0, 1.0),
        ];
        let config = GbtConfig {
            max_depth: 1,
            num_trees: 1,
            subsample: 1.0,
            min_split_gain: 0.0,
            l2_leaf_reg: 0.0,
            learning_rate: 1.0,
            ..GbtConfig::default()
        };
        let m = GbtRewardModel::fit(&dataset(&rows, 2), &config).unwrap();
        assert_eq!(m.predict(&[0.0], 0).unwrap(), 0.0);
        assert_eq!(m.predict(&[1.0], 0).unwrap(), 1.0);
        assert_eq!(m.trees()[0].depth(), 1);
    }

    #[test]
    fn invalid_config_and_inputs() {
        let rows = vec![(vec![0.0], 0, 0.0); 3];
        let d = dataset(&rows, 2);
        let zero_trees = GbtConfig {
            num_trees: 0,
            ..GbtConfig::default()
        };
        assert!(matches!(GbtRewardModel::fit(&d, &zero_trees), Err(Error::Config(_))));
        let m = GbtRewardModel::fit(&d, &GbtConfig::default()).unwrap();
        assert!(matches!(m.predict(&[0.0, 1.0], 0), Err(Error::Dimension { .. })));
        assert!(m.predict(&[0.0], 2).is_err());
    }

    #[test]
    fn predictions_are_clamped() {
        let m = GbtRewardModel::constant(1.3, 1, 2, 1.0);
        assert_eq!(m.predict_raw(&[0.0], 0).unwrap(), 1.3);
        assert_eq!(m.predict(&[0.0], 0).unwrap(), 1.0);
        let low = GbtRewardModel::constant(-0.2, 1, 2, 1.0);
        assert_eq!(low.predict(&[0.0], 1).unwrap(), 0.0);
    }

    fn noisy_rows(seed: u64, n: usize) -> Vec<(Vec<f64>, usize, f64)> {
        use rand::Rng;
        let mut rng = stream_rng(seed, 0);
        (0..n)
            .map(|_| {
                let x: Vec<f64> = (0..3).map(|_| rng.random_range(-2.0..2.0)).collect();
                let a = rng.random_range(0..3);
                let p = if (x[0] > 0.0) == (a == 1) { 0.8 } else { 0.2 };
                let r = f64::from(u8::from(rng.random::<f64>() < p));
                (x, a, r)
            })
            .collect()
    }

    #[test]
    fn deterministic_given_seed_and_depth_bounded() {
        let d = dataset(&noisy_rows(1, 300), 3);
        let config = GbtConfig {
            min_split_gain: 0.5,
            seed: 4,
            ..GbtConfig::default()
        };
        let a = GbtRewardModel::fit(&d, &config).unwrap();
        let b = GbtRewardModel::fit(&d, &config).unwrap();
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
        assert!(a.trees().iter().all(|t| t.depth() <= config.max_depth));
        assert!(a.trees().iter().any(|t| t.depth() > 0));
        for (x, act, _) in noisy_rows(2, 50) {
            let p = a.predict(&x, act).unwrap();
            assert!((0.0..=1.0).contains(&p));
        }
    }

    #[test]
    fn json_round_trip_preserves_predictions() {
        let d = dataset(&noisy_rows(3, 200), 3);
        let m = GbtRewardModel::fit(&d, &GbtConfig { min_split_gain: 0.1, ..GbtConfig::default() }).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        m.save_json(&path).unwrap();
        let back = GbtRewardModel::load_json(&path).unwrap();
        for (x, a, _) in noisy_rows(4, 40) {
            assert_eq!(
                m.predict(&x, a).unwrap().to_bits(),
                back.predict(&x, a).unwrap().to_bits()
            );
        }
    }

    fn train_mse(m: &GbtRewardModel, d: &BanditDataset) -> f64 {
        d.samples()
            .iter()
            .map(|s| (m.predict_raw(&s.context, s.action).unwrap() - s.reward).powi(2))
            .sum::<f64>()
            / d.len() as f64
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn training_loss_non_increasing_without_subsampling(
            seed in 0u64..1000,
            lr in 0.05f64..1.0,
            l2 in 0.0f64..2.0,
        ) {
            let d = dataset(&noisy_rows(seed, 120), 3);
            let config = GbtConfig {
                num_trees: 15,
                subsample: 1.0,
                min_split_gain: 0.0,
                l2_leaf_reg: l2,
                learning_rate: lr,
                ..GbtConfig::default()
            };
            let m = GbtRewardModel::fit(&d, &config).unwrap();
            let mut prev = f64::INFINITY;
            for t in 0..=config.num_trees {
                let mse = train_mse(&m.truncated(t), &d);
                prop_assert!(mse <= prev + 1e-12, "tree {t}: {mse} > {prev}");
                prev = mse;
            }
        }
    }
}
