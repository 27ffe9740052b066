//! Offline bandit data: logged samples, ingestion of classification tables,
//! logging policies, and conversion of labels into bandit feedback.

mod convert;
mod io;
mod logging;
mod table;

pub use convert::{convert_classification, convert_with_policy, split};
pub use io::{read_jsonl, write_jsonl, DatasetHeader};
pub use logging::{logging_propensities, LoggingPolicy, LoggingPolicyKind, SoftmaxRegression};
pub use table::{load_csv, ClassificationTable, GroupRule, GroupSource, GroupSpec, Schema};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One logged interaction `(x, a, r, pi_b(a|x))` plus its group label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoggedSample {
    pub context: Vec<f64>,
    pub action: usize,
    pub reward: f64,
    pub propensity: f64,
    pub group: usize,
}

impl LoggedSample {
    pub fn new(
        context: Vec<f64>,
        action: usize,
        reward: f64,
        propensity: f64,
        group: usize,
    ) -> Result<Self> {
        if !(propensity > 0.0 && propensity <= 1.0) {
            return Err(Error::Data(format!(
                "propensity must lie in (0, 1], got {propensity}"
            )));
        }
        if !reward.is_finite() {
            return Err(Error::Data(format!("non-finite reward {reward}")));
        }
        if context.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data("non-finite context value".into()));
        }
        Ok(Self {
            context,
            action,
            reward,
            propensity,
            group,
        })
    }
}

/// Which samples an estimate averages over.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroupFilter {
    Overall,
    Group(usize),
}

impl GroupFilter {
    pub fn admits(self, group: usize) -> bool {
        match self {
            GroupFilter::Overall => true,
            GroupFilter::Group(g) => g == group,
        }
    }
}

/// How a dataset was produced; carried into the JSON-lines header.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub seed: u64,
    pub logging: LoggingPolicy,
}

/// Immutable collection of logged samples.
#[derive(Debug, Clone, PartialEq)]
pub struct BanditDataset {
    samples: Vec<LoggedSample>,
    num_arms: usize,
    context_dim: usize,
    num_groups: usize,
    reward_upper_bound: f64,
    group_counts: Vec<usize>,
    provenance: Option<Provenance>,
}

impl BanditDataset {
    pub fn new(
        samples: Vec<LoggedSample>,
        num_arms: usize,
        context_dim: usize,
        num_groups: usize,
        reward_upper_bound: f64,
    ) -> Result<Self> {
        if num_arms < 2 {
            return Err(Error::Data(format!("need at least 2 arms, got {num_arms}")));
        }
        if context_dim == 0 {
            return Err(Error::Data("context_dim must be positive".into()));
        }
        if num_groups < 2 {
            return Err(Error::Data(format!(
                "need at least 2 groups, got {num_groups}"
            )));
        }
        if !(reward_upper_bound > 0.0 && reward_upper_bound.is_finite()) {
            return Err(Error::Data(format!(
                "reward upper bound must be positive, got {reward_upper_bound}"
            )));
        }
        let mut group_counts = vec![0; num_groups];
        for (i, s) in samples.iter().enumerate() {
            if s.context.len() != context_dim {
                return Err(Error::Data(format!(
                    "sample {i} has context length {}, expected {context_dim}",
                    s.context.len()
                )));
            }
            if s.action >= num_arms {
                return Err(Error::Data(format!(
                    "sample {i} has action {} >= {num_arms}",
                    s.action
                )));
            }
            if s.group >= num_groups {
                return Err(Error::Data(format!(
                    "sample {i} has group {} >= {num_groups}",
                    s.group
                )));
            }
            if !(0.0..=reward_upper_bound).contains(&s.reward) {
                return Err(Error::Data(format!(
                    "sample {i} reward {} outside [0, {reward_upper_bound}]",
                    s.reward
                )));
            }
            if !(s.propensity > 0.0 && s.propensity <= 1.0) {
                return Err(Error::Data(format!(
                    "sample {i} has propensity {}",
                    s.propensity
                )));
            }
            group_counts[s.group] += 1;
        }
        Ok(Self {
            samples,
            num_arms,
            context_dim,
            num_groups,
            reward_upper_bound,
            group_counts,
            provenance: None,
        })
    }

    pub fn with_provenance(mut self, provenance: Provenance) -> Self {
        self.provenance = Some(provenance);
        self
    }

    pub fn samples(&self) -> &[LoggedSample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn num_arms(&self) -> usize {
        self.num_arms
    }

    pub fn context_dim(&self) -> usize {
        self.context_dim
    }

    pub fn num_groups(&self) -> usize {
        self.num_groups
    }

    pub fn reward_upper_bound(&self) -> f64 {
        self.reward_upper_bound
    }

    pub fn group_counts(&self) -> &[usize] {
        &self.group_counts
    }

    pub fn provenance(&self) -> Option<&Provenance> {
        self.provenance.as_ref()
    }

    /// Number of samples admitted by `filter`.
    pub fn filter_count(&self, filter: GroupFilter) -> usize {
        match filter {
            GroupFilter::Overall => self.samples.len(),
            GroupFilter::Group(g) => self.group_counts.get(g).copied().unwrap_or(0),
        }
    }

    /// Error unless every group in `0..num_groups` has at least one sample.
    pub fn require_all_groups(&self, context: &str) -> Result<()> {
        match self.group_counts.iter().position(|&c| c == 0) {
            Some(group) => Err(Error::EmptyGroup {
                group,
                context: context.to_string(),
            }),
            None => Ok(()),
        }
    }

    /// New dataset holding the samples at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        let samples = indices
            .iter()
            .map(|&i| {
                self.samples
                    .get(i)
                    .cloned()
                    .ok_or_else(|| Error::Data(format!("subset index {i} out of range")))
            })
            .collect::<Result<Vec<_>>>()?;
        let mut out = Self::new(
            samples,
            self.num_arms,
            self.context_dim,
            self.num_groups,
            self.reward_upper_bound,
        )?;
        out.provenance = self.provenance.clone();
        Ok(out)
    }

    /// Contexts stacked row-wise.
    pub fn context_matrix(&self) -> Array2<f64> {
        let mut m = Array2::zeros((self.samples.len(), self.context_dim));
        for (i, s) in self.samples.iter().enumerate() {
            for (j, &v) in s.context.iter().enumerate() {
                m[[i, j]] = v;
            }
        }
        m
    }

    /// Empirical mean logged reward per group: an on-policy estimate of the
    /// logging policy's group values.
    pub fn logged_group_means(&self) -> Vec<f64> {
        let mut sums = vec![0.0; self.num_groups];
        for s in &self.samples {
            sums[s.group] += s.reward;
        }
        sums.iter()
            .zip(&self.group_counts)
            .map(|(s, &c)| if c == 0 { f64::NAN } else { s / c as f64 })
            .collect()
    }

    pub fn mean_reward(&self) -> f64 {
        self.samples.iter().map(|s| s.reward).sum::<f64>() / self.samples.len() as f64
    }
}
