use rand::seq::SliceRandom;

use super::logging::{LoggingPolicy, LoggingPolicyKind};
use super::table::ClassificationTable;
use super::{BanditDataset, LoggedSample, Provenance};
use crate::error::{Error, Result};
use crate::rng::{sample_categorical, stream_rng, streams};

/// Reward revealed for pulling `action` on a row whose true class is `label`.
pub(crate) fn match_reward(label: usize, action: usize) -> f64 {
    if label == action {
        1.0
    } else {
        0.0
    }
}

/// Turn a `K`-class table into `K`-armed bandit feedback: each row's arm is
/// drawn from the logging policy and rewarded 1 iff it equals the label.
pub fn convert_classification(
    table: &ClassificationTable,
    kind: LoggingPolicyKind,
    seed: u64,
) -> Result<BanditDataset> {
    let mut policy = LoggingPolicy::new(kind, table.num_classes)?;
    policy.fit(table.features.view(), &table.labels, seed)?;
    convert_with_policy(table, &policy, seed)
}

/// As [`convert_classification`] with an already-fitted logging policy.
pub fn convert_with_policy(
    table: &ClassificationTable,
    policy: &LoggingPolicy,
    seed: u64,
) -> Result<BanditDataset> {
    if table.is_empty() {
        return Err(Error::Data("cannot convert an empty table".into()));
    }
    if policy.num_arms != table.num_classes {
        return Err(Error::Config(format!(
            "logging policy has {} arms but table has {} classes",
            policy.num_arms, table.num_classes
        )));
    }
    let mut rng = stream_rng(seed, streams::CONVERT);
    let mut samples = Vec::with_capacity(table.len());
    for (i, row) in table.features.rows().into_iter().enumerate() {
        let context = row.to_vec();
        let probs = policy.propensities(&context)?;
        let action = sample_categorical(&probs, &mut rng);
        let reward = match_reward(table.labels[i], action);
        samples.push(LoggedSample::new(
            context,
            action,
            reward,
            probs[action],
            table.groups[i],
        )?);
    }
    Ok(BanditDataset::new(
        samples,
        table.num_classes,
        table.context_dim(),
        table.num_groups,
        1.0,
    )?
    .with_provenance(Provenance {
        seed,
        logging: policy.clone(),
    }))
}

/// Seeded shuffle-and-cut into `(train, test)`; the train side gets
/// `round(n * train_fraction)` samples.
pub fn split(
    dataset: &BanditDataset,
    train_fraction: f64,
    seed: u64,
) -> Result<(BanditDataset, BanditDataset)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::Config(format!(
            "train_fraction must lie in (0, 1), got {train_fraction}"
        )));
    }
    if dataset.len() < 10 {
        return Err(Error::Data(format!(
            "need at least 10 samples to split, got {}",
            dataset.len()
        )));
    }
    let mut idx: Vec<usize> = (0..dataset.len()).collect();
    idx.shuffle(&mut stream_rng(seed, streams::SPLIT));
    let n_train = (dataset.len() as f64 * train_fraction).round() as usize;
    let (train, test) = idx.split_at(n_train);
    Ok((dataset.subset(train)?, dataset.subset(test)?))
}
