//! GC-PG for `G >= 2` groups, constraining only the most violated group
//! pair at each iteration.
//!
//! For the active pair `(i, j)` with `i < j`, group `i` receives
//! `1 - lambda + eta`, group `j` receives `1 + lambda - eta`, and every other
//! group keeps weight 1. `lambda` descends on `eps - (V_i - V_j)` and `eta`
//! on `eps - (V_j - V_i)`, so whichever pair member is ahead by more than
//! `eps` is down-weighted. With `G = 2` the policy trajectory equals the
//! two-group trainer's, with the roles of `lambda` and `eta` exchanged.
//! `sign_flip` swaps the weights of `i` and `j`.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::{BanditDataset, GroupFilter};
use crate::error::{Error, Result};
use crate::estimators::{Evaluator, Method, PredictionTable};
use crate::policy::{SoftmaxMlpPolicy, StochasticPolicy};
use crate::reward_model::RewardEstimator;
use crate::rng::{stream_rng, streams, StreamRng};
use crate::trainer::{dual_step, lenient_group_values, policy_step, BatchSampler, DualState, TrainConfig};

/// Duals for each pair `(i, j)`, `i < j`, created the first time the pair is
/// selected.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PairDuals {
    pairs: BTreeMap<(usize, usize), DualState>,
}

impl PairDuals {
    pub fn get(&self, pair: (usize, usize)) -> DualState {
        self.pairs.get(&pair).copied().unwrap_or_default()
    }

    pub fn set(&mut self, pair: (usize, usize), duals: DualState) {
        self.pairs.insert(pair, duals);
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&(usize, usize), &DualState)> {
        self.pairs.iter()
    }

    fn decay_except(&mut self, active: (usize, usize), factor: f64) {
        for (pair, d) in self.pairs.iter_mut() {
            if *pair != active {
                d.lambda *= factor;
                d.eta *= factor;
            }
        }
    }
}

/// Pair `(i, j)`, `i < j`, maximizing `|v_i - v_j|`; the lexicographically
/// smallest pair wins ties.
pub fn most_violated_pair(values: &[f64]) -> Result<(usize, usize, f64)> {
    if values.len() < 2 {
        return Err(Error::Data(format!(
            "need at least 2 group values, got {}",
            values.len()
        )));
    }
    if let Some(g) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::Data(format!("group {g} has a non-finite value")));
    }
    let mut best = (0, 1, (values[0] - values[1]).abs());
    for i in 0..values.len() {
        for j in i + 1..values.len() {
            let gap = (values[i] - values[j]).abs();
            if gap > best.2 {
                best = (i, j, gap);
            }
        }
    }
    Ok(best)
}

/// Gradient weight of `group` given the active pair and its duals.
pub fn multigroup_weight(group: usize, pair: (usize, usize), duals: DualState, sign_flip: bool) -> f64 {
    let (i, j) = pair;
    let down = 1.0 - duals.lambda + duals.eta;
    let up = 1.0 + duals.lambda - duals.eta;
    let (for_i, for_j) = if sign_flip { (up, down) } else { (down, up) };
    if group == i {
        for_i
    } else if group == j {
        for_j
    } else {
        1.0
    }
}

/// Projected dual update for `pair`: `lambda` grows while `V_i - V_j`
/// exceeds `epsilon`, `eta` while `V_j - V_i` does.
pub fn pair_dual_step(
    duals: DualState,
    pair: (usize, usize),
    values: &[f64],
    epsilon: f64,
    beta: f64,
    bound: f64,
) -> DualState {
    dual_step(duals, values[pair.1], values[pair.0], epsilon, beta, bound)
}

/// Largest `|v_a - v_b|` over all pairs.
pub fn max_disparity(values: &[f64]) -> f64 {
    let mut worst: f64 = 0.0;
    for (a, va) in values.iter().enumerate() {
        for vb in &values[a + 1..] {
            worst = worst.max((va - vb).abs());
        }
    }
    worst
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultigroupRecord {
    pub iteration: usize,
    pub value: f64,
    pub active_pair: (usize, usize),
    pub group_values: Vec<f64>,
    pub max_disparity: f64,
    /// Duals of the active pair after this iteration's dual step.
    pub lambda: f64,
    pub eta: f64,
    pub grad_norm: f64,
    pub min_weight: f64,
    pub max_weight: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MultigroupTrace {
    pub records: Vec<MultigroupRecord>,
}

impl MultigroupTrace {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let groups = self.records.first().map_or(0, |r| r.group_values.len());
        let mut header: Vec<String> = ["iteration", "value", "active_pair"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        header.extend((0..groups).map(|g| format!("v{g}")));
        header.extend(
            ["max_disparity", "lambda", "eta", "grad_norm", "min_weight", "max_weight"]
                .iter()
                .map(|s| s.to_string()),
        );
        w.write_record(&header)?;
        for r in &self.records {
            let mut row = vec![
                r.iteration.to_string(),
                r.value.to_string(),
                format!("{}-{}", r.active_pair.0, r.active_pair.1),
            ];
            row.extend(r.group_values.iter().map(|v| v.to_string()));
            row.extend([
                r.max_disparity.to_string(),
                r.lambda.to_string(),
                r.eta.to_string(),
                r.grad_norm.to_string(),
                r.min_weight.to_string(),
                r.max_weight.to_string(),
            ]);
            w.write_record(&row)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MultigroupOutcome {
    pub policy: SoftmaxMlpPolicy,
    pub trace: MultigroupTrace,
    pub duals: PairDuals,
    pub epsilon: f64,
}

pub struct MultigroupTrainer<'a> {
    data: &'a BanditDataset,
    predictions: PredictionTable,
    config: TrainConfig,
    epsilon: f64,
    policy: SoftmaxMlpPolicy,
    duals: PairDuals,
    values: Vec<f64>,
    sampler: BatchSampler,
    rng: StreamRng,
    trace: MultigroupTrace,
}

impl<'a> MultigroupTrainer<'a> {
    pub fn new<M: RewardEstimator + ?Sized>(
        data: &'a BanditDataset,
        model: &M,
        config: &TrainConfig,
    ) -> Result<Self> {
        config.validate()?;
        if data.is_empty() {
            return Err(Error::Data("training data is empty".into()));
        }
        data.require_all_groups("multigroup training data")?;
        let predictions = PredictionTable::build(model, data)?;
        let policy = SoftmaxMlpPolicy::new(
            data.context_dim(),
            &config.hidden,
            data.num_arms(),
            &mut stream_rng(config.seed, streams::POLICY_INIT),
        )?;
        let eval = Evaluator::new(data, &predictions)?;
        let values = eval.group_values(&policy, config.constraint_estimator)?;
        let epsilon = config.epsilon.resolve(data);
        Ok(Self {
            data,
            predictions,
            config: config.clone(),
            epsilon,
            policy,
            duals: PairDuals::default(),
            values,
            sampler: BatchSampler::new(data.len(), config.batch_size),
            rng: stream_rng(config.seed, streams::TRAIN),
            trace: MultigroupTrace::default(),
        })
    }

    pub fn policy(&self) -> &SoftmaxMlpPolicy {
        &self.policy
    }

    pub fn duals(&self) -> &PairDuals {
        &self.duals
    }

    pub fn trace(&self) -> &MultigroupTrace {
        &self.trace
    }

    pub fn step(&mut self) -> Result<&MultigroupRecord> {
        let (i, j, _) = most_violated_pair(&self.values)?;
        let pair = (i, j);
        let active = self.duals.get(pair);
        let flip = self.config.sign_flip;
        let batch = self.sampler.next_batch(&mut self.rng);
        let stats = policy_step(
            &mut self.policy,
            self.data,
            &self.predictions,
            &batch,
            |g| multigroup_weight(g, pair, active, flip),
            self.config.alpha,
            &mut self.rng,
        )?;

        let eval = Evaluator::new(self.data, &self.predictions)?;
        let probs = eval.target_probs(&self.policy)?;
        let value = eval
            .estimate_with_probs(probs.view(), Method::Dr, GroupFilter::Overall)?
            .value;
        self.values = lenient_group_values(&eval, probs.view(), self.config.constraint_estimator);
        let updated = if self.config.unconstrained {
            active
        } else {
            let next = pair_dual_step(
                active,
                pair,
                &self.values,
                self.epsilon,
                self.config.beta,
                self.config.dual_bound,
            );
            self.duals.set(pair, next);
            if let Some(factor) = self.config.idle_dual_decay {
                self.duals.decay_except(pair, factor);
            }
            next
        };
        self.trace.records.push(MultigroupRecord {
            iteration: self.trace.records.len(),
            value,
            active_pair: pair,
            group_values: self.values.clone(),
            max_disparity: max_disparity(&self.values),
            lambda: updated.lambda,
            eta: updated.eta,
            grad_norm: stats.grad_norm,
            min_weight: stats.min_weight,
            max_weight: stats.max_weight,
        });
        Ok(self.trace.records.last().expect("just pushed"))
    }

    pub fn run(mut self) -> Result<MultigroupOutcome> {
        for _ in 0..self.config.iterations {
            self.step()?;
        }
        Ok(MultigroupOutcome {
            policy: self.policy,
            trace: self.trace,
            duals: self.duals,
            epsilon: self.epsilon,
        })
    }
}

pub fn train_multigroup<M: RewardEstimator + ?Sized>(
    data: &BanditDataset,
    model: &M,
    config: &TrainConfig,
) -> Result<MultigroupOutcome> {
    MultigroupTrainer::new(data, model, config)?.run()
}

/// Max pairwise disparity of `policy` on `data` under `method`.
pub fn evaluate_max_disparity<P: StochasticPolicy + ?Sized>(
    policy: &P,
    eval: &Evaluator<'_>,
    method: Method,
) -> Result<(f64, Vec<f64>)> {
    let values = eval.group_values(policy, method)?;
    Ok((max_disparity(&values), values))
}
