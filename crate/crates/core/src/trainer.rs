//! Two-group GC-PG: policy-gradient ascent on group-reweighted DR rewards,
//! alternated with projected descent on the dual pair `(lambda, eta)`.

use std::io::Write;
use std::path::Path;

use ndarray::{Array2, ArrayView1, ArrayView2};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::dataset::{BanditDataset, GroupFilter};
use crate::error::{Error, Result};
use crate::estimators::{dr_reward_from_predictions, Evaluator, Method, PredictionTable};
use crate::policy::{SoftmaxMlpPolicy, StochasticPolicy, DEFAULT_HIDDEN};
use crate::reward_model::RewardEstimator;
use crate::rng::{sample_categorical, stream_rng, streams, StreamRng};

/// Disparity tolerance: a fixed value, or the logging policy's own measured
/// disparity on the training data.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Epsilon {
    Value(f64),
    Logging,
}

impl Serialize for Epsilon {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Epsilon::Value(v) => s.serialize_f64(*v),
            Epsilon::Logging => s.serialize_str("logging"),
        }
    }
}

impl<'de> Deserialize<'de> for Epsilon {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Str(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(v) => Ok(Epsilon::Value(v)),
            Raw::Str(s) if s == "logging" => Ok(Epsilon::Logging),
            Raw::Str(s) => s
                .parse::<f64>()
                .map(Epsilon::Value)
                .map_err(|_| serde::de::Error::custom(format!("epsilon must be a number or \"logging\", got {s:?}"))),
        }
    }
}

impl Epsilon {
    /// Resolve against the training data; the logging disparity is the
    /// largest gap between logged group mean rewards.
    pub fn resolve(self, train: &BanditDataset) -> f64 {
        match self {
            Epsilon::Value(v) => v,
            Epsilon::Logging => crate::multigroup::max_disparity(
                &train
                    .logged_group_means()
                    .into_iter()
                    .filter(|v| v.is_finite())
                    .collect::<Vec<_>>(),
            ),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epsilon: Epsilon,
    pub alpha: f64,
    pub beta: f64,
    pub dual_bound: f64,
    pub iterations: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub constraint_estimator: Method,
    pub unconstrained: bool,
    /// Swap which group receives `1 - lambda + eta`.
    pub sign_flip: bool,
    pub hidden: Vec<usize>,
    /// Multiplicative decay applied to idle pair duals (multigroup only).
    pub idle_dual_decay: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epsilon: Epsilon::Value(0.03),
            alpha: 1e-3,
            beta: 0.1,
            dual_bound: 0.5,
            iterations: 200,
            batch_size: 256,
            seed: 0,
            constraint_estimator: Method::Dr,
            unconstrained: false,
            sign_flip: false,
            hidden: DEFAULT_HIDDEN.to_vec(),
            idle_dual_decay: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.dual_bound > 0.0) {
            return bad(format!("dual_bound must be positive, got {}", self.dual_bound));
        }
        if !(self.alpha > 0.0) || !(self.beta > 0.0) {
            return bad("alpha and beta must be positive".into());
        }
        if self.iterations == 0 {
            return bad("iterations must be at least 1".into());
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if let Epsilon::Value(e) = self.epsilon {
            if !(e >= 0.0) {
                return bad(format!("epsilon must be nonnegative, got {e}"));
            }
        }
        if self.constraint_estimator == Method::Ips {
            return bad("constraint_estimator must be DR or DM".into());
        }
        if let Some(d) = self.idle_dual_decay {
            if !(d > 0.0 && d <= 1.0) {
                return bad(format!("idle_dual_decay must lie in (0, 1], got {d}"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct DualState {
    pub lambda: f64,
    pub eta: f64,
}

/// Gradient weight of a sample in `group`: group 1 gets `1 - lambda + eta`
/// and group 0 gets `1 + lambda - eta`, swapped under `sign_flip`.
pub fn group_weight(group: usize, duals: DualState, sign_flip: bool) -> f64 {
    let favoured = 1.0 - duals.lambda + duals.eta;
    let other = 1.0 + duals.lambda - duals.eta;
    if (group == 1) != sign_flip {
        favoured
    } else {
        other
    }
}

/// `lambda' = clamp(lambda - beta (eps - (v1 - v0)))` and
/// `eta' = clamp(eta - beta (eps - (v0 - v1)))` onto `[0, bound]`.
pub fn dual_step(duals: DualState, v0: f64, v1: f64, epsilon: f64, beta: f64, bound: f64) -> DualState {
    let grad_lambda = epsilon - (v1 - v0);
    let grad_eta = epsilon - (v0 - v1);
    DualState {
        lambda: (duals.lambda - beta * grad_lambda).clamp(0.0, bound),
        eta: (duals.eta - beta * grad_eta).clamp(0.0, bound),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepStats {
    pub grad_norm: f64,
    pub min_weight: f64,
    pub max_weight: f64,
}

/// One ascent step on a batch: draw `a_sim ~ pi_theta(.|x_i)`, weight the
/// per-sample DR reward by `weight(group_i)`, accumulate score gradients,
/// and apply the averaged update.
pub fn policy_step<R, F>(
    policy: &mut SoftmaxMlpPolicy,
    data: &BanditDataset,
    predictions: &PredictionTable,
    batch: &[usize],
    weight: F,
    alpha: f64,
    rng: &mut R,
) -> Result<StepStats>
where
    R: Rng + ?Sized,
    F: Fn(usize) -> f64,
{
    if batch.is_empty() {
        return Err(Error::State("policy_step called with an empty batch".into()));
    }
    let contexts = gather_contexts(data, batch);
    let probs = policy.action_probs_batch(contexts.view())?;
    let mut actions = Vec::with_capacity(batch.len());
    let mut scalars = Vec::with_capacity(batch.len());
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for (row, &i) in batch.iter().enumerate() {
        let s = &data.samples()[i];
        let a = sample_categorical(probs.row(row).as_slice().expect("row-major"), rng);
        let w = weight(s.group);
        lo = lo.min(w);
        hi = hi.max(w);
        actions.push(a);
        scalars.push(dr_reward_from_predictions(predictions.row(i), s, a) * w);
    }
    let mut buffer = policy.gradient_buffer();
    policy.accumulate_score_gradient_batch(&mut buffer, contexts.view(), &actions, &scalars)?;
    let grad_norm = buffer.mean_norm();
    policy.apply_update(&mut buffer, alpha)?;
    Ok(StepStats {
        grad_norm,
        min_weight: lo,
        max_weight: hi,
    })
}

pub(crate) fn gather_contexts(data: &BanditDataset, batch: &[usize]) -> Array2<f64> {
    let d = data.context_dim();
    let mut out = Array2::zeros((batch.len(), d));
    for (row, &i) in batch.iter().enumerate() {
        out.row_mut(row)
            .assign(&ArrayView1::from(&data.samples()[i].context[..]));
    }
    out
}

/// Epoch-style batches: a seeded shuffle per pass, consumed in order.
#[derive(Debug, Clone)]
pub struct BatchSampler {
    order: Vec<usize>,
    cursor: usize,
    batch_size: usize,
}

impl BatchSampler {
    pub fn new(len: usize, batch_size: usize) -> Self {
        Self {
            order: (0..len).collect(),
            cursor: len,
            batch_size: batch_size.min(len).max(1),
        }
    }

    pub fn next_batch<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Vec<usize> {
        if self.cursor + self.batch_size > self.order.len() {
            self.order.shuffle(rng);
            self.cursor = 0;
        }
        let batch = self.order[self.cursor..self.cursor + self.batch_size].to_vec();
        self.cursor += self.batch_size;
        batch
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub iteration: usize,
    /// Overall DR value on the training data after the policy update.
    pub value: f64,
    pub v0: f64,
    pub v1: f64,
    pub disparity: f64,
    /// Duals after this iteration's dual step.
    pub lambda: f64,
    pub eta: f64,
    pub grad_norm: f64,
    pub min_weight: f64,
    pub max_weight: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainTrace {
    pub records: Vec<TraceRecord>,
}

impl TrainTrace {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record([
            "iteration", "value", "v0", "v1", "disparity", "lambda", "eta", "grad_norm",
            "min_weight", "max_weight",
        ])?;
        for r in &self.records {
            w.write_record([
                r.iteration.to_string(),
                r.value.to_string(),
                r.v0.to_string(),
                r.v1.to_string(),
                r.disparity.to_string(),
                r.lambda.to_string(),
                r.eta.to_string(),
                r.grad_norm.to_string(),
                r.min_weight.to_string(),
                r.max_weight.to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub policy: SoftmaxMlpPolicy,
    pub trace: TrainTrace,
    pub epsilon: f64,
}

/// Stepwise two-group trainer. [`GcpgTrainer::step`] runs one iteration so
/// callers can inspect parameters along the trajectory.
pub struct GcpgTrainer<'a> {
    data: &'a BanditDataset,
    predictions: PredictionTable,
    config: TrainConfig,
    epsilon: f64,
    policy: SoftmaxMlpPolicy,
    duals: DualState,
    sampler: BatchSampler,
    rng: StreamRng,
    trace: TrainTrace,
}

impl<'a> GcpgTrainer<'a> {
    pub fn new<M: RewardEstimator + ?Sized>(
        data: &'a BanditDataset,
        model: &M,
        config: &TrainConfig,
    ) -> Result<Self> {
        config.validate()?;
        if data.is_empty() {
            return Err(Error::Data("training data is empty".into()));
        }
        if data.num_groups() != 2 {
            return Err(Error::Config(format!(
                "two-group training needs exactly 2 groups, got {}; use the multigroup command",
                data.num_groups()
            )));
        }
        if !config.unconstrained {
            data.require_all_groups(
                "training data (constrained mode needs both groups; use --unconstrained otherwise)",
            )?;
        }
        let predictions = PredictionTable::build(model, data)?;
        let policy = SoftmaxMlpPolicy::new(
            data.context_dim(),
            &config.hidden,
            data.num_arms(),
            &mut stream_rng(config.seed, streams::POLICY_INIT),
        )?;
        Ok(Self {
            data,
            predictions,
            config: config.clone(),
            epsilon: config.epsilon.resolve(data),
            policy,
            duals: DualState::default(),
            sampler: BatchSampler::new(data.len(), config.batch_size),
            rng: stream_rng(config.seed, streams::TRAIN),
            trace: TrainTrace::default(),
        })
    }

    pub fn policy(&self) -> &SoftmaxMlpPolicy {
        &self.policy
    }

    pub fn duals(&self) -> DualState {
        self.duals
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn trace(&self) -> &TrainTrace {
        &self.trace
    }

    pub fn step(&mut self) -> Result<&TraceRecord> {
        let batch = self.sampler.next_batch(&mut self.rng);
        let duals = self.duals;
        let flip = self.config.sign_flip;
        let stats = policy_step(
            &mut self.policy,
            self.data,
            &self.predictions,
            &batch,
            |g| group_weight(g, duals, flip),
            self.config.alpha,
            &mut self.rng,
        )?;

        let eval = Evaluator::new(self.data, &self.predictions)?;
        let probs = eval.target_probs(&self.policy)?;
        let value = eval
            .estimate_with_probs(probs.view(), Method::Dr, GroupFilter::Overall)?
            .value;
        let groups = lenient_group_values(&eval, probs.view(), self.config.constraint_estimator);
        let (v0, v1) = (groups[0], groups[1]);
        if !self.config.unconstrained {
            self.duals = dual_step(
                self.duals,
                v0,
                v1,
                self.epsilon,
                self.config.beta,
                self.config.dual_bound,
            );
        }
        self.trace.records.push(TraceRecord {
            iteration: self.trace.records.len(),
            value,
            v0,
            v1,
            disparity: (v1 - v0).abs(),
            lambda: self.duals.lambda,
            eta: self.duals.eta,
            grad_norm: stats.grad_norm,
            min_weight: stats.min_weight,
            max_weight: stats.max_weight,
        });
        Ok(self.trace.records.last().expect("just pushed"))
    }

    pub fn run(mut self) -> Result<TrainOutcome> {
        for _ in 0..self.config.iterations {
            self.step()?;
        }
        Ok(TrainOutcome {
            policy: self.policy,
            trace: self.trace,
            epsilon: self.epsilon,
        })
    }
}

/// Per-group values with `NaN` for empty groups.
pub(crate) fn lenient_group_values(
    eval: &Evaluator<'_>,
    probs: ArrayView2<'_, f64>,
    method: Method,
) -> Vec<f64> {
    (0..eval.dataset().num_groups())
        .map(|g| {
            eval.estimate_with_probs(probs, method, GroupFilter::Group(g))
                .map(|e| e.value)
                .unwrap_or(f64::NAN)
        })
        .collect()
}

/// Run GC-PG training for `config.iterations` steps.
pub fn train<M: RewardEstimator + ?Sized>(
    data: &BanditDataset,
    model: &M,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    GcpgTrainer::new(data, model, config)?.run()
}

/// Plain off-policy policy gradient on per-sample DR rewards, with no
/// group weighting or dual variables.
pub struct VanillaTrainer<'a> {
    data: &'a BanditDataset,
    predictions: PredictionTable,
    alpha: f64,
    policy: SoftmaxMlpPolicy,
    sampler: BatchSampler,
    rng: StreamRng,
}

impl<'a> VanillaTrainer<'a> {
    pub fn new<M: RewardEstimator + ?Sized>(
        data: &'a BanditDataset,
        model: &M,
        config: &TrainConfig,
    ) -> Result<Self> {
        config.validate()?;
        let predictions = PredictionTable::build(model, data)?;
        let policy = SoftmaxMlpPolicy::new(
            data.context_dim(),
            &config.hidden,
            data.num_arms(),
            &mut stream_rng(config.seed, streams::POLICY_INIT),
        )?;
        Ok(Self {
            data,
            predictions,
            alpha: config.alpha,
            policy,
            sampler: BatchSampler::new(data.len(), config.batch_size),
            rng: stream_rng(config.seed, streams::TRAIN),
        })
    }

    pub fn policy(&self) -> &SoftmaxMlpPolicy {
        &self.policy
    }

    pub fn step(&mut self) -> Result<()> {
        let batch = self.sampler.next_batch(&mut self.rng);
        let contexts = gather_contexts(self.data, &batch);
        let probs = self.policy.action_probs_batch(contexts.view())?;
        let mut actions = Vec::with_capacity(batch.len());
        let mut rewards = Vec::with_capacity(batch.len());
        for (row, &i) in batch.iter().enumerate() {
            let s = &self.data.samples()[i];
            let a = sample_categorical(probs.row(row).as_slice().expect("row-major"), &mut self.rng);
            actions.push(a);
            rewards.push(dr_reward_from_predictions(self.predictions.row(i), s, a));
        }
        let mut buffer = self.policy.gradient_buffer();
        self.policy
            .accumulate_score_gradient_batch(&mut buffer, contexts.view(), &actions, &rewards)?;
        self.policy.apply_update(&mut buffer, self.alpha)
    }
}

/// Write one JSON object per trace record.
pub fn write_trace_jsonl<T: Serialize>(records: &[T], path: &Path) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn weights_follow_the_formula() {
        let d = DualState { lambda: 0.3, eta: 0.1 };
        assert!((group_weight(1, d, false) - 0.8).abs() < 1e-15);
        assert!((group_weight(0, d, false) - 1.2).abs() < 1e-15);
        assert!((group_weight(1, d, true) - 1.2).abs() < 1e-15);
        let eq = DualState { lambda: 0.2, eta: 0.2 };
        assert_eq!(group_weight(0, eq, false), 1.0);
        assert_eq!(group_weight(1, eq, false), 1.0);
    }

    #[test]
    fn dual_step_examples() {
        let d = dual_step(DualState::default(), 0.7, 0.8, 0.05, 0.1, 0.5);
        assert!((d.lambda - 0.005).abs() < 1e-15);
        assert_eq!(d.eta, 0.0);
        assert_eq!(dual_step(DualState::default(), 0.7, 0.72, 0.05, 0.1, 0.5), DualState::default());
        let hot = dual_step(DualState { lambda: 0.49, eta: 0.0 }, 0.0, 1.0, 0.0, 1.0, 0.5);
        assert_eq!(hot.lambda, 0.5);
    }

    #[test]
    fn monotone_lambda_until_bound() {
        let mut d = DualState::default();
        let mut prev = 0.0;
        loop {
            d = dual_step(d, 0.4, 0.6, 0.05, 0.1, 0.5);
            if d.lambda == 0.5 {
                break;
            }
            assert!(d.lambda > prev);
            prev = d.lambda;
        }
    }

    #[test]
    fn epsilon_parses_numbers_and_logging() {
        let e: Epsilon = serde_json::from_str("0.05").unwrap();
        assert_eq!(e, Epsilon::Value(0.05));
        let l: Epsilon = serde_json::from_str("\"logging\"").unwrap();
        assert_eq!(l, Epsilon::Logging);
        assert!(serde_json::from_str::<Epsilon>("\"often\"").is_err());
        assert_eq!(serde_json::to_string(&Epsilon::Logging).unwrap(), "\"logging\"");
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        let bad = TrainConfig { dual_bound: 0.0, ..TrainConfig::default() };
        assert!(matches!(bad.validate(), Err(Error::Config(_))));
        let bad = TrainConfig { iterations: 0, ..TrainConfig::default() };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn sampler_covers_each_epoch() {
        let mut rng = stream_rng(1, 0);
        let mut s = BatchSampler::new(10, 5);
        let mut seen: Vec<usize> = s.next_batch(&mut rng);
        seen.extend(s.next_batch(&mut rng));
        seen.sort_unstable();
        assert_eq!(seen, (0..10).collect::<Vec<_>>());
    }
}
