//! Off-policy value estimators (DM, IPS, DR), the group disparity, and the
//! variance/MSE diagnostics for the DR estimator.
//!
//! Reward-model outputs on a dataset do not change while a policy trains, so
//! they are cached once in a [`PredictionTable`]; every estimate is then a
//! pass over `(pi_theta(.|x_i), r_hat(x_i, .))` rows.

use ndarray::{Array2, ArrayView1, ArrayView2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{BanditDataset, GroupFilter, LoggedSample};
use crate::error::{check_dim, Error, Result};
use crate::policy::StochasticPolicy;
use crate::reward_model::RewardEstimator;
use crate::rng::sample_categorical;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Dm,
    Ips,
    Dr,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Dm => "DM",
            Method::Ips => "IPS",
            Method::Dr => "DR",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ValueEstimate {
    pub value: f64,
    pub method: Method,
    pub group: GroupFilter,
    pub sample_count: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VarianceBreakdown {
    /// Mean of `xi^2`, `xi = (r - r_hat) * pi_theta / pi_b`.
    pub term_if_error: f64,
    /// Population variance over contexts of `sum_a pi_theta(a|x) r_hat(x, a)`.
    pub term_dm_variance: f64,
    /// Mean of `(1 - pi_theta(a|x)) / pi_theta(a|x) * delta^2` on logged pairs.
    pub term_weight_penalty: f64,
    /// Sum of the three terms divided by the sample count.
    pub total_bound: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DrPerSampleReward {
    pub value: f64,
}

/// Caps used only by the variance diagnostics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticOptions {
    pub max_weight: f64,
    pub min_target_prob: f64,
}

impl Default for DiagnosticOptions {
    fn default() -> Self {
        Self {
            max_weight: 100.0,
            min_target_prob: 1e-6,
        }
    }
}

/// Expected reward `r(x, a)`, available only in simulated environments.
pub trait TrueReward {
    fn true_reward(&self, context: &[f64], action: usize) -> f64;
}

/// `r_hat(x_i, a)` for every sample and arm.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionTable {
    values: Array2<f64>,
}

impl PredictionTable {
    pub fn build<M: RewardEstimator + ?Sized>(model: &M, dataset: &BanditDataset) -> Result<Self> {
        check_dim(dataset.num_arms(), model.num_arms())?;
        let mut values = Array2::zeros((dataset.len(), dataset.num_arms()));
        for (i, s) in dataset.samples().iter().enumerate() {
            for (a, v) in model.predict_all_arms(&s.context)?.into_iter().enumerate() {
                values[[i, a]] = v;
            }
        }
        Ok(Self { values })
    }

    pub fn from_array(values: Array2<f64>) -> Self {
        Self { values }
    }

    pub fn values(&self) -> ArrayView2<'_, f64> {
        self.values.view()
    }

    pub fn row(&self, i: usize) -> ArrayView1<'_, f64> {
        self.values.row(i)
    }
}

/// A dataset paired with cached reward-model predictions.
#[derive(Debug, Clone, Copy)]
pub struct Evaluator<'a> {
    dataset: &'a BanditDataset,
    predictions: &'a PredictionTable,
}

impl<'a> Evaluator<'a> {
    pub fn new(dataset: &'a BanditDataset, predictions: &'a PredictionTable) -> Result<Self> {
        let (n, k) = predictions.values.dim();
        check_dim(dataset.len(), n)?;
        check_dim(dataset.num_arms(), k)?;
        Ok(Self {
            dataset,
            predictions,
        })
    }

    pub fn dataset(&self) -> &'a BanditDataset {
        self.dataset
    }

    pub fn predictions(&self) -> &'a PredictionTable {
        self.predictions
    }

    /// Target-policy probabilities for every sample.
    pub fn target_probs<P: StochasticPolicy + ?Sized>(&self, policy: &P) -> Result<Array2<f64>> {
        check_dim(self.dataset.num_arms(), policy.num_arms())?;
        let probs = policy.action_probs_batch(self.dataset.context_matrix().view())?;
        check_dim(self.dataset.len(), probs.nrows())?;
        Ok(probs)
    }

    pub fn estimate<P: StochasticPolicy + ?Sized>(
        &self,
        policy: &P,
        method: Method,
        filter: GroupFilter,
    ) -> Result<ValueEstimate> {
        let probs = self.target_probs(policy)?;
        self.estimate_with_probs(probs.view(), method, filter)
    }

    /// Estimate from precomputed target probabilities (`n x K`).
    pub fn estimate_with_probs(
        &self,
        probs: ArrayView2<'_, f64>,
        method: Method,
        filter: GroupFilter,
    ) -> Result<ValueEstimate> {
        let count = self.dataset.filter_count(filter);
        if count == 0 {
            return Err(match filter {
                GroupFilter::Group(group) => Error::EmptyGroup {
                    group,
                    context: format!("{} estimate", method.name()),
                },
                GroupFilter::Overall => Error::Data("cannot estimate on an empty dataset".into()),
            });
        }
        let mut sum = 0.0;
        for (i, s) in self.dataset.samples().iter().enumerate() {
            if !filter.admits(s.group) {
                continue;
            }
            sum += self.sample_term(probs.row(i), self.predictions.row(i), s, method)?;
        }
        Ok(ValueEstimate {
            value: sum / count as f64,
            method,
            group: filter,
            sample_count: count,
        })
    }

    /// Values for every group in `0..num_groups`.
    pub fn group_values_with_probs(
        &self,
        probs: ArrayView2<'_, f64>,
        method: Method,
    ) -> Result<Vec<f64>> {
        let g = self.dataset.num_groups();
        let mut sums = vec![0.0; g];
        for (i, s) in self.dataset.samples().iter().enumerate() {
            sums[s.group] += self.sample_term(probs.row(i), self.predictions.row(i), s, method)?;
        }
        sums.iter()
            .zip(self.dataset.group_counts())
            .enumerate()
            .map(|(group, (s, &c))| {
                if c == 0 {
                    Err(Error::EmptyGroup {
                        group,
                        context: format!("{} estimate", method.name()),
                    })
                } else {
                    Ok(s / c as f64)
                }
            })
            .collect()
    }

    pub fn group_values<P: StochasticPolicy + ?Sized>(
        &self,
        policy: &P,
        method: Method,
    ) -> Result<Vec<f64>> {
        let probs = self.target_probs(policy)?;
        self.group_values_with_probs(probs.view(), method)
    }

    fn sample_term(
        &self,
        probs: ArrayView1<'_, f64>,
        rhat: ArrayView1<'_, f64>,
        s: &LoggedSample,
        method: Method,
    ) -> Result<f64> {
        let dm = || probs.dot(&rhat);
        let weight = || -> Result<f64> {
            if s.propensity > 0.0 {
                Ok(probs[s.action] / s.propensity)
            } else {
                Err(Error::Data(format!("zero propensity for action {}", s.action)))
            }
        };
        Ok(match method {
            Method::Dm => dm(),
            Method::Ips => weight()? * s.reward,
            Method::Dr => dm() + weight()? * (s.reward - rhat[s.action]),
        })
    }

    /// `|V_a - V_b|` under `method`.
    pub fn disparity<P: StochasticPolicy + ?Sized>(
        &self,
        policy: &P,
        method: Method,
        group_a: usize,
        group_b: usize,
    ) -> Result<f64> {
        let probs = self.target_probs(policy)?;
        let va = self.estimate_with_probs(probs.view(), method, GroupFilter::Group(group_a))?;
        let vb = self.estimate_with_probs(probs.view(), method, GroupFilter::Group(group_b))?;
        Ok((va.value - vb.value).abs())
    }

    pub fn variance_breakdown<P: StochasticPolicy + ?Sized>(
        &self,
        policy: &P,
        options: DiagnosticOptions,
    ) -> Result<VarianceBreakdown> {
        let probs = self.target_probs(policy)?;
        self.variance_breakdown_with_probs(probs.view(), options)
    }

    pub fn variance_breakdown_with_probs(
        &self,
        probs: ArrayView2<'_, f64>,
        options: DiagnosticOptions,
    ) -> Result<VarianceBreakdown> {
        let n = self.dataset.len();
        if n == 0 {
            return Err(Error::Data("variance breakdown on an empty dataset".into()));
        }
        let (mut xi2, mut penalty) = (0.0, 0.0);
        let mut dm = Vec::with_capacity(n);
        for (i, s) in self.dataset.samples().iter().enumerate() {
            let (p, rhat) = (probs.row(i), self.predictions.row(i));
            let w = (p[s.action] / s.propensity).min(options.max_weight);
            let resid = s.reward - rhat[s.action];
            xi2 += (resid * w).powi(2);
            let pt = p[s.action].max(options.min_target_prob);
            penalty += (1.0 - pt) / pt * resid * resid;
            dm.push(p.dot(&rhat));
        }
        let nf = n as f64;
        let mean_dm = dm.iter().sum::<f64>() / nf;
        let term_dm_variance = dm.iter().map(|v| (v - mean_dm).powi(2)).sum::<f64>() / nf;
        let term_if_error = xi2 / nf;
        let term_weight_penalty = penalty / nf;
        Ok(VarianceBreakdown {
            term_if_error,
            term_dm_variance,
            term_weight_penalty,
            total_bound: (term_if_error + term_dm_variance + term_weight_penalty) / nf,
        })
    }
}

pub fn value_dm<P, M>(
    policy: &P,
    model: &M,
    dataset: &BanditDataset,
    filter: GroupFilter,
) -> Result<ValueEstimate>
where
    P: StochasticPolicy + ?Sized,
    M: RewardEstimator + ?Sized,
{
    let table = PredictionTable::build(model, dataset)?;
    Evaluator::new(dataset, &table)?.estimate(policy, Method::Dm, filter)
}

pub fn value_dr<P, M>(
    policy: &P,
    model: &M,
    dataset: &BanditDataset,
    filter: GroupFilter,
) -> Result<ValueEstimate>
where
    P: StochasticPolicy + ?Sized,
    M: RewardEstimator + ?Sized,
{
    let table = PredictionTable::build(model, dataset)?;
    Evaluator::new(dataset, &table)?.estimate(policy, Method::Dr, filter)
}

pub fn value_ips<P: StochasticPolicy + ?Sized>(
    policy: &P,
    dataset: &BanditDataset,
    filter: GroupFilter,
) -> Result<ValueEstimate> {
    let table = PredictionTable::from_array(Array2::zeros((dataset.len(), dataset.num_arms())));
    Evaluator::new(dataset, &table)?.estimate(policy, Method::Ips, filter)
}

pub fn disparity<P, M>(
    policy: &P,
    model: &M,
    dataset: &BanditDataset,
    method: Method,
    group_a: usize,
    group_b: usize,
) -> Result<f64>
where
    P: StochasticPolicy + ?Sized,
    M: RewardEstimator + ?Sized,
{
    let table = PredictionTable::build(model, dataset)?;
    Evaluator::new(dataset, &table)?.disparity(policy, method, group_a, group_b)
}

/// `r_hat(x, a_sim) + 1[a_sim = a] * (r - r_hat(x, a)) / pi_b(a|x)`.
pub fn dr_reward_from_predictions(
    rhat: ArrayView1<'_, f64>,
    sample: &LoggedSample,
    simulated_action: usize,
) -> f64 {
    let mut v = rhat[simulated_action];
    if simulated_action == sample.action {
        v += (sample.reward - rhat[sample.action]) / sample.propensity;
    }
    v
}

pub fn dr_per_sample_reward<M: RewardEstimator + ?Sized>(
    model: &M,
    sample: &LoggedSample,
    simulated_action: usize,
) -> Result<DrPerSampleReward> {
    if !(sample.propensity > 0.0) {
        return Err(Error::Data("sample propensity must be positive".into()));
    }
    if simulated_action >= model.num_arms() {
        return Err(Error::Data(format!(
            "simulated action {simulated_action} >= {}",
            model.num_arms()
        )));
    }
    let rhat = ndarray::Array1::from(model.predict_all_arms(&sample.context)?);
    Ok(DrPerSampleReward {
        value: dr_reward_from_predictions(rhat.view(), sample, simulated_action),
    })
}

pub fn variance_breakdown<P, M>(
    policy: &P,
    model: &M,
    dataset: &BanditDataset,
) -> Result<VarianceBreakdown>
where
    P: StochasticPolicy + ?Sized,
    M: RewardEstimator + ?Sized,
{
    let table = PredictionTable::build(model, dataset)?;
    Evaluator::new(dataset, &table)?.variance_breakdown(policy, DiagnosticOptions::default())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MseCheck {
    pub empirical_mse: f64,
    pub bound: f64,
    pub holds: bool,
}

/// Mean squared gap between the per-sample DR reward of `a_sim ~ pi_theta`
/// and the true expected reward of `a_sim`, against `Var + 3 R_max^2`.
pub fn mse_bound_check<P, M, R>(
    policy: &P,
    model: &M,
    dataset: &BanditDataset,
    truth: Option<&dyn TrueReward>,
    rng: &mut R,
) -> Result<MseCheck>
where
    P: StochasticPolicy + ?Sized,
    M: RewardEstimator + ?Sized,
    R: Rng + ?Sized,
{
    let truth = truth.ok_or_else(|| {
        Error::Config("mse_bound_check requires an environment with known true rewards".into())
    })?;
    let table = PredictionTable::build(model, dataset)?;
    let eval = Evaluator::new(dataset, &table)?;
    let probs = eval.target_probs(policy)?;
    let var = eval.variance_breakdown_with_probs(probs.view(), DiagnosticOptions::default())?;
    let mut sq = 0.0;
    for (i, s) in dataset.samples().iter().enumerate() {
        let a = sample_categorical(probs.row(i).as_slice().expect("row-major"), rng);
        let dr = dr_reward_from_predictions(table.row(i), s, a);
        sq += (dr - truth.true_reward(&s.context, a)).powi(2);
    }
    let empirical_mse = sq / dataset.len() as f64;
    let r = dataset.reward_upper_bound();
    let bound = var.total_bound + 3.0 * r * r;
    Ok(MseCheck {
        empirical_mse,
        bound,
        holds: empirical_mse <= bound,
    })
}
