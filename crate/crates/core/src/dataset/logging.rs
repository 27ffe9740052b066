use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::policy::{softmax_row, StochasticPolicy};
use crate::rng::{stream_rng, streams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LoggingPolicyKind {
    /// Uniform over arms.
    Random,
    /// `rho` on `fixed_arm`, the rest spread evenly over the other arms.
    #[serde(rename = "tweak1")]
    Tweak1 {
        rho: f64,
        #[serde(default)]
        fixed_arm: usize,
    },
    /// Temperature-softened multinomial logistic regression fit on a small
    /// labeled subsample, floored and renormalized.
    Mixed {
        #[serde(default = "default_label_fraction")]
        label_fraction: f64,
        #[serde(default = "default_temperature")]
        temperature: f64,
        #[serde(default = "default_floor")]
        floor: f64,
    },
}

fn default_label_fraction() -> f64 {
    0.1
}
fn default_temperature() -> f64 {
    2.0
}
fn default_floor() -> f64 {
    0.01
}

impl LoggingPolicyKind {
    pub fn mixed_default() -> Self {
        LoggingPolicyKind::Mixed {
            label_fraction: default_label_fraction(),
            temperature: default_temperature(),
            floor: default_floor(),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            LoggingPolicyKind::Random => "Random",
            LoggingPolicyKind::Tweak1 { .. } => "Tweak-1",
            LoggingPolicyKind::Mixed { .. } => "Mixed",
        }
    }
}

/// Multinomial logistic regression on standardized features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SoftmaxRegression {
    mean: Vec<f64>,
    scale: Vec<f64>,
    /// `d x K`
    weights: Vec<f64>,
    bias: Vec<f64>,
    num_classes: usize,
}

impl SoftmaxRegression {
    const ITERATIONS: usize = 300;
    const STEP: f64 = 0.5;
    const L2: f64 = 1e-3;

    /// Full-batch gradient descent on mean cross-entropy.
    pub fn fit(x: ArrayView2<'_, f64>, labels: &[usize], num_classes: usize) -> Result<Self> {
        let (n, d) = x.dim();
        if n == 0 {
            return Err(Error::Data("cannot fit a logging model on zero rows".into()));
        }
        check_dim(n, labels.len())?;
        let mean = x.mean_axis(Axis(0)).expect("nonempty");
        let scale = x
            .std_axis(Axis(0), 0.0)
            .mapv(|s| if s > 1e-12 { s } else { 1.0 });
        let z = (&x - &mean) / &scale;
        let mut onehot = Array2::<f64>::zeros((n, num_classes));
        for (i, &y) in labels.iter().enumerate() {
            if y >= num_classes {
                return Err(Error::Data(format!("label {y} >= {num_classes}")));
            }
            onehot[[i, y]] = 1.0;
        }
        let mut w = Array2::<f64>::zeros((d, num_classes));
        let mut b = Array1::<f64>::zeros(num_classes);
        for _ in 0..Self::ITERATIONS {
            let mut logits = z.dot(&w);
            logits += &b;
            for mut row in logits.rows_mut() {
                let p = softmax_row(row.view());
                row.assign(&p);
            }
            let resid = (&logits - &onehot) / n as f64;
            let gw = z.t().dot(&resid) + &(&w * Self::L2);
            let gb = resid.sum_axis(Axis(0));
            w.scaled_add(-Self::STEP, &gw);
            b.scaled_add(-Self::STEP, &gb);
        }
        Ok(Self {
            mean: mean.to_vec(),
            scale: scale.to_vec(),
            weights: w.iter().copied().collect(),
            bias: b.to_vec(),
            num_classes,
        })
    }

    pub fn logits(&self, context: &[f64]) -> Result<Vec<f64>> {
        let d = self.mean.len();
        check_dim(d, context.len())?;
        let mut out = self.bias.clone();
        for (j, &x) in context.iter().enumerate() {
            let z = (x - self.mean[j]) / self.scale[j];
            let row = &self.weights[j * self.num_classes..(j + 1) * self.num_classes];
            for (o, &w) in out.iter_mut().zip(row) {
                *o += z * w;
            }
        }
        Ok(out)
    }
}

/// A logging policy and, for the Mixed kind, its fitted model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoggingPolicy {
    pub kind: LoggingPolicyKind,
    pub num_arms: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<SoftmaxRegression>,
}

impl LoggingPolicy {
    pub fn new(kind: LoggingPolicyKind, num_arms: usize) -> Result<Self> {
        if num_arms < 2 {
            return Err(Error::Config(format!("need at least 2 arms, got {num_arms}")));
        }
        let k = num_arms as f64;
        match &kind {
            LoggingPolicyKind::Random => {}
            LoggingPolicyKind::Tweak1 { rho, fixed_arm } => {
                // rho = 1/K is admitted: it is the uniform policy.
                if !(*rho >= 1.0 / k && *rho < 1.0) {
                    return Err(Error::Config(format!(
                        "tweak1 rho must lie in [1/K, 1), got {rho}"
                    )));
                }
                if *fixed_arm >= num_arms {
                    return Err(Error::Config(format!(
                        "tweak1 fixed_arm {fixed_arm} >= {num_arms}"
                    )));
                }
            }
            LoggingPolicyKind::Mixed {
                label_fraction,
                temperature,
                floor,
            } => {
                if !(*label_fraction > 0.0 && *label_fraction <= 1.0) {
                    return Err(Error::Config("mixed label_fraction must lie in (0, 1]".into()));
                }
                if !(*temperature > 0.0) {
                    return Err(Error::Config("mixed temperature must be positive".into()));
                }
                if !(*floor >= 0.0 && *floor * k < 1.0) {
                    return Err(Error::Config("mixed floor must lie in [0, 1/K)".into()));
                }
            }
        }
        Ok(Self {
            kind,
            num_arms,
            model: None,
        })
    }

    pub fn needs_fit(&self) -> bool {
        matches!(self.kind, LoggingPolicyKind::Mixed { .. }) && self.model.is_none()
    }

    /// Fit the Mixed model on a seeded `label_fraction` subsample. No-op for
    /// the other kinds.
    pub fn fit(&mut self, features: ArrayView2<'_, f64>, labels: &[usize], seed: u64) -> Result<()> {
        let LoggingPolicyKind::Mixed { label_fraction, .. } = self.kind else {
            return Ok(());
        };
        let n = features.nrows();
        check_dim(n, labels.len())?;
        let take = ((n as f64 * label_fraction).ceil() as usize)
            .max(self.num_arms)
            .min(n);
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(&mut stream_rng(seed, streams::MIXED_FIT));
        idx.truncate(take);
        idx.sort_unstable();
        let x = features.select(Axis(0), &idx);
        let y: Vec<usize> = idx.iter().map(|&i| labels[i]).collect();
        self.model = Some(SoftmaxRegression::fit(x.view(), &y, self.num_arms)?);
        Ok(())
    }

    pub fn propensities(&self, context: &[f64]) -> Result<Vec<f64>> {
        let k = self.num_arms;
        match &self.kind {
            LoggingPolicyKind::Random => Ok(vec![1.0 / k as f64; k]),
            LoggingPolicyKind::Tweak1 { rho, fixed_arm } => {
                let off = (1.0 - rho) / (k as f64 - 1.0);
                Ok((0..k).map(|a| if a == *fixed_arm { *rho } else { off }).collect())
            }
            LoggingPolicyKind::Mixed {
                temperature, floor, ..
            } => {
                let model = self.model.as_ref().ok_or_else(|| {
                    Error::State("mixed logging policy used before fitting".into())
                })?;
                let logits = Array1::from(model.logits(context)?) / *temperature;
                let mut p = softmax_row(logits.view()).mapv(|v| v.max(*floor));
                let total = p.sum();
                p /= total;
                Ok(p.to_vec())
            }
        }
    }
}

/// Probability vector of `policy` at `context`.
pub fn logging_propensities(policy: &LoggingPolicy, context: &[f64]) -> Result<Vec<f64>> {
    policy.propensities(context)
}

impl StochasticPolicy for LoggingPolicy {
    fn num_arms(&self) -> usize {
        self.num_arms
    }

    fn action_probs(&self, context: &[f64]) -> Result<Vec<f64>> {
        self.propensities(context)
    }
}
