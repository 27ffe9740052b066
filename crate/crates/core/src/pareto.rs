//! Epsilon sweeps over the two-group trainer, the Pareto frontier of the
//! resulting `(r0, r1)` points, and selection of the fairest frontier member.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::dataset::{BanditDataset, GroupFilter};
use crate::error::{Error, Result};
use crate::estimators::{Evaluator, Method, PredictionTable};
use crate::policy::SoftmaxMlpPolicy;
use crate::reward_model::RewardEstimator;
use crate::trainer::{train, Epsilon, TrainConfig};

/// Tolerance of one sweep point; the unconstrained run sorts after every
/// finite value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SweepEpsilon {
    Value(f64),
    Unconstrained,
}

impl SweepEpsilon {
    fn sort_key(self) -> f64 {
        match self {
            SweepEpsilon::Value(v) => v,
            SweepEpsilon::Unconstrained => f64::INFINITY,
        }
    }

    pub fn label(self) -> String {
        match self {
            SweepEpsilon::Value(v) => v.to_string(),
            SweepEpsilon::Unconstrained => "unconstrained".into(),
        }
    }
}

impl Serialize for SweepEpsilon {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            SweepEpsilon::Value(v) => s.serialize_f64(*v),
            SweepEpsilon::Unconstrained => s.serialize_str("unconstrained"),
        }
    }
}

impl<'de> Deserialize<'de> for SweepEpsilon {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Str(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(v) => Ok(SweepEpsilon::Value(v)),
            Raw::Str(s) if s == "unconstrained" => Ok(SweepEpsilon::Unconstrained),
            Raw::Str(s) => Err(serde::de::Error::custom(format!(
                "expected a number or \"unconstrained\", got {s:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub epsilon: SweepEpsilon,
    pub r0: f64,
    pub r1: f64,
    pub overall: f64,
    pub disparity: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<String>,
    pub seed: u64,
}

impl SweepPoint {
    pub fn new(epsilon: SweepEpsilon, r0: f64, r1: f64, overall: f64, seed: u64) -> Self {
        Self {
            epsilon,
            r0,
            r1,
            overall,
            disparity: (r0 - r1).abs(),
            checkpoint: None,
            seed,
        }
    }
}

/// Indices (ascending) of the points not strictly dominated in the
/// `(r0, r1)` plane. Identical points never dominate one another.
pub fn pareto_frontier(points: &[SweepPoint]) -> Result<Vec<usize>> {
    if points.is_empty() {
        return Err(Error::Data("pareto_frontier needs at least one point".into()));
    }
    if points.iter().any(|p| !p.r0.is_finite() || !p.r1.is_finite()) {
        return Err(Error::Data("sweep points must have finite rewards".into()));
    }
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.sort_by(|&a, &b| points[b].r0.total_cmp(&points[a].r0));
    let mut keep = Vec::new();
    // best r1 among points with strictly larger r0
    let mut best_above = f64::NEG_INFINITY;
    let mut start = 0;
    while start < order.len() {
        let r0 = points[order[start]].r0;
        let end = start
            + order[start..]
                .iter()
                .take_while(|&&i| points[i].r0 == r0)
                .count();
        let group = &order[start..end];
        let top = group
            .iter()
            .map(|&i| points[i].r1)
            .fold(f64::NEG_INFINITY, f64::max);
        if top > best_above {
            keep.extend(group.iter().copied().filter(|&i| points[i].r1 == top));
        }
        best_above = best_above.max(top);
        start = end;
    }
    keep.sort_unstable();
    Ok(keep)
}

/// Frontier member with the smallest disparity; ties go to the higher
/// overall reward, then the smaller epsilon.
pub fn select_fairest(points: &[SweepPoint], frontier: &[usize]) -> Result<usize> {
    frontier
        .iter()
        .copied()
        .min_by(|&a, &b| {
            let (pa, pb) = (&points[a], &points[b]);
            pa.disparity
                .total_cmp(&pb.disparity)
                .then(pb.overall.total_cmp(&pa.overall))
                .then(pa.epsilon.sort_key().total_cmp(&pb.epsilon.sort_key()))
                .then(a.cmp(&b))
        })
        .ok_or_else(|| Error::Data("select_fairest needs a nonempty frontier".into()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    /// One point per grid value followed by the unconstrained run.
    pub points: Vec<SweepPoint>,
    pub frontier: Vec<usize>,
    pub chosen: usize,
    /// Policy of the first replicate for each point.
    pub policies: Vec<SoftmaxMlpPolicy>,
}

impl SweepResult {
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record([
            "epsilon", "r0", "r1", "overall", "disparity", "seed", "dominated", "chosen",
        ])?;
        for (i, p) in self.points.iter().enumerate() {
            w.write_record([
                p.epsilon.label(),
                p.r0.to_string(),
                p.r1.to_string(),
                p.overall.to_string(),
                p.disparity.to_string(),
                p.seed.to_string(),
                (!self.frontier.contains(&i)).to_string(),
                (i == self.chosen).to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// Train one policy per grid value plus an unconstrained run, score each on
/// `test` with DR, average over `replicates` seeds (`base.seed + r`), and
/// pick the fairest Pareto point.
pub fn run_sweep<M: RewardEstimator + Sync + ?Sized>(
    train_data: &BanditDataset,
    test_data: &BanditDataset,
    model: &M,
    epsilon_grid: &[f64],
    base: &TrainConfig,
    replicates: usize,
) -> Result<SweepResult> {
    if epsilon_grid.is_empty() {
        return Err(Error::Config("epsilon grid must be nonempty".into()));
    }
    if replicates == 0 {
        return Err(Error::Config("replicates must be at least 1".into()));
    }
    test_data.require_all_groups("sweep test data")?;
    let table = PredictionTable::build(model, test_data)?;
    let eval = Evaluator::new(test_data, &table)?;
    let settings: Vec<SweepEpsilon> = epsilon_grid
        .iter()
        .map(|&e| SweepEpsilon::Value(e))
        .chain(std::iter::once(SweepEpsilon::Unconstrained))
        .collect();
    let jobs: Vec<(usize, usize)> = (0..settings.len())
        .flat_map(|s| (0..replicates).map(move |r| (s, r)))
        .collect();
    let runs = jobs
        .par_iter()
        .map(|&(s, r)| {
            let mut config = base.clone();
            config.seed = base.seed + r as u64;
            match settings[s] {
                SweepEpsilon::Value(e) => {
                    config.epsilon = Epsilon::Value(e);
                    config.unconstrained = false;
                }
                SweepEpsilon::Unconstrained => config.unconstrained = true,
            }
            let out = train(train_data, model, &config)?;
            let probs = eval.target_probs(&out.policy)?;
            let groups = eval.group_values_with_probs(probs.view(), Method::Dr)?;
            let overall = eval
                .estimate_with_probs(probs.view(), Method::Dr, GroupFilter::Overall)?
                .value;
            Ok((groups[0], groups[1], overall, out.policy))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut points = Vec::with_capacity(settings.len());
    let mut policies = Vec::with_capacity(settings.len());
    for (s, &setting) in settings.iter().enumerate() {
        let chunk = &runs[s * replicates..(s + 1) * replicates];
        let k = replicates as f64;
        let r0 = chunk.iter().map(|c| c.0).sum::<f64>() / k;
        let r1 = chunk.iter().map(|c| c.1).sum::<f64>() / k;
        let overall = chunk.iter().map(|c| c.2).sum::<f64>() / k;
        points.push(SweepPoint::new(setting, r0, r1, overall, base.seed));
        policies.push(chunk[0].3.clone());
    }
    let frontier = pareto_frontier(&points)?;
    let chosen = select_fairest(&points, &frontier)?;
    Ok(SweepResult {
        points,
        frontier,
        chosen,
        policies,
    })
}
