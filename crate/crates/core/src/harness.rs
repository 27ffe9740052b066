//! Experiment orchestration behind the CLI: configuration, dataset
//! preparation, replicated training runs, sweeps, evaluation, and reports.
//!
//! Primary outputs (datasets, checkpoints, traces, reports) depend only on
//! the configuration. Wall-clock data goes to a `metadata.json` sidecar.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{
    convert_classification, load_csv, read_jsonl, split, write_jsonl, BanditDataset, GroupFilter,
    GroupSpec, LoggingPolicy, LoggingPolicyKind, Schema,
};
use crate::error::{Error, Result};
use crate::estimators::{Evaluator, Method, PredictionTable, ValueEstimate};
use crate::multigroup::{max_disparity, train_multigroup};
use crate::pareto::run_sweep;
use crate::policy::{SoftmaxMlpPolicy, StochasticPolicy};
use crate::reward_model::{GbtConfig, GbtRewardModel};
use crate::synthetic::PlantedAdvantage;
use crate::trainer::{train, Epsilon, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvironmentPreset {
    TwoGroup,
    ThreeGroup,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum DataSource {
    Synthetic {
        #[serde(default = "default_preset")]
        preset: EnvironmentPreset,
        #[serde(default = "default_num_samples")]
        num_samples: usize,
        /// Replaces the preset when given.
        #[serde(default)]
        environment: Option<PlantedAdvantage>,
    },
    Csv {
        path: PathBuf,
        schema: Schema,
        group: GroupSpec,
    },
    Jsonl {
        path: PathBuf,
    },
}

fn default_preset() -> EnvironmentPreset {
    EnvironmentPreset::TwoGroup
}
fn default_num_samples() -> usize {
    20_000
}

impl DataSource {
    pub fn environment(&self) -> Option<PlantedAdvantage> {
        match self {
            DataSource::Synthetic {
                preset,
                environment,
                ..
            } => Some(environment.clone().unwrap_or_else(|| match preset {
                EnvironmentPreset::TwoGroup => PlantedAdvantage::two_group(),
                EnvironmentPreset::ThreeGroup => PlantedAdvantage::three_group(),
            })),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    TwoGroup,
    Multigroup,
    Sweep,
    UnconstrainedBaseline,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Dataset label used in reports.
    #[serde(default = "default_name")]
    pub name: String,
    /// Sensitive-feature label used in reports.
    #[serde(default = "default_group_label")]
    pub group_label: String,
    pub data: DataSource,
    #[serde(default = "default_logging")]
    pub logging: LoggingPolicyKind,
    #[serde(default = "default_train_fraction")]
    pub train_fraction: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_replicates")]
    pub replicates: usize,
    #[serde(default = "default_mode")]
    pub mode: Mode,
    #[serde(default = "default_grid")]
    pub epsilon_grid: Vec<f64>,
    #[serde(default)]
    pub reward_model: GbtConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
    /// Write each replicate's train/test split next to its checkpoint.
    #[serde(default)]
    pub save_splits: bool,
}

fn default_name() -> String {
    "synthetic".into()
}
fn default_group_label() -> String {
    "group".into()
}
fn default_logging() -> LoggingPolicyKind {
    LoggingPolicyKind::Random
}
fn default_train_fraction() -> f64 {
    0.7
}
fn default_replicates() -> usize {
    30
}
fn default_mode() -> Mode {
    Mode::TwoGroup
}
fn default_grid() -> Vec<f64> {
    vec![0.01, 0.03, 0.05, 0.07, 0.1]
}
fn default_out_dir() -> PathBuf {
    PathBuf::from("out")
}

/// Command-line values that take precedence over the config file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out_dir: Option<PathBuf>,
    pub replicates: Option<usize>,
    pub epsilon: Option<Epsilon>,
    pub unconstrained: bool,
    pub sign_flip: bool,
}

impl ExperimentConfig {
    /// Parse TOML, or JSON when the file extension is `.json`. Relative paths
    /// resolve against the config file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut config: Self = if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(&text)?
        } else {
            toml::from_str(&text)?
        };
        let base = path.parent().unwrap_or(Path::new("."));
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        match &mut config.data {
            DataSource::Csv { path, .. } | DataSource::Jsonl { path } => resolve(path),
            DataSource::Synthetic { .. } => {}
        }
        resolve(&mut config.out_dir);
        Ok(config)
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(s) = o.seed {
            self.seed = s;
        }
        if let Some(d) = &o.out_dir {
            self.out_dir = d.clone();
        }
        if let Some(r) = o.replicates {
            self.replicates = r;
        }
        if let Some(e) = o.epsilon {
            self.train.epsilon = e;
        }
        if o.unconstrained {
            self.train.unconstrained = true;
            if self.mode == Mode::TwoGroup {
                self.mode = Mode::UnconstrainedBaseline;
            }
        }
        if o.sign_flip {
            self.train.sign_flip = true;
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.replicates == 0 {
            return Err(Error::Config("replicates must be at least 1".into()));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::Config("train_fraction must lie in (0, 1)".into()));
        }
        match &self.data {
            DataSource::Csv { path, .. } | DataSource::Jsonl { path } => {
                std::fs::metadata(path).map_err(|e| Error::io(path, e))?;
            }
            DataSource::Synthetic { num_samples, .. } => {
                if *num_samples < 10 {
                    return Err(Error::Config("synthetic num_samples must be at least 10".into()));
                }
                self.data.environment().expect("synthetic").validate()?;
            }
        }
        LoggingPolicy::new(self.logging.clone(), 2).map(|_| ())?;
        self.reward_model.validate()?;
        self.train.validate()
    }

    /// Effective training config for one replicate.
    fn train_config(&self, seed: u64) -> TrainConfig {
        let mut c = self.train.clone();
        c.seed = seed;
        if self.mode == Mode::UnconstrainedBaseline {
            c.unconstrained = true;
        }
        c
    }

    pub fn replicate_seeds(&self) -> Vec<u64> {
        (0..self.replicates as u64).map(|i| self.seed + i).collect()
    }
}

/// Build the full logged dataset for `seed`.
pub fn prepare_dataset(config: &ExperimentConfig, seed: u64) -> Result<BanditDataset> {
    match &config.data {
        DataSource::Synthetic { num_samples, .. } => config
            .data
            .environment()
            .expect("synthetic")
            .generate(*num_samples, &config.logging, seed),
        DataSource::Csv {
            path,
            schema,
            group,
        } => {
            let table = load_csv(path, schema, group)?;
            convert_classification(&table, config.logging.clone(), seed)
        }
        DataSource::Jsonl { path } => read_jsonl(path),
    }
}

/// Mean and population standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
}

impl Stat {
    pub fn from_values(values: &[f64]) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Data("cannot summarize zero replicates".into()));
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        Ok(Self {
            mean,
            std: var.sqrt(),
        })
    }

    pub fn display(&self) -> String {
        format!("{:.3} ± {:.3}", self.mean, self.std)
    }
}

/// Test-set outcome of one replicate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateSummary {
    pub seed: u64,
    pub reward: f64,
    pub disparity: f64,
    pub group_values: Vec<f64>,
    pub logging_reward: f64,
    pub logging_disparity: f64,
    pub logging_group_values: Vec<f64>,
    pub epsilon: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub dataset: String,
    pub group: String,
    pub off_policy: String,
    pub method: String,
    pub epsilon: Option<f64>,
    pub seeds: Vec<u64>,
    pub reward: Stat,
    pub disparity: Stat,
    pub logging_reward: Stat,
    pub logging_disparity: Stat,
    pub group_values: Vec<f64>,
    pub logging_group_values: Vec<f64>,
    pub replicates: Vec<ReplicateSummary>,
}

impl Report {
    pub fn from_replicates(
        config: &ExperimentConfig,
        method: &str,
        mut replicates: Vec<ReplicateSummary>,
    ) -> Result<Self> {
        if replicates.is_empty() {
            return Err(Error::Data("a report needs at least one replicate".into()));
        }
        replicates.sort_by_key(|r| r.seed);
        let col = |f: fn(&ReplicateSummary) -> f64| -> Vec<f64> { replicates.iter().map(f).collect() };
        let mean_vec = |f: fn(&ReplicateSummary) -> &Vec<f64>| -> Vec<f64> {
            let g = f(&replicates[0]).len();
            (0..g)
                .map(|k| replicates.iter().map(|r| f(r)[k]).sum::<f64>() / replicates.len() as f64)
                .collect()
        };
        Ok(Self {
            dataset: config.name.clone(),
            group: config.group_label.clone(),
            off_policy: config.logging.name().to_string(),
            method: method.to_string(),
            epsilon: replicates[0].epsilon,
            seeds: replicates.iter().map(|r| r.seed).collect(),
            reward: Stat::from_values(&col(|r| r.reward))?,
            disparity: Stat::from_values(&col(|r| r.disparity))?,
            logging_reward: Stat::from_values(&col(|r| r.logging_reward))?,
            logging_disparity: Stat::from_values(&col(|r| r.logging_disparity))?,
            group_values: mean_vec(|r| &r.group_values),
            logging_group_values: mean_vec(|r| &r.logging_group_values),
            replicates,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Everything a single replicate produces.
#[derive(Debug, Clone)]
pub struct ReplicateOutcome {
    pub summary: ReplicateSummary,
    pub policy: SoftmaxMlpPolicy,
    pub model: GbtRewardModel,
    pub trace: ReplicateTrace,
    pub train: BanditDataset,
    pub test: BanditDataset,
}

#[derive(Debug, Clone)]
pub enum ReplicateTrace {
    TwoGroup(crate::trainer::TrainTrace),
    Multigroup(crate::multigroup::MultigroupTrace),
}

impl ReplicateTrace {
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        match self {
            ReplicateTrace::TwoGroup(t) => t.write_csv(path),
            ReplicateTrace::Multigroup(t) => t.write_csv(path),
        }
    }
}

/// Disparity used in reports: `|v0 - v1|` for two groups, the max pairwise
/// gap otherwise.
pub fn report_disparity(values: &[f64]) -> f64 {
    max_disparity(values)
}

fn test_summary<P: StochasticPolicy + ?Sized>(
    eval: &Evaluator<'_>,
    policy: &P,
) -> Result<(f64, Vec<f64>)> {
    let probs = eval.target_probs(policy)?;
    let overall = eval
        .estimate_with_probs(probs.view(), Method::Dr, GroupFilter::Overall)?
        .value;
    Ok((overall, eval.group_values_with_probs(probs.view(), Method::Dr)?))
}

/// Data, split, reward model, training, and DR test evaluation for `seed`.
pub fn run_replicate(config: &ExperimentConfig, seed: u64) -> Result<ReplicateOutcome> {
    let data = prepare_dataset(config, seed)?;
    let (train_data, test_data) = split(&data, config.train_fraction, seed)?;
    train_data.require_all_groups("the training split")?;
    test_data.require_all_groups("the test split")?;
    let model = GbtRewardModel::fit(
        &train_data,
        &GbtConfig {
            seed,
            ..config.reward_model.clone()
        },
    )?;
    let tc = config.train_config(seed);
    let (policy, trace, epsilon) = match config.mode {
        Mode::Multigroup => {
            let out = train_multigroup(&train_data, &model, &tc)?;
            (out.policy, ReplicateTrace::Multigroup(out.trace), out.epsilon)
        }
        Mode::TwoGroup | Mode::UnconstrainedBaseline => {
            let out = train(&train_data, &model, &tc)?;
            (out.policy, ReplicateTrace::TwoGroup(out.trace), out.epsilon)
        }
        Mode::Sweep => {
            return Err(Error::Config("sweep mode runs through the sweep command".into()))
        }
    };
    let table = PredictionTable::build(&model, &test_data)?;
    let eval = Evaluator::new(&test_data, &table)?;
    let (reward, group_values) = test_summary(&eval, &policy)?;
    let logging = logging_policy(&test_data)?;
    let (logging_reward, logging_group_values) = test_summary(&eval, &logging)?;
    let summary = ReplicateSummary {
        seed,
        reward,
        disparity: report_disparity(&group_values),
        group_values,
        logging_reward,
        logging_disparity: report_disparity(&logging_group_values),
        logging_group_values,
        epsilon: (!tc.unconstrained).then_some(epsilon),
    };
    Ok(ReplicateOutcome {
        summary,
        policy,
        model,
        trace,
        train: train_data,
        test: test_data,
    })
}

/// The logging policy recorded in a dataset's provenance.
pub fn logging_policy(data: &BanditDataset) -> Result<LoggingPolicy> {
    data.provenance()
        .map(|p| p.logging.clone())
        .ok_or_else(|| Error::Data("dataset carries no logging-policy descriptor".into()))
}

fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, Serialize)]
struct Metadata<'a> {
    command: &'a str,
    version: &'a str,
    seeds: Vec<u64>,
    durations_secs: Vec<f64>,
    finished_unix_secs: u64,
}

fn write_metadata(out_dir: &Path, command: &str, seeds: Vec<u64>, durations: Vec<f64>) -> Result<()> {
    let finished = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    write_json(
        &out_dir.join("metadata.json"),
        &Metadata {
            command,
            version: env!("CARGO_PKG_VERSION"),
            seeds,
            durations_secs: durations,
            finished_unix_secs: finished,
        },
    )
}

/// Convert the configured source into `out_dir/dataset.jsonl`.
pub fn cmd_convert(config: &ExperimentConfig) -> Result<PathBuf> {
    config.validate()?;
    let start = Instant::now();
    let data = prepare_dataset(config, config.seed)?;
    create_dir(&config.out_dir)?;
    let path = config.out_dir.join("dataset.jsonl");
    write_jsonl(&path, &data)?;
    write_metadata(
        &config.out_dir,
        "convert",
        vec![config.seed],
        vec![start.elapsed().as_secs_f64()],
    )?;
    Ok(path)
}

fn method_label(config: &ExperimentConfig) -> &'static str {
    match config.mode {
        Mode::UnconstrainedBaseline => "Unconstrained",
        Mode::Multigroup if config.train.unconstrained => "Unconstrained",
        Mode::Multigroup => "GC-PG multigroup",
        Mode::TwoGroup if config.train.unconstrained => "Unconstrained",
        _ => "GC-PG",
    }
}

/// Run every replicate, write per-replicate artifacts and the aggregate
/// report, and return the report.
pub fn cmd_train(config: &ExperimentConfig) -> Result<Report> {
    config.validate()?;
    create_dir(&config.out_dir)?;
    let seeds = config.replicate_seeds();
    let runs = seeds
        .par_iter()
        .map(|&seed| {
            let start = Instant::now();
            let out = run_replicate(config, seed)?;
            let dir = config.out_dir.join(format!("replicate_{seed}"));
            create_dir(&dir)?;
            out.policy.save_json(&dir.join("policy.json"))?;
            out.model.save_json(&dir.join("reward_model.json"))?;
            out.trace.write_csv(&dir.join("trace.csv"))?;
            if config.save_splits {
                write_jsonl(&dir.join("train.jsonl"), &out.train)?;
                write_jsonl(&dir.join("test.jsonl"), &out.test)?;
            }
            Ok((out.summary, start.elapsed().as_secs_f64()))
        })
        .collect::<Result<Vec<_>>>()?;
    let durations = runs.iter().map(|r| r.1).collect();
    let report = Report::from_replicates(
        config,
        method_label(config),
        runs.into_iter().map(|r| r.0).collect(),
    )?;
    write_json(&config.out_dir.join("report.json"), &report)?;
    emit_report(std::slice::from_ref(&report), &config.out_dir)?;
    write_metadata(&config.out_dir, "train", seeds, durations)?;
    Ok(report)
}

pub fn cmd_multigroup(config: &ExperimentConfig) -> Result<Report> {
    let mut c = config.clone();
    c.mode = Mode::Multigroup;
    cmd_train(&c)
}

/// Sweep epsilon over the grid on the base seed's split; writes
/// `sweep.csv`, `sweep.json`, and `chosen_policy.json`.
pub fn cmd_sweep(config: &ExperimentConfig) -> Result<crate::pareto::SweepResult> {
    config.validate()?;
    let start = Instant::now();
    let data = prepare_dataset(config, config.seed)?;
    let (train_data, test_data) = split(&data, config.train_fraction, config.seed)?;
    train_data.require_all_groups("the training split")?;
    let model = GbtRewardModel::fit(
        &train_data,
        &GbtConfig {
            seed: config.seed,
            ..config.reward_model.clone()
        },
    )?;
    let mut base = config.train.clone();
    base.seed = config.seed;
    let mut result = run_sweep(
        &train_data,
        &test_data,
        &model,
        &config.epsilon_grid,
        &base,
        config.replicates,
    )?;
    create_dir(&config.out_dir)?;
    let chosen = result.chosen;
    result.points[chosen].checkpoint = Some("chosen_policy.json".into());
    result.policies[chosen].save_json(&config.out_dir.join("chosen_policy.json"))?;
    result.write_csv(&config.out_dir.join("sweep.csv"))?;
    write_json(&config.out_dir.join("sweep.json"), &result.points)?;
    write_metadata(
        &config.out_dir,
        "sweep",
        config.replicate_seeds(),
        vec![start.elapsed().as_secs_f64()],
    )?;
    Ok(result)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalOutput {
    pub subject: String,
    pub estimates: Vec<ValueEstimate>,
    /// `(method, disparity)`; max pairwise gap for more than two groups.
    pub disparity: Vec<(Method, f64)>,
}

/// What `cmd_eval` scores.
#[derive(Debug, Clone, PartialEq)]
pub enum EvalSubject {
    Checkpoint(PathBuf),
    /// The dataset's own logging policy.
    Logging,
}

/// DM, IPS, and DR values per group and overall. Without `model_path` a
/// reward model is fit on `dataset_path` with `gbt`.
pub fn cmd_eval(
    subject: &EvalSubject,
    dataset_path: &Path,
    model_path: Option<&Path>,
    gbt: &GbtConfig,
) -> Result<EvalOutput> {
    let data = read_jsonl(dataset_path)?;
    let model = match model_path {
        Some(p) => GbtRewardModel::load_json(p)?,
        None => GbtRewardModel::fit(&data, gbt)?,
    };
    let table = PredictionTable::build(&model, &data)?;
    let eval = Evaluator::new(&data, &table)?;
    let (name, probs) = match subject {
        EvalSubject::Checkpoint(p) => {
            let policy = SoftmaxMlpPolicy::load_json(p)?;
            (p.display().to_string(), eval.target_probs(&policy)?)
        }
        EvalSubject::Logging => ("logging".to_string(), eval.target_probs(&logging_policy(&data)?)?),
    };
    let mut estimates = Vec::new();
    let mut disparity = Vec::new();
    for method in [Method::Dm, Method::Ips, Method::Dr] {
        estimates.push(eval.estimate_with_probs(probs.view(), method, GroupFilter::Overall)?);
        let mut values = Vec::new();
        for g in 0..data.num_groups() {
            let e = eval.estimate_with_probs(probs.view(), method, GroupFilter::Group(g))?;
            values.push(e.value);
            estimates.push(e);
        }
        disparity.push((method, max_disparity(&values)));
    }
    Ok(EvalOutput {
        subject: name,
        estimates,
        disparity,
    })
}

const TABLE_HEADER: [&str; 6] = ["dataset", "group", "off-policy", "method", "reward", "disparity"];

/// Write `table.csv` and an aligned `table.txt`, one row per report.
pub fn emit_report(reports: &[Report], out_dir: &Path) -> Result<()> {
    if reports.is_empty() {
        return Err(Error::Data("emit_report needs at least one report".into()));
    }
    create_dir(out_dir)?;
    let csv_path = out_dir.join("table.csv");
    let mut w = csv::Writer::from_path(&csv_path)?;
    w.write_record([
        "dataset", "group", "off_policy", "method", "epsilon", "replicates", "reward_mean",
        "reward_std", "disparity_mean", "disparity_std", "logging_disparity_mean",
    ])?;
    for r in reports {
        w.write_record([
            r.dataset.clone(),
            r.group.clone(),
            r.off_policy.clone(),
            r.method.clone(),
            r.epsilon.map(|e| e.to_string()).unwrap_or_default(),
            r.seeds.len().to_string(),
            r.reward.mean.to_string(),
            r.reward.std.to_string(),
            r.disparity.mean.to_string(),
            r.disparity.std.to_string(),
            r.logging_disparity.mean.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(&csv_path, e))?;

    let rows: Vec<[String; 6]> = reports
        .iter()
        .map(|r| {
            let group = match r.epsilon {
                Some(e) => format!("{} (eps={e})", r.group),
                None => r.group.clone(),
            };
            [
                r.dataset.clone(),
                group,
                r.off_policy.clone(),
                r.method.clone(),
                r.reward.display(),
                r.disparity.display(),
            ]
        })
        .collect();
    let mut widths: Vec<usize> = TABLE_HEADER.iter().map(|h| h.chars().count()).collect();
    for row in &rows {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.chars().count());
        }
    }
    let mut text = String::new();
    let line = |cells: &[String], text: &mut String| {
        let padded: Vec<String> = cells
            .iter()
            .zip(&widths)
            .map(|(c, &w)| format!("{c}{}", " ".repeat(w - c.chars().count())))
            .collect();
        let _ = writeln!(text, "{}", padded.join("  ").trim_end());
    };
    line(&TABLE_HEADER.map(String::from), &mut text);
    let _ = writeln!(text, "{}", "-".repeat(widths.iter().sum::<usize>() + 2 * (widths.len() - 1)));
    for row in &rows {
        line(row, &mut text);
    }
    let txt_path = out_dir.join("table.txt");
    std::fs::write(&txt_path, text).map_err(|e| Error::io(&txt_path, e))
}

/// Merge saved reports into one table.
pub fn cmd_report(report_paths: &[PathBuf], out_dir: &Path) -> Result<Vec<Report>> {
    let reports = report_paths
        .iter()
        .map(|p| Report::load(p))
        .collect::<Result<Vec<_>>>()?;
    emit_report(&reports, out_dir)?;
    Ok(reports)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stat_is_population_std() {
        let s = Stat::from_values(&[1.0, 3.0]).unwrap();
        assert_eq!((s.mean, s.std), (2.0, 1.0));
        assert_eq!(Stat::from_values(&[0.4]).unwrap().std, 0.0);
        assert!(Stat::from_values(&[]).is_err());
    }

    #[test]
    fn config_parses_with_defaults() {
        let c: ExperimentConfig = toml::from_str(
            r#"
            [data]
            source = "synthetic"
            num_samples = 100
            [train]
            epsilon = "logging"
            iterations = 5
            "#,
        )
        .unwrap();
        assert_eq!(c.replicates, 30);
        assert_eq!(c.train.epsilon, Epsilon::Logging);
        assert_eq!(c.train.dual_bound, 0.5);
        assert_eq!(c.reward_model.max_depth, 5);
        assert!(c.validate().is_ok());
        assert!(toml::from_str::<ExperimentConfig>("bogus = 1\n[data]\nsource = \"synthetic\"").is_err());
    }

    #[test]
    fn overrides_take_precedence() {
        let mut c: ExperimentConfig =
            toml::from_str("[data]\nsource = \"synthetic\"").unwrap();
        c.apply(&Overrides {
            seed: Some(9),
            replicates: Some(2),
            unconstrained: true,
            ..Overrides::default()
        });
        assert_eq!(c.seed, 9);
        assert_eq!(c.replicate_seeds(), vec![9, 10]);
        assert_eq!(c.mode, Mode::UnconstrainedBaseline);
    }
}
