use std::path::Path;

use fairbandit_core::harness::{
    cmd_convert, cmd_eval, cmd_multigroup, cmd_report, cmd_sweep, cmd_train, emit_report,
    EvalSubject, ExperimentConfig, Stat,
};
use fairbandit_core::{Error, GbtConfig, Method};

fn tiny(dir: &Path, replicates: usize, extra: &str) -> ExperimentConfig {
    let text = format!(
        r#"
seed = 3
replicates = {replicates}
out_dir = "out"
{extra}

[data]
source = "synthetic"
num_samples = 800

[reward_model]
num_trees = 4

[train]
alpha = 0.05
beta = 0.5
iterations = 8
batch_size = 64
hidden = [8]
"#
    );
    let path = dir.join("config.toml");
    std::fs::write(&path, text).unwrap();
    ExperimentConfig::load(&path).unwrap()
}

fn read(path: &Path) -> Vec<u8> {
    std::fs::read(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

#[test]
fn relative_paths_resolve_against_the_config() {
    let dir = tempfile::tempdir().unwrap();
    let c = tiny(dir.path(), 2, "");
    assert_eq!(c.out_dir, dir.path().join("out"));
}

#[test]
fn train_reruns_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = tiny(dir.path(), 2, "save_splits = true");
    let files = [
        "report.json",
        "table.csv",
        "table.txt",
        "replicate_3/policy.json",
        "replicate_3/trace.csv",
        "replicate_4/reward_model.json",
        "replicate_4/train.jsonl",
    ];
    cmd_train(&c).unwrap();
    let first: Vec<Vec<u8>> = files.iter().map(|f| read(&c.out_dir.join(f))).collect();
    c.out_dir = dir.path().join("again");
    cmd_train(&c).unwrap();
    for (f, bytes) in files.iter().zip(&first) {
        assert_eq!(&read(&c.out_dir.join(f)), bytes, "{f}");
    }
}

#[test]
fn report_statistics_recompute_from_replicates() {
    let dir = tempfile::tempdir().unwrap();
    let c = tiny(dir.path(), 2, "");
    let r = cmd_train(&c).unwrap();
    assert_eq!(r.seeds, vec![3, 4]);
    let rewards: Vec<f64> = r.replicates.iter().map(|x| x.reward).collect();
    let mean = rewards.iter().sum::<f64>() / 2.0;
    let std = (rewards.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 2.0).sqrt();
    assert!((r.reward.mean - mean).abs() < 1e-9 && (r.reward.std - std).abs() < 1e-9);
    for x in &r.replicates {
        assert!((x.disparity - (x.group_values[0] - x.group_values[1]).abs()).abs() < 1e-12);
    }
    let csv = std::fs::read_to_string(c.out_dir.join("table.csv")).unwrap();
    let row: Vec<&str> = csv.lines().nth(1).unwrap().split(',').collect();
    assert!((row[6].parse::<f64>().unwrap() - mean).abs() < 1e-9);
    assert!((row[7].parse::<f64>().unwrap() - std).abs() < 1e-9);
    let txt = std::fs::read_to_string(c.out_dir.join("table.txt")).unwrap();
    assert!(txt.contains(&Stat { mean, std }.display()));
}

#[test]
fn report_merges_saved_runs() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = tiny(dir.path(), 1, "");
    cmd_train(&c).unwrap();
    let first = c.out_dir.join("report.json");
    c.out_dir = dir.path().join("unc");
    c.train.unconstrained = true;
    cmd_train(&c).unwrap();
    let merged = cmd_report(&[first, c.out_dir.join("report.json")], &dir.path().join("m")).unwrap();
    assert_eq!(merged.len(), 2);
    assert_eq!(merged[1].method, "Unconstrained");
    let txt = std::fs::read_to_string(dir.path().join("m/table.txt")).unwrap();
    assert_eq!(txt.lines().count(), 4);
    assert!(matches!(emit_report(&[], dir.path()), Err(Error::Data(_))));
}

#[test]
fn convert_then_eval() {
    let dir = tempfile::tempdir().unwrap();
    let c = tiny(dir.path(), 2, "");
    let path = cmd_convert(&c).unwrap();
    let bytes = read(&path);
    cmd_convert(&c).unwrap();
    assert_eq!(read(&path), bytes);
    let out = cmd_eval(&EvalSubject::Logging, &path, None, &GbtConfig::default()).unwrap();
    // overall plus two groups for each of three methods
    assert_eq!(out.estimates.len(), 9);
    let ips = out.estimates.iter().find(|e| e.method == Method::Ips).unwrap();
    let data = fairbandit_core::dataset::read_jsonl(&path).unwrap();
    assert!((ips.value - data.mean_reward()).abs() < 1e-12);
}

#[test]
fn multigroup_on_the_three_group_preset() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = tiny(dir.path(), 1, "");
    c.data = toml::from_str("source = \"synthetic\"\npreset = \"three_group\"\nnum_samples = 900")
        .unwrap();
    c.train.epsilon = fairbandit_core::Epsilon::Value(0.07);
    let r = cmd_multigroup(&c).unwrap();
    assert_eq!(r.group_values.len(), 3);
    let trace = std::fs::read_to_string(c.out_dir.join("replicate_3/trace.csv")).unwrap();
    assert!(trace.starts_with("iteration,value,active_pair,v0,v1,v2,"));
    assert!(matches!(cmd_train(&{ let mut t = c.clone(); t.mode = fairbandit_core::harness::Mode::TwoGroup; t }), Err(Error::Config(_))));
}

#[test]
fn sweep_writes_frontier_and_choice() {
    let dir = tempfile::tempdir().unwrap();
    let c = tiny(dir.path(), 1, "epsilon_grid = [0.01, 0.1]");
    let s = cmd_sweep(&c).unwrap();
    assert_eq!(s.points.len(), 3);
    let unc = s.points.last().unwrap();
    assert!(s.points[s.chosen].disparity <= unc.disparity || !s.frontier.contains(&2));
    assert!(c.out_dir.join("chosen_policy.json").exists());
    let csv = std::fs::read_to_string(c.out_dir.join("sweep.csv")).unwrap();
    assert_eq!(csv.lines().count(), 4);
    assert!(csv.lines().last().unwrap().starts_with("unconstrained,"));
}

#[test]
fn hundred_sample_run_completes() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = tiny(dir.path(), 1, "");
    c.data = toml::from_str("source = \"synthetic\"\nnum_samples = 100").unwrap();
    c.train.iterations = 10;
    cmd_train(&c).unwrap();
    let trace = std::fs::read_to_string(c.out_dir.join("replicate_3/trace.csv")).unwrap();
    assert_eq!(trace.lines().count(), 11);
}

#[test]
fn checkpoint_eval_on_train_and_test_splits() {
    let dir = tempfile::tempdir().unwrap();
    let c = tiny(dir.path(), 1, "save_splits = true");
    cmd_train(&c).unwrap();
    let rep = c.out_dir.join("replicate_3");
    let subject = EvalSubject::Checkpoint(rep.join("policy.json"));
    let model = rep.join("reward_model.json");
    let on_train = cmd_eval(&subject, &rep.join("train.jsonl"), Some(&model), &GbtConfig::default()).unwrap();
    let on_test = cmd_eval(&subject, &rep.join("test.jsonl"), Some(&model), &GbtConfig::default()).unwrap();
    assert_ne!(on_train.estimates[0].value, on_test.estimates[0].value);
    for out in [&on_train, &on_test] {
        for (method, gap) in &out.disparity {
            let v: Vec<f64> = out
                .estimates
                .iter()
                .filter(|e| e.method == *method && e.group != fairbandit_core::GroupFilter::Overall)
                .map(|e| e.value)
                .collect();
            assert_eq!(*gap, (v[0] - v[1]).abs());
        }
    }
}

#[test]
fn missing_group_in_a_split_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = tiny(dir.path(), 1, "");
    c.data = toml::from_str(
        "source = \"synthetic\"\nnum_samples = 60\n[environment]\nnum_features = 2\nnum_arms = 2\ngroups = [{ feature = 0, strength = 1.0, share = 1.0 }, { feature = 1, strength = 1.0, share = 1e-9 }]",
    )
    .unwrap();
    let e = cmd_train(&c).unwrap_err();
    assert_eq!(e.exit_code(), 3);
    assert!(e.to_string().contains('1'), "{e}");
}

#[test]
fn bad_inputs_map_to_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let e = ExperimentConfig::load(&dir.path().join("missing.toml")).unwrap_err();
    assert_eq!(e.exit_code(), 2);
    std::fs::write(dir.path().join("bad.toml"), "[data]\nsource = \"nope\"").unwrap();
    assert_eq!(ExperimentConfig::load(&dir.path().join("bad.toml")).unwrap_err().exit_code(), 2);
    let mut c = tiny(dir.path(), 2, "");
    c.replicates = 0;
    assert_eq!(cmd_train(&c).unwrap_err().exit_code(), 2);
}
