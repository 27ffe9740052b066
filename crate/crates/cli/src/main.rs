use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use fairbandit_core::harness::{
    cmd_convert, cmd_eval, cmd_multigroup, cmd_report, cmd_sweep, cmd_train, EvalSubject,
    ExperimentConfig, Overrides,
};
use fairbandit_core::{Epsilon, GbtConfig, Result};

const CONFIG_DEFAULTS: &str = "\
Config defaults (TOML or JSON, relative paths resolve against the config file):
  name = \"synthetic\"   group_label = \"group\"   seed = 0   replicates = 30
  mode = \"two_group\"   train_fraction = 0.7   out_dir = \"out\"   save_splits = false
  epsilon_grid = [0.01, 0.03, 0.05, 0.07, 0.1]
  [data]          required; source = \"synthetic\" defaults to preset = \"two_group\",
                  num_samples = 20000
  [logging]       kind = \"random\"  (tweak1: rho, fixed_arm = 0;
                  mixed: label_fraction = 0.1, temperature = 2.0, floor = 0.01)
  [reward_model]  max_depth = 5, num_trees = 100, subsample = 0.8, min_split_gain = 5.0,
                  l2_leaf_reg = 0.1, learning_rate = 0.3, min_samples_leaf = 1
  [train]         epsilon = 0.03, alpha = 0.001, beta = 0.1, dual_bound = 0.5,
                  iterations = 200, batch_size = 256, hidden = [256, 256],
                  constraint_estimator = \"dr\"

Exit codes: 0 ok, 1 internal error, 2 input or IO error, 3 data validation error.";

#[derive(Parser)]
#[command(
    name = "fairbandit",
    version,
    about = "Group-sensitive offline contextual bandits",
    after_help = CONFIG_DEFAULTS
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Turn the configured source into logged bandit feedback (dataset.jsonl).
    Convert(Common),
    /// Train one policy per replicate and write an aggregate report.
    Train(Common),
    /// Score a checkpoint or the logging policy with DM, IPS and DR.
    Eval(EvalArgs),
    /// Sweep epsilon, keep the Pareto frontier and pick the fairest point.
    Sweep(Common),
    /// Train with the most-violated-pair multigroup constraint.
    Multigroup(Common),
    /// Merge saved report.json files into one table.
    Report(ReportArgs),
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    #[arg(long)]
    replicates: Option<usize>,
    /// A number, or "logging" for the logging policy's own gap.
    #[arg(long, value_parser = parse_epsilon)]
    epsilon: Option<Epsilon>,
    #[arg(long)]
    unconstrained: bool,
    #[arg(long)]
    sign_flip: bool,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long, conflicts_with = "logging", required_unless_present = "logging")]
    checkpoint: Option<PathBuf>,
    /// Saved reward model; fit a fresh one when omitted.
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    logging: bool,
    /// Seed for a freshly fit reward model.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Args)]
struct ReportArgs {
    #[arg(required = true)]
    reports: Vec<PathBuf>,
    #[arg(long, default_value = "report")]
    out_dir: PathBuf,
}

fn parse_epsilon(s: &str) -> std::result::Result<Epsilon, String> {
    if s == "logging" {
        return Ok(Epsilon::Logging);
    }
    s.parse::<f64>()
        .map(Epsilon::Value)
        .map_err(|_| format!("expected a number or \"logging\", got {s:?}"))
}

fn load(common: &Common) -> Result<ExperimentConfig> {
    let mut config = ExperimentConfig::load(&common.config)?;
    config.apply(&Overrides {
        seed: common.seed,
        out_dir: common.out_dir.clone(),
        replicates: common.replicates,
        epsilon: common.epsilon,
        unconstrained: common.unconstrained,
        sign_flip: common.sign_flip,
    });
    Ok(config)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Convert(c) => {
            let path = cmd_convert(&load(&c)?)?;
            println!("wrote {}", path.display());
        }
        Command::Train(c) => {
            let config = load(&c)?;
            let r = cmd_train(&config)?;
            println!(
                "{}: reward {} disparity {} (logging disparity {})",
                r.method,
                r.reward.display(),
                r.disparity.display(),
                r.logging_disparity.display()
            );
        }
        Command::Multigroup(c) => {
            let r = cmd_multigroup(&load(&c)?)?;
            println!(
                "{}: reward {} max disparity {}",
                r.method,
                r.reward.display(),
                r.disparity.display()
            );
        }
        Command::Sweep(c) => {
            let config = load(&c)?;
            let s = cmd_sweep(&config)?;
            let p = &s.points[s.chosen];
            println!(
                "chose epsilon={} r0={:.4} r1={:.4} disparity={:.4}",
                p.epsilon.label(),
                p.r0,
                p.r1,
                p.disparity
            );
        }
        Command::Eval(e) => {
            let subject = match e.checkpoint {
                Some(p) => EvalSubject::Checkpoint(p),
                None => EvalSubject::Logging,
            };
            let gbt = GbtConfig {
                seed: e.seed,
                ..GbtConfig::default()
            };
            let out = cmd_eval(&subject, &e.dataset, e.model.as_deref(), &gbt)?;
            let text = serde_json::to_string_pretty(&out)? + "\n";
            match e.out_dir {
                Some(dir) => {
                    std::fs::create_dir_all(&dir)
                        .map_err(|err| fairbandit_core::Error::io(&dir, err))?;
                    let path = dir.join("eval.json");
                    std::fs::write(&path, &text)
                        .map_err(|err| fairbandit_core::Error::io(&path, err))?;
                    println!("wrote {}", path.display());
                }
                None => print!("{text}"),
            }
        }
        Command::Report(r) => {
            let reports = cmd_report(&r.reports, &r.out_dir)?;
            println!("merged {} reports into {}", reports.len(), r.out_dir.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
