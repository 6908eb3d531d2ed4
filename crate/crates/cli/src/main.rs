//! `offpolicy`: offline evaluation and learning of contextual-bandit
//! policies from logged data.
//!
//! Every command writes its outputs into `--out` together with a `manifest`
//! file that replays the run via `--config`.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Command, CommandFactory, FromArgMatches, Parser, Subcommand, ValueHint};

const GLOBALS: [&str; 4] = ["seed", "threads", "config", "out"];

#[derive(Debug, Parser)]
#[command(name = "offpolicy", version, about = "Offline evaluation and learning of contextual-bandit policies")]
pub struct Cli {
    /// Seed from which all randomness is derived.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// JSON run configuration or manifest; command-line flags override it.
    #[arg(long, global = true, value_name = "FILE", value_hint = ValueHint::FilePath)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = ".", value_hint = ValueHint::DirPath)]
    pub out: PathBuf,
    #[command(subcommand)]
    pub command: Cmd,
}

#[derive(Debug, Subcommand)]
pub enum Cmd {
    /// Generate logged datasets.
    #[command(subcommand)]
    Simulate(SimulateCmd),
    /// Turn a multiclass dataset into a logged bandit dataset.
    Convert(ConvertArgs),
    /// Write a policy checkpoint from explicit parameters.
    Policy(PolicyArgs),
    /// Train a policy on a logged dataset.
    Learn(LearnArgs),
    /// Fit a least-squares reward model and its greedy policy.
    FitReward(FitRewardArgs),
    /// Estimate the value of a policy.
    Evaluate(EvaluateArgs),
    /// Imitation-loss diagnosis of the logging policy.
    Diagnose(DiagnoseArgs),
    /// Reweight a log as if collected by the fitted imitation policy.
    Resample(ResampleArgs),
    /// Subsampling bootstrap with fitted convergence rate.
    Bootstrap(BootstrapArgs),
    /// Log-log survival table of importance weights.
    Tailplot(TailplotArgs),
    /// Paired comparison of a policy against a baseline.
    Compare(CompareArgs),
}

#[derive(Debug, Subcommand)]
pub enum SimulateCmd {
    /// Kidney-stone log with the stone size hidden.
    Simpson {
        /// `expected` (fractional rewards) or `sampled` (Bernoulli rewards).
        #[arg(long, default_value = "expected")]
        mode: String,
        /// Multiplier on every cell count.
        #[arg(long, default_value_t = 1)]
        scale: u64,
    },
    /// Epsilon-greedy log over two actions.
    Epsgreedy {
        #[arg(long, default_value_t = 0.01)]
        epsilon: f64,
        #[arg(long, default_value_t = 100)]
        n: usize,
    },
    /// Random environment with a hidden context component.
    Confounded {
        #[arg(long, default_value_t = 10)]
        observed: usize,
        #[arg(long, default_value_t = 3)]
        hidden: usize,
        #[arg(long, default_value_t = 10)]
        actions: usize,
        #[arg(long, default_value_t = 1000)]
        n: usize,
        /// Emit expected rewards instead of Bernoulli draws.
        #[arg(long)]
        expected: bool,
        /// Emit every (context, action) pair once with probability weights.
        #[arg(long)]
        enumerated: bool,
    },
    /// Records with Pareto-distributed importance weights for `action:A`.
    Pareto {
        #[arg(long, default_value_t = 10_000)]
        n: usize,
        #[arg(long, default_value_t = 1.5)]
        alpha: f64,
        #[arg(long, default_value_t = 100.0)]
        xm: f64,
    },
    /// Synthetic multiclass data in `label idx:val ...` format.
    Multiclass {
        #[arg(long, default_value_t = 1000)]
        n: usize,
        #[arg(long, default_value_t = 8)]
        dim: usize,
        #[arg(long, default_value_t = 4)]
        classes: usize,
        #[arg(long, default_value_t = 0.5)]
        noise: f64,
    },
    /// One number per line drawn from `uniform`, `normal`, `cauchy` or
    /// `pareto:ALPHA`.
    Sample {
        #[arg(long)]
        dist: String,
        #[arg(long, default_value_t = 10_000)]
        n: usize,
    },
}

#[derive(Debug, Args)]
pub struct DataArgs {
    /// Logged dataset (line-delimited JSON).
    #[arg(long, value_hint = ValueHint::FilePath)]
    pub data: PathBuf,
    /// `full`, `partial` or `missing`; by default the richest scenario every
    /// record supports.
    #[arg(long)]
    pub scenario: Option<String>,
    /// Use the hidden column `h` as a one-hot context.
    #[arg(long)]
    pub reveal_hidden: bool,
    /// Context dimension when larger than the data shows.
    #[arg(long)]
    pub context_dim: Option<usize>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long, default_value_t = 1.0)]
    pub lr: f64,
    /// `constant` or `inverse-sqrt`.
    #[arg(long, default_value = "inverse-sqrt")]
    pub schedule: String,
    /// Minibatch size (default: full batch).
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long, default_value_t = 500)]
    pub epochs: usize,
    /// Weight decay.
    #[arg(long, default_value_t = 0.0)]
    pub weight_decay: f64,
    #[arg(long, default_value_t = 1e-6)]
    pub tolerance: f64,
    #[arg(long, default_value_t = 5)]
    pub patience: usize,
    /// Fraction of records held out for the self-normalization check.
    #[arg(long, default_value_t = 0.0)]
    pub holdout: f64,
}

#[derive(Debug, Args)]
pub struct ConvertArgs {
    /// Multiclass file, one `label idx:val ...` example per line.
    #[arg(long, value_hint = ValueHint::FilePath)]
    pub input: PathBuf,
    #[arg(long, default_value_t = 0.5)]
    pub train_fraction: f64,
    #[arg(long, default_value_t = 0.9)]
    pub skew: f64,
    #[arg(long, default_value_t = 1.0)]
    pub temperature: f64,
    #[arg(long, default_value_t = 1)]
    pub repetitions: usize,
    #[arg(long, default_value_t = 0.5)]
    pub classifier_lr: f64,
    #[arg(long, default_value_t = 100)]
    pub classifier_epochs: usize,
}

#[derive(Debug, Args)]
pub struct PolicyArgs {
    /// `context-free`, `tabular`, `linear`, `bilinear-full` or `lowrank:R`.
    #[arg(long)]
    pub family: String,
    /// Comma-separated parameter vector (default: zeros).
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub theta: Vec<f64>,
    /// Dataset fixing the parameter shapes.
    #[arg(long, value_hint = ValueHint::FilePath)]
    pub data: PathBuf,
    #[arg(long)]
    pub reveal_hidden: bool,
    /// Evaluate the greedy sharpening instead of the softmax.
    #[arg(long)]
    pub greedy: bool,
    /// Checkpoint file name inside the output directory.
    #[arg(long, default_value = "policy.ckpt")]
    pub name: String,
}

#[derive(Debug, Args)]
pub struct LearnArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// `ipwe`, `ipwe-clipped:TAU`, `pil-mu`, `pil-empty`, `ce`, `iml-full`,
    /// `iml-part`, `iml-miss`, `pil-iml[:EPS]`, `poem:ALPHA`, `dr`,
    /// `pil-dr[:EPS]`.
    #[arg(long)]
    pub objective: String,
    /// `context-free`, `tabular`, `linear`, `bilinear-full` or `lowrank:R`.
    #[arg(long)]
    pub family: String,
    /// Weight bound of `pil-dr`: `identity`, `clip:TAU`, `log`,
    /// `log-above-one`.
    #[arg(long, default_value = "log")]
    pub bound: String,
    /// Family of the reward model for `dr` and `pil-dr` (default: --family).
    #[arg(long)]
    pub reward_family: Option<String>,
    /// L2 penalty inside the objective.
    #[arg(long, default_value_t = 0.0)]
    pub l2: f64,
    /// Starting checkpoint.
    #[arg(long, value_hint = ValueHint::FilePath)]
    pub init: Option<PathBuf>,
    /// Save the checkpoint as a greedy policy.
    #[arg(long)]
    pub greedy: bool,
    #[command(flatten)]
    pub train: TrainArgs,
}

#[derive(Debug, Args)]
pub struct FitRewardArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// `context-free`, `tabular`, `linear`, `bilinear-full` or `lowrank:R`.
    #[arg(long)]
    pub family: String,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Checkpoint file, `action:ID` or `logging`.
    #[arg(long, value_hint = ValueHint::FilePath)]
    pub policy: String,
    /// Comma-separated list of `ipwe`, `delta-ipwe`, `clipped-ipwe`,
    /// `clipped-delta-ipwe`, `dr`, `pil-dr`, `combined`.
    #[arg(long, value_delimiter = ',', default_value = "ipwe")]
    pub estimator: Vec<String>,
    #[arg(long, default_value_t = offpolicy::estimators::DEFAULT_TAU)]
    pub tau: f64,
    /// Upper bound on the reward level for `combined`.
    #[arg(long, default_value_t = offpolicy::estimators::DEFAULT_R_MAX)]
    pub r_max: f64,
    /// Reward model family for `dr` and `pil-dr` (default: the policy's).
    #[arg(long)]
    pub reward_family: Option<String>,
    /// Weight bound of `pil-dr`.
    #[arg(long, default_value = "log")]
    pub bound: String,
}

#[derive(Debug, Args)]
pub struct DiagnoseArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// `context-free`, `tabular`, `linear`, `bilinear-full` or `lowrank:R`.
    #[arg(long)]
    pub family: String,
    /// Losses above this are UNDERFIT.
    #[arg(long, default_value_t = offpolicy::diagnosis::DEFAULT_THRESHOLD)]
    pub threshold: f64,
    #[command(flatten)]
    pub train: TrainArgs,
}

#[derive(Debug, Args)]
pub struct ResampleArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Imitation policy checkpoint; fitted with --family when absent.
    #[arg(long, value_hint = ValueHint::FilePath)]
    pub iml: Option<PathBuf>,
    /// `context-free`, `tabular`, `linear`, `bilinear-full` or `lowrank:R`.
    #[arg(long, default_value = "tabular")]
    pub family: String,
    #[command(flatten)]
    pub train: TrainArgs,
}

#[derive(Debug, Args)]
pub struct BootstrapArgs {
    /// Numbers, one per line; the statistic is bootstrapped over them.
    #[arg(long, value_hint = ValueHint::FilePath, conflicts_with_all = ["data", "policy"])]
    pub values: Option<PathBuf>,
    /// `mean`, `median` or `max` (with --values).
    #[arg(long, default_value = "mean")]
    pub statistic: String,
    /// Logged dataset; the clipped IPWE of --policy is bootstrapped.
    #[arg(long, value_hint = ValueHint::FilePath, requires = "policy")]
    pub data: Option<PathBuf>,
    /// Checkpoint file, `action:ID` or `logging`.
    #[arg(long, value_hint = ValueHint::FilePath)]
    pub policy: Option<String>,
    /// Comma-separated clipping thresholds (`inf` for none).
    #[arg(long, value_delimiter = ',', default_value = "inf,500")]
    pub tau: Vec<f64>,
    #[arg(long, default_value_t = 10_000)]
    pub replicates: usize,
    /// Comma-separated subsample sizes (default: six sizes from n^0.5 to
    /// n^0.75).
    #[arg(long, value_delimiter = ',')]
    pub sizes: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "0.025,0.975")]
    pub quantiles: Vec<f64>,
    #[arg(long)]
    pub without_replacement: bool,
}

#[derive(Debug, Args)]
pub struct TailplotArgs {
    /// Weights, one per line.
    #[arg(long, value_hint = ValueHint::FilePath, conflicts_with_all = ["data", "policy"])]
    pub values: Option<PathBuf>,
    #[arg(long, value_hint = ValueHint::FilePath, requires = "policy")]
    pub data: Option<PathBuf>,
    /// Checkpoint file, `action:ID` or `logging`.
    #[arg(long, value_hint = ValueHint::FilePath)]
    pub policy: Option<String>,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Candidate policy.
    #[arg(long, value_hint = ValueHint::FilePath)]
    pub policy: String,
    /// Baseline, typically the imitation policy.
    #[arg(long, value_hint = ValueHint::FilePath)]
    pub baseline: String,
    #[arg(long, default_value_t = offpolicy::estimators::DEFAULT_TAU)]
    pub tau: f64,
    #[arg(long, default_value_t = offpolicy::estimators::DEFAULT_R_MAX)]
    pub r_max: f64,
    #[arg(long, default_value_t = 1000)]
    pub replicates: usize,
}

/// Makes every flag of every subcommand override earlier occurrences.
fn override_self(cmd: Command) -> Command {
    let names: Vec<String> = cmd.get_subcommands().map(|s| s.get_name().to_string()).collect();
    let mut cmd = cmd.args_override_self(true);
    for name in names {
        cmd = cmd.mut_subcommand(name, override_self);
    }
    cmd
}

fn main() -> ExitCode {
    let args = match config::expand_config(std::env::args_os().collect()) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    let mut command = override_self(Cli::command());
    command.build();
    let matches = match command.clone().try_get_matches_from(args) {
        Ok(m) => m,
        Err(e) => e.exit(),
    };
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(c) => c,
        Err(e) => e.exit(),
    };
    let (path, leaf_cmd, leaf_matches) = config::leaf(&command, &matches);
    let manifest = config::Manifest {
        command: path,
        options: config::collect_options(leaf_cmd, leaf_matches, &GLOBALS),
        seed: cli.seed,
        threads: cli.threads,
        out: std::path::absolute(&cli.out).unwrap_or_else(|_| cli.out.clone()),
    };
    match commands::run(&cli, &manifest) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
