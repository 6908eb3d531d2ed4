//! Subcommand implementations.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use offpolicy::bootstrap::{
    clipping_rate_study, max, mean, median, subsample_ci, tail_exponent_plot, BootstrapConfig, BootstrapFlag,
    BootstrapResult,
};
use offpolicy::data::{write_aggregated, LoggedDataset, LoggedRecord, LoggingScenario};
use offpolicy::diagnosis::{diagnose, mutual_info_oracle, resample_weights, reweight};
use offpolicy::estimators::{
    clipped_delta_ipwe, clipped_ipwe, clipped_pil_dr, combined_offline_estimate, delta_ipwe, dr, ipwe, paired_delta,
    EstimateReport, QGreedy, RewardModel, WeightBound, WeightVector,
};
use offpolicy::objectives::{ObjectiveKind, ObjectiveSpec, DEFAULT_EPSILON};
use offpolicy::policy::{
    write_checkpoint, Checkpoint, ConstantPolicy, LoggingPolicy, Policy, PolicyError, PolicyFamily, PolicyParams,
};
use offpolicy::seed;
use offpolicy::simulators::{
    convert_multiclass, simulate_epsilon_greedy, simulate_pareto_weights, simulate_simpson, synth_confounded_env,
    ConversionSpec, EmitMode, MulticlassData, SimpsonSpec,
};
use offpolicy::trainer::{fit_reward_model, train, train_from, TrainConfig};
use rand::Rng;
use rand_distr::{Cauchy, Distribution, Pareto, StandardNormal};

use crate::config::Manifest;
use crate::{
    BootstrapArgs, Cli, Cmd, CompareArgs, ConvertArgs, DataArgs, DiagnoseArgs, EvaluateArgs, FitRewardArgs, LearnArgs,
    PolicyArgs, ResampleArgs, SimulateCmd, TailplotArgs, TrainArgs,
};

pub fn run(cli: &Cli, manifest: &Manifest) -> Result<()> {
    if let Some(t) = cli.threads {
        if t == 0 {
            bail!("--threads must be >= 1");
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .context("configuring the thread pool")?;
    }
    let out = &cli.out;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let seed = cli.seed;
    match &cli.command {
        Cmd::Simulate(s) => simulate(s, seed, out)?,
        Cmd::Convert(a) => convert(a, seed, out)?,
        Cmd::Policy(a) => policy(a, seed, out)?,
        Cmd::Learn(a) => learn(a, seed, out)?,
        Cmd::FitReward(a) => fit_reward(a, out)?,
        Cmd::Evaluate(a) => evaluate(a, out)?,
        Cmd::Diagnose(a) => diagnose_cmd(a, seed, out)?,
        Cmd::Resample(a) => resample(a, seed, out)?,
        Cmd::Bootstrap(a) => bootstrap(a, seed, out)?,
        Cmd::Tailplot(a) => tailplot(a, out)?,
        Cmd::Compare(a) => compare(a, seed, out)?,
    }
    manifest.write(out)
}

fn num(x: f64) -> String {
    x.to_string()
}

fn opt(x: Option<f64>) -> String {
    x.map_or(String::new(), num)
}

fn csv_out(dir: &Path, name: &str) -> Result<csv::Writer<File>> {
    let path = dir.join(name);
    csv::Writer::from_path(&path).with_context(|| format!("creating {}", path.display()))
}

fn write_summary(dir: &Path, rows: &[(&str, String)]) -> Result<()> {
    let mut w = csv_out(dir, "summary.csv")?;
    w.write_record(["key", "value"])?;
    for (k, v) in rows {
        w.write_record([*k, v.as_str()])?;
    }
    w.flush()?;
    Ok(())
}

fn dataset_summary(d: &LoggedDataset) -> Vec<(&'static str, String)> {
    vec![
        ("records", d.len().to_string()),
        ("scenario", d.scenario().to_string()),
        ("total_weight", num(d.total_weight())),
        ("mean_reward", num(d.mean_reward())),
    ]
}

fn family(s: &str) -> Result<PolicyFamily> {
    s.parse().map_err(|e: String| anyhow!(e))
}

fn load_dataset(a: &DataArgs) -> Result<LoggedDataset> {
    load_path(&a.data, a.scenario.as_deref(), a.reveal_hidden, a.context_dim)
}

fn load_path(path: &Path, scenario: Option<&str>, reveal_hidden: bool, context_dim: Option<usize>) -> Result<LoggedDataset> {
    let raw = LoggedDataset::load(path, LoggingScenario::Missing)
        .with_context(|| format!("loading {}", path.display()))?;
    let scenario = match scenario {
        Some(s) => s.parse().map_err(|e: String| anyhow!(e))?,
        None if raw.records().iter().all(|r| r.full_propensities.is_some()) => LoggingScenario::Full,
        None if raw.records().iter().all(|r| r.propensity.is_some()) => LoggingScenario::Partial,
        None => LoggingScenario::Missing,
    };
    let mut d = raw.with_scenario(scenario)?;
    if reveal_hidden {
        d = d.reveal_hidden()?;
    }
    if let Some(dim) = context_dim {
        d = d.with_context_dim(dim)?;
    }
    Ok(d)
}

/// A policy given on the command line.
enum PolicyRef {
    Checkpoint(Checkpoint),
    Constant(ConstantPolicy),
    Logging,
}

impl Policy for PolicyRef {
    fn probabilities(&self, record: &LoggedRecord) -> Result<Vec<f64>, PolicyError> {
        match self {
            PolicyRef::Checkpoint(c) => c.probabilities(record),
            PolicyRef::Constant(c) => c.probabilities(record),
            PolicyRef::Logging => LoggingPolicy.probabilities(record),
        }
    }

    fn prob_of(&self, record: &LoggedRecord, k: usize) -> Result<f64, PolicyError> {
        match self {
            PolicyRef::Logging => LoggingPolicy.prob_of(record, k),
            p => p.probabilities(record)?.get(k).copied().ok_or_else(|| {
                PolicyError::Dimension(format!("candidate {k} out of range"))
            }),
        }
    }
}

impl PolicyRef {
    fn family(&self) -> Option<PolicyFamily> {
        match self {
            PolicyRef::Checkpoint(c) => Some(c.params.family),
            _ => None,
        }
    }
}

fn load_policy(spec: &str) -> Result<PolicyRef> {
    if let Some(id) = spec.strip_prefix("action:") {
        return Ok(PolicyRef::Constant(ConstantPolicy { id: id.to_string() }));
    }
    if spec == "logging" {
        return Ok(PolicyRef::Logging);
    }
    Ok(PolicyRef::Checkpoint(
        Checkpoint::load(spec).with_context(|| format!("loading checkpoint {spec}"))?,
    ))
}

fn save_checkpoint(dir: &Path, name: &str, params: &PolicyParams, seed: u64, greedy: bool) -> Result<()> {
    let path = dir.join(name);
    let mut w = BufWriter::new(File::create(&path).with_context(|| format!("creating {}", path.display()))?);
    write_checkpoint(&mut w, params, seed, greedy)?;
    w.flush()?;
    Ok(())
}

fn train_config(a: &TrainArgs, seed: u64) -> Result<TrainConfig> {
    Ok(TrainConfig {
        learning_rate: a.lr,
        schedule: a.schedule.parse().map_err(|e: String| anyhow!(e))?,
        batch_size: a.batch_size,
        max_epochs: a.epochs,
        seed,
        l2: a.weight_decay,
        tolerance: a.tolerance,
        patience: a.patience,
        holdout_fraction: a.holdout,
    })
}

fn save_dataset(dir: &Path, name: &str, d: &LoggedDataset) -> Result<()> {
    let path = dir.join(name);
    d.save(&path).with_context(|| format!("writing {}", path.display()))
}

fn simulate(cmd: &SimulateCmd, seed: u64, out: &Path) -> Result<()> {
    match cmd {
        SimulateCmd::Simpson { mode, scale } => {
            let mode = match mode.as_str() {
                "expected" => EmitMode::Expected,
                "sampled" => EmitMode::Sampled,
                other => bail!("unknown mode `{other}` (expected or sampled)"),
            };
            let spec = SimpsonSpec {
                mode,
                seed,
                scale: *scale,
                ..Default::default()
            };
            let d = simulate_simpson(&spec)?;
            let mut w = BufWriter::new(File::create(out.join("simpson.jsonl"))?);
            write_aggregated(d.records(), &mut w)?;
            w.flush()?;
            let env = spec.environment()?;
            let mut rows = dataset_summary(&d);
            rows.push(("mutual_info", num(mutual_info_oracle(&env, &[0, 0])?)));
            write_summary(out, &rows)
        }
        SimulateCmd::Epsgreedy { epsilon, n } => {
            let d = simulate_epsilon_greedy(*epsilon, *n, seed)?;
            save_dataset(out, "epsgreedy.jsonl", &d)?;
            write_summary(out, &dataset_summary(&d))
        }
        SimulateCmd::Confounded {
            observed,
            hidden,
            actions,
            n,
            expected,
            enumerated,
        } => {
            let env = synth_confounded_env(*observed, *hidden, *actions, seed)?;
            let d = if *enumerated {
                env.enumerated_dataset()?
            } else {
                env.sample_dataset(*n, !expected, seed)?
            };
            save_dataset(out, "confounded.jsonl", &d)?;
            let mut w = csv_out(out, "environment.csv")?;
            w.write_record(["observed", "hidden", "action", "context_prob", "logging", "reward"])?;
            for c in 0..env.env.n_contexts() {
                for a in 0..env.n_actions() {
                    w.write_record([
                        env.observed(c).to_string(),
                        env.hidden(c).to_string(),
                        a.to_string(),
                        num(env.env.context_probs()[c]),
                        num(env.env.logging()[c][a]),
                        num(env.env.rewards()[c][a]),
                    ])?;
                }
            }
            w.flush()?;
            let mut rows = dataset_summary(&d);
            rows.push(("mutual_info", num(mutual_info_oracle(&env.env, &env.observed_split())?)));
            write_summary(out, &rows)
        }
        SimulateCmd::Pareto { n, alpha, xm } => {
            let d = simulate_pareto_weights(*n, *alpha, *xm, seed)?;
            save_dataset(out, "pareto.jsonl", &d)?;
            write_summary(out, &dataset_summary(&d))
        }
        SimulateCmd::Multiclass {
            n,
            dim,
            classes,
            noise,
        } => {
            if *classes < 2 || *dim == 0 || *n < *classes {
                bail!("need at least two classes, one dimension and one example per class");
            }
            let data = MulticlassData::synthetic(*n, *dim, *classes, *noise, seed);
            fs::write(out.join("multiclass.txt"), data.to_text())?;
            write_summary(
                out,
                &[("examples", n.to_string()), ("classes", classes.to_string()), ("dim", dim.to_string())],
            )
        }
        SimulateCmd::Sample { dist, n } => {
            let values = sample_values(dist, *n, seed)?;
            let mut text = String::with_capacity(values.len() * 20);
            for v in &values {
                text.push_str(&num(*v));
                text.push('\n');
            }
            fs::write(out.join("values.txt"), text)?;
            write_summary(out, &[("values", n.to_string()), ("dist", dist.clone())])
        }
    }
}

fn sample_values(dist: &str, n: usize, seed: u64) -> Result<Vec<f64>> {
    let mut rng = seed::derived_rng(seed, &[0x5a]);
    let values = match dist {
        "uniform" => (0..n).map(|_| rng.random::<f64>()).collect(),
        "normal" => (0..n).map(|_| StandardNormal.sample(&mut rng)).collect(),
        "cauchy" => {
            let c = Cauchy::new(0.0, 1.0)?;
            (0..n).map(|_| c.sample(&mut rng)).collect()
        }
        other => {
            let alpha: f64 = other
                .strip_prefix("pareto:")
                .and_then(|a| a.parse().ok())
                .ok_or_else(|| anyhow!("unknown distribution `{other}` (uniform, normal, cauchy, pareto:ALPHA)"))?;
            let p = Pareto::new(1.0, alpha)?;
            (0..n).map(|_| p.sample(&mut rng)).collect()
        }
    };
    Ok(values)
}

fn convert(a: &ConvertArgs, seed: u64, out: &Path) -> Result<()> {
    let data = MulticlassData::load(&a.input).with_context(|| format!("loading {}", a.input.display()))?;
    let defaults = ConversionSpec::default();
    let spec = ConversionSpec {
        train_fraction: a.train_fraction,
        skew: a.skew,
        temperature: a.temperature,
        repetitions: a.repetitions,
        seed,
        classifier: TrainConfig {
            learning_rate: a.classifier_lr,
            max_epochs: a.classifier_epochs,
            ..defaults.classifier
        },
    };
    let conv = convert_multiclass(&data, &spec)?;
    save_dataset(out, "train.jsonl", &conv.train)?;
    fs::write(out.join("test.txt"), conv.test.data.to_text())?;
    save_checkpoint(out, "logging.ckpt", &conv.logging, seed, false)?;
    let mut rows = dataset_summary(&conv.train);
    rows.push(("test_examples", conv.test.data.examples.len().to_string()));
    rows.push(("logging_test_accuracy", num(conv.test.fractional_accuracy(&conv.logging)?)));
    write_summary(out, &rows)
}

fn policy(a: &PolicyArgs, seed: u64, out: &Path) -> Result<()> {
    let mut d = load_path(&a.data, None, false, None)?;
    if a.reveal_hidden {
        d = d.reveal_hidden()?;
    }
    let fam = family(&a.family)?;
    let shapes = PolicyParams::shapes_for(fam, &d);
    let params = if a.theta.is_empty() {
        PolicyParams::zeros(fam, shapes)
    } else {
        PolicyParams::new(fam, shapes, a.theta.clone())?
    };
    save_checkpoint(out, &a.name, &params, seed, a.greedy)
}

fn parse_bound(s: &str) -> Result<WeightBound> {
    Ok(match s {
        "identity" => WeightBound::Identity,
        "log" => WeightBound::Log,
        "log-above-one" => WeightBound::LogAboveOne,
        other => {
            let tau = other
                .strip_prefix("clip:")
                .and_then(|t| t.parse().ok())
                .ok_or_else(|| anyhow!("unknown weight bound `{other}` (identity, clip:TAU, log, log-above-one)"))?;
            WeightBound::Clip(tau)
        }
    })
}

fn parse_objective(s: &str, model: impl FnOnce() -> Result<RewardModel>, bound: WeightBound) -> Result<ObjectiveKind> {
    let (name, arg) = match s.split_once(':') {
        Some((n, v)) => (n, Some(v.parse::<f64>().with_context(|| format!("parameter of `{s}`"))?)),
        None => (s, None),
    };
    let need = |what: &str| arg.ok_or_else(|| anyhow!("objective `{name}` needs a parameter, e.g. `{name}:{what}`"));
    Ok(match name {
        "ipwe" => ObjectiveKind::IpweRaw,
        "ipwe-clipped" => ObjectiveKind::IpweClipped(need("500")?),
        "pil-mu" => ObjectiveKind::PilMu,
        "pil-empty" => ObjectiveKind::PilEmpty,
        "ce" => ObjectiveKind::CeWeighted,
        "iml-full" => ObjectiveKind::ImlFull,
        "iml-part" => ObjectiveKind::ImlPart,
        "iml-miss" => ObjectiveKind::ImlMiss,
        "pil-iml" => ObjectiveKind::PilIml(arg.unwrap_or(DEFAULT_EPSILON)),
        "poem" => ObjectiveKind::Poem(need("0.5")?),
        "dr" => ObjectiveKind::DrObj(model()?),
        "pil-dr" => ObjectiveKind::PilDr {
            model: model()?,
            epsilon: arg.unwrap_or(DEFAULT_EPSILON),
            bound,
        },
        other => bail!("unknown objective `{other}`"),
    })
}

fn learn(a: &LearnArgs, seed: u64, out: &Path) -> Result<()> {
    let d = load_dataset(&a.data)?;
    let fam = family(&a.family)?;
    let reward_family = a.reward_family.as_deref().map(family).transpose()?.unwrap_or(fam);
    let mut kind = parse_objective(&a.objective, || Ok(fit_reward_model(&d, reward_family)?), parse_bound(&a.bound)?)?;
    if kind == ObjectiveKind::ImlFull && d.scenario() == LoggingScenario::Partial {
        eprintln!("warning: iml-full needs all candidate propensities; falling back to iml-part");
        kind = ObjectiveKind::ImlPart;
    }
    let spec = ObjectiveSpec::new(kind).with_l2(a.l2);
    let cfg = train_config(&a.train, seed)?;
    let (params, trace) = match &a.init {
        Some(path) => {
            let init = Checkpoint::load(path).with_context(|| format!("loading {}", path.display()))?;
            train_from(&spec, &d, init.params, &cfg)?
        }
        None => train(&spec, &d, fam, &cfg)?,
    };
    save_checkpoint(out, "policy.ckpt", &params, seed, a.greedy)?;
    trace.write_csv(File::create(out.join("trace.csv"))?)?;
    Ok(())
}

fn fit_reward(a: &FitRewardArgs, out: &Path) -> Result<()> {
    let d = load_dataset(&a.data)?;
    let model = fit_reward_model(&d, family(&a.family)?)?;
    let RewardModel::Fitted(params) = &model else {
        unreachable!("fitting returns a parameter vector")
    };
    save_checkpoint(out, "reward.ckpt", params, 0, false)?;
    save_checkpoint(out, "greedy.ckpt", params, 0, true)?;
    let mut w = csv_out(out, "predictions.csv")?;
    w.write_record(["context", "action", "prediction", "greedy"])?;
    let mut seen = std::collections::BTreeSet::new();
    for r in d.records() {
        let key = serde_json::to_string(&r.context)?;
        if !seen.insert(key.clone()) {
            continue;
        }
        let pred = model.predict(r)?;
        let greedy = QGreedy(&model).probabilities(r)?;
        for (k, c) in r.candidates.iter().enumerate() {
            w.write_record([key.clone(), c.id.clone(), num(pred[k]), num(greedy[k])])?;
        }
    }
    w.flush()?;
    Ok(())
}

fn evaluate(a: &EvaluateArgs, out: &Path) -> Result<()> {
    let d = load_dataset(&a.data)?;
    let pol = load_policy(&a.policy)?;
    let model = |reward_family: &Option<String>| -> Result<RewardModel> {
        let fam = match reward_family {
            Some(f) => family(f)?,
            None => pol
                .family()
                .ok_or_else(|| anyhow!("--reward-family is required for non-checkpoint policies"))?,
        };
        Ok(fit_reward_model(&d, fam)?)
    };
    let mut w = csv_out(out, "estimates.csv")?;
    w.write_record(["estimator", "point", "gap", "variance", "ci_lo", "ci_hi", "n", "tau"])?;
    for name in &a.estimator {
        let (rep, ci): (EstimateReport, Option<(f64, f64)>) = match name.as_str() {
            "ipwe" => (ipwe(&d, &pol)?, None),
            "delta-ipwe" => (delta_ipwe(&d, &pol)?, None),
            "clipped-ipwe" => (clipped_ipwe(&d, &pol, a.tau)?, None),
            "clipped-delta-ipwe" => (clipped_delta_ipwe(&d, &pol, a.tau)?, None),
            "dr" => (dr(&d, &pol, &model(&a.reward_family)?)?, None),
            "pil-dr" => (clipped_pil_dr(&d, &pol, &model(&a.reward_family)?, parse_bound(&a.bound)?)?, None),
            "combined" => {
                let mut rep = clipped_ipwe(&d, &pol, a.tau)?;
                let ci = combined_offline_estimate(&rep, a.r_max)?;
                rep.estimator = "combined".into();
                (rep, Some(ci))
            }
            other => bail!("unknown estimator `{other}`"),
        };
        let (lo, hi) = match ci.or(rep.ci) {
            Some((lo, hi)) => (num(lo), num(hi)),
            None => (String::new(), String::new()),
        };
        w.write_record([
            rep.estimator.clone(),
            num(rep.point),
            num(rep.gap),
            num(rep.variance),
            lo,
            hi,
            rep.n.to_string(),
            opt(rep.clip_tau),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn diagnose_cmd(a: &DiagnoseArgs, seed: u64, out: &Path) -> Result<()> {
    let d = load_dataset(&a.data)?;
    let report = diagnose(&d, family(&a.family)?, &train_config(&a.train, seed)?, a.threshold)?;
    fs::write(
        out.join("diagnosis.csv"),
        format!("{}\n{}\n", offpolicy::diagnosis::DiagnosisReport::CSV_HEADER, report.csv_row()),
    )?;
    save_checkpoint(out, "iml.ckpt", &report.policy, seed, false)?;
    report.trace.write_csv(File::create(out.join("trace.csv"))?)?;
    Ok(())
}

fn resample(a: &ResampleArgs, seed: u64, out: &Path) -> Result<()> {
    let d = load_dataset(&a.data)?;
    let iml = match &a.iml {
        Some(path) => Checkpoint::load(path).with_context(|| format!("loading {}", path.display()))?.params,
        None => {
            let report = diagnose(
                &d,
                family(&a.family)?,
                &train_config(&a.train, seed)?,
                offpolicy::diagnosis::DEFAULT_THRESHOLD,
            )?;
            save_checkpoint(out, "iml.ckpt", &report.policy, seed, false)?;
            report.policy
        }
    };
    let rw = resample_weights(&d, &iml)?;
    save_dataset(out, "resampled.jsonl", &reweight(&d, &iml)?)?;
    let mut w = csv_out(out, "weights.csv")?;
    w.write_record(["record", "weight"])?;
    for (i, x) in rw.weights.iter().enumerate() {
        w.write_record([i.to_string(), num(*x)])?;
    }
    w.flush()?;
    let mut w = csv_out(out, "contexts.csv")?;
    w.write_record(["context", "mean_weight"])?;
    for (k, v) in &rw.per_context {
        w.write_record([k.clone(), num(*v)])?;
    }
    w.flush()?;
    write_summary(
        out,
        &[
            ("records", d.len().to_string()),
            ("total_weight", num(d.total_weight())),
            ("weighted_sum", num(rw.ess)),
        ],
    )
}

fn read_values(path: &Path) -> Result<Vec<f64>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty() && !l.trim_start().starts_with('#'))
        .map(|(i, l)| {
            let field = l.split(',').next().unwrap_or("").trim();
            field
                .parse::<f64>()
                .with_context(|| format!("{} line {}: not a number: `{field}`", path.display(), i + 1))
        })
        .collect()
}

fn flag_names(r: &BootstrapResult) -> String {
    r.flags
        .iter()
        .map(|f| match f {
            BootstrapFlag::Degenerate => "degenerate",
            BootstrapFlag::NonConvergent => "non-convergent",
        })
        .collect::<Vec<_>>()
        .join(";")
}

fn bootstrap(a: &BootstrapArgs, seed: u64, out: &Path) -> Result<()> {
    let [q_lo, q_hi] = a.quantiles[..] else {
        bail!("--quantiles takes two values");
    };
    let cfg = BootstrapConfig {
        sizes: (!a.sizes.is_empty()).then(|| a.sizes.clone()),
        replicates: a.replicates,
        quantiles: (q_lo, q_hi),
        seed,
        with_replacement: !a.without_replacement,
    };
    let results: Vec<(String, BootstrapResult)> = match (&a.values, &a.data, &a.policy) {
        (Some(path), None, None) => {
            let values = read_values(path)?;
            let stat: fn(&[f64]) -> f64 = match a.statistic.as_str() {
                "mean" => mean,
                "median" => median,
                "max" => max,
                other => bail!("unknown statistic `{other}` (mean, median, max)"),
            };
            vec![(String::new(), subsample_ci(stat, &values, &cfg)?)]
        }
        (None, Some(data), Some(pol)) => {
            let d = load_path(data, None, false, None)?;
            let pol = load_policy(pol)?;
            clipping_rate_study(&d, &pol, &a.tau, &cfg)?
                .into_iter()
                .map(|row| (num(row.tau), row.result))
                .collect()
        }
        _ => bail!("give either --values or both --data and --policy"),
    };
    let mut w = csv_out(out, "bootstrap.csv")?;
    w.write_record(["tau", "side", "b", "q", "deviation"])?;
    for (tau, r) in &results {
        for (side, q, fit) in [("lower", r.quantiles.0, &r.lower), ("upper", r.quantiles.1, &r.upper)] {
            for (b, dev) in r.sizes.iter().zip(&fit.deviations) {
                w.write_record([tau.clone(), side.into(), b.to_string(), num(q), num(*dev)])?;
            }
        }
    }
    w.flush()?;
    let mut w = csv_out(out, "bootstrap_fit.csv")?;
    w.write_record([
        "tau", "n", "t_n", "beta", "beta_lo", "beta_hi", "r2_lo", "r2_hi", "ci_lo", "ci_hi", "flags",
    ])?;
    for (tau, r) in &results {
        w.write_record([
            tau.clone(),
            r.n.to_string(),
            num(r.t_n),
            opt(r.beta),
            opt(r.lower.beta),
            opt(r.upper.beta),
            opt(r.lower.r2),
            opt(r.upper.r2),
            num(r.ci.0),
            num(r.ci.1),
            flag_names(r),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn tailplot(a: &TailplotArgs, out: &Path) -> Result<()> {
    let weights = match (&a.values, &a.data, &a.policy) {
        (Some(path), None, None) => read_values(path)?,
        (None, Some(data), Some(pol)) => {
            let d = load_path(data, None, false, None)?;
            WeightVector::compute(&d, &load_policy(pol)?)?.w
        }
        _ => bail!("give either --values or both --data and --policy"),
    };
    let plot = tail_exponent_plot(&weights)?;
    let mut w = csv_out(out, "tailplot.csv")?;
    w.write_record(["weight", "survival"])?;
    for (x, s) in &plot.table {
        w.write_record([num(*x), num(*s)])?;
    }
    w.flush()?;
    write_summary(out, &[("n", weights.len().to_string()), ("slope", opt(plot.slope))])
}

fn compare(a: &CompareArgs, seed: u64, out: &Path) -> Result<()> {
    let d = load_dataset(&a.data)?;
    let pi = load_policy(&a.policy)?;
    let base = load_policy(&a.baseline)?;
    let res = paired_delta(&d, &pi, &base, a.tau, a.r_max, a.replicates, seed)?;
    let mut w = csv_out(out, "paired_delta.csv")?;
    w.write_record(["term1", "term2", "term1_ci_lo", "term1_ci_hi", "lo", "hi", "tau", "r_max"])?;
    w.write_record([
        num(res.term1),
        num(res.term2),
        num(res.term1_ci.0),
        num(res.term1_ci.1),
        num(res.interval.0),
        num(res.interval.1),
        num(a.tau),
        num(a.r_max),
    ])?;
    w.flush()?;
    Ok(())
}
