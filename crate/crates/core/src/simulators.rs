//! Logged-data generators with known ground truth.
//!
//! - [`simulate_simpson`]: the kidney-stone treatment log, whose stone size
//!   drives both the treatment choice and the cure rate but is hidden from
//!   the learner.
//! - [`simulate_epsilon_greedy`]: a two-action log where the rare action is
//!   taken with probability `ε`.
//! - [`convert_multiclass`]: supervised-to-bandit conversion with a skewed
//!   softmax logging classifier.
//! - [`simulate_pareto_weights`]: a log with Pareto-tailed importance
//!   weights.
//! - [`synth_confounded_env`]: random tabular environments with an observed
//!   and a hidden context variable.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal, Pareto};

use crate::data::{
    random_simplex, sample_index, LoggedDataset, LoggedRecord, LoggingScenario, SparseVector, TabularEnvironment,
};
use crate::objectives::{ObjectiveKind, ObjectiveSpec};
use crate::policy::{PolicyFamily, PolicyParams};
use crate::trainer::{train, Schedule, TrainConfig};
use crate::{seed, Error, Result};

/// Candidate ids of the kidney-stone log.
pub const TREATMENTS: [&str; 2] = ["surgery", "puncture"];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EmitMode {
    /// One record per patient with the cell's cure rate as a fractional
    /// reward.
    Expected,
    /// One record per patient with a Bernoulli reward.
    Sampled,
}

/// Patients and cures of one (stone size, treatment) cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Cell {
    pub count: u64,
    pub cured: u64,
}

impl Cell {
    pub fn rate(&self) -> f64 {
        self.cured as f64 / self.count as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimpsonSpec {
    /// `cells[size][treatment]`, size 0 = small, treatment 0 = surgery.
    pub cells: [[Cell; 2]; 2],
    pub mode: EmitMode,
    pub seed: u64,
    /// Every count is multiplied by `scale`.
    pub scale: u64,
}

impl Default for SimpsonSpec {
    fn default() -> Self {
        let c = |count, cured| Cell { count, cured };
        SimpsonSpec {
            cells: [[c(87, 81), c(270, 234)], [c(263, 192), c(80, 55)]],
            mode: EmitMode::Expected,
            seed: 0,
            scale: 1,
        }
    }
}

impl SimpsonSpec {
    fn validate(&self) -> Result<()> {
        if self.scale == 0 {
            return Err(Error::arg("scale must be >= 1"));
        }
        for row in &self.cells {
            if row.iter().any(|c| c.count == 0 || c.cured > c.count) {
                return Err(Error::arg("cell counts must be positive with cured <= count"));
            }
        }
        Ok(())
    }

    /// `μ(treatment | size)`.
    pub fn logging(&self) -> [[f64; 2]; 2] {
        self.cells.map(|row| {
            let n = (row[0].count + row[1].count) as f64;
            [row[0].count as f64 / n, row[1].count as f64 / n]
        })
    }

    /// Tabular environment with stone size as the context.
    pub fn environment(&self) -> Result<TabularEnvironment> {
        self.validate()?;
        let sizes: Vec<f64> = self.cells.iter().map(|r| (r[0].count + r[1].count) as f64).collect();
        let total: f64 = sizes.iter().sum();
        Ok(TabularEnvironment::new(
            sizes.iter().map(|s| s / total).collect(),
            self.logging().iter().map(|r| r.to_vec()).collect(),
            self.cells.iter().map(|r| vec![r[0].rate(), r[1].rate()]).collect(),
            1.0,
        )?)
    }
}

/// The kidney-stone log: empty contexts, the stone size in the hidden
/// column `h` (0 small, 1 large) and full logging probabilities.
pub fn simulate_simpson(spec: &SimpsonSpec) -> Result<LoggedDataset> {
    spec.validate()?;
    let mu = spec.logging();
    let mut rng = seed::derived_rng(spec.seed, &[0x5195]);
    let mut records = Vec::new();
    for (size, row) in spec.cells.iter().enumerate() {
        for (t, cell) in row.iter().enumerate() {
            let base = LoggedRecord::with_ids(SparseVector::default(), &TREATMENTS, t, cell.rate())
                .with_full_propensities(mu[size].to_vec())
                .with_hidden(size);
            for _ in 0..cell.count * spec.scale {
                let mut r = base.clone();
                if spec.mode == EmitMode::Sampled {
                    r.reward = f64::from(u8::from(rng.random::<f64>() < cell.rate()));
                }
                records.push(r);
            }
        }
    }
    Ok(LoggedDataset::new(records, LoggingScenario::Full)?)
}

/// Two-action contextless log with `μ(A) = ε` and reward `1{a = A}`.
pub fn simulate_epsilon_greedy(epsilon: f64, n: usize, seed: u64) -> Result<LoggedDataset> {
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(Error::arg(format!("epsilon must lie in (0, 1), got {epsilon}")));
    }
    if n == 0 {
        return Err(Error::arg("n must be >= 1"));
    }
    let mut rng = seed::derived_rng(seed, &[0xe9]);
    let records = (0..n)
        .map(|_| {
            let a = usize::from(rng.random::<f64>() >= epsilon);
            LoggedRecord::with_ids(SparseVector::default(), &["A", "B"], a, if a == 0 { 1.0 } else { 0.0 })
                .with_full_propensities(vec![epsilon, 1.0 - epsilon])
        })
        .collect();
    Ok(LoggedDataset::new(records, LoggingScenario::Full)?)
}

/// Two-action log whose importance weights for the always-`A` policy are
/// Pareto(`alpha`) with scale `xm`: every record took `A` with propensity
/// `1/w_i` and has a Bernoulli(0.5) reward.
pub fn simulate_pareto_weights(n: usize, alpha: f64, xm: f64, seed: u64) -> Result<LoggedDataset> {
    if n == 0 {
        return Err(Error::arg("n must be >= 1"));
    }
    if !(xm >= 1.0) {
        return Err(Error::arg(format!("Pareto scale must be >= 1 so that propensities are <= 1, got {xm}")));
    }
    let dist = Pareto::new(xm, alpha).map_err(|e| Error::arg(format!("invalid Pareto parameters: {e}")))?;
    let mut rng = seed::derived_rng(seed, &[0x9a2e]);
    let records = (0..n)
        .map(|_| {
            let p = 1.0 / dist.sample(&mut rng);
            let r = f64::from(u8::from(rng.random::<f64>() < 0.5));
            LoggedRecord::with_ids(SparseVector::default(), &["A", "B"], 0, r).with_full_propensities(vec![p, 1.0 - p])
        })
        .collect();
    Ok(LoggedDataset::new(records, LoggingScenario::Full)?)
}

/// Tabular environment over joint contexts `c = x1 · n_hidden + x2`, where
/// only `x1` is observed by learners.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfoundedEnv {
    pub n_observed: usize,
    pub n_hidden: usize,
    pub env: TabularEnvironment,
}

impl ConfoundedEnv {
    pub fn new(n_observed: usize, n_hidden: usize, env: TabularEnvironment) -> Result<Self> {
        if n_observed * n_hidden != env.n_contexts() {
            return Err(Error::arg(format!(
                "{n_observed} x {n_hidden} contexts do not match an environment with {}",
                env.n_contexts()
            )));
        }
        Ok(ConfoundedEnv { n_observed, n_hidden, env })
    }

    /// The kidney-stone environment: no observed context, stone size hidden.
    pub fn kidney_stone() -> Self {
        let env = SimpsonSpec::default().environment().expect("default spec is valid");
        ConfoundedEnv::new(1, 2, env).expect("2 contexts")
    }

    pub fn n_actions(&self) -> usize {
        self.env.n_actions()
    }

    pub fn observed(&self, c: usize) -> usize {
        c / self.n_hidden
    }

    pub fn hidden(&self, c: usize) -> usize {
        c % self.n_hidden
    }

    /// Observed level of every joint context.
    pub fn observed_split(&self) -> Vec<usize> {
        (0..self.env.n_contexts()).map(|c| self.observed(c)).collect()
    }

    /// The observed context as a feature vector (empty when there is a
    /// single observed level).
    pub fn observed_features(&self, x1: usize) -> SparseVector {
        if self.n_observed == 1 {
            SparseVector::default()
        } else {
            SparseVector::one_hot(x1)
        }
    }

    /// `p(x1)`.
    pub fn observed_probs(&self) -> Vec<f64> {
        let mut p = vec![0.0; self.n_observed];
        for (c, pc) in self.env.context_probs().iter().enumerate() {
            p[self.observed(c)] += pc;
        }
        p
    }

    /// `E[μ(a|x) | x1]`, the best imitation within observed-context
    /// policies, indexed by `x1`.
    pub fn marginal_logging(&self) -> Vec<Vec<f64>> {
        let px1 = self.observed_probs();
        let mut m = vec![vec![0.0; self.n_actions()]; self.n_observed];
        for (c, pc) in self.env.context_probs().iter().enumerate() {
            let x1 = self.observed(c);
            if px1[x1] > 0.0 {
                for (a, mu) in self.env.logging()[c].iter().enumerate() {
                    m[x1][a] += pc / px1[x1] * mu;
                }
            }
        }
        m
    }

    /// Expands an observed-context policy table to the joint contexts.
    pub fn lift(&self, observed_policy: &[Vec<f64>]) -> Vec<Vec<f64>> {
        (0..self.env.n_contexts())
            .map(|c| observed_policy[self.observed(c)].clone())
            .collect()
    }

    fn ids(&self) -> Vec<String> {
        (0..self.n_actions()).map(|a| a.to_string()).collect()
    }

    /// Samples `n` records exposing only `x1` (hidden `x2` in `h`).
    pub fn sample_dataset(&self, n: usize, bernoulli: bool, seed: u64) -> Result<LoggedDataset> {
        let mut rng = seed::derived_rng(seed, &[0xc0f]);
        let ids = self.ids();
        let records = (0..n)
            .map(|_| {
                let c = sample_index(self.env.context_probs(), &mut rng);
                let a = sample_index(&self.env.logging()[c], &mut rng);
                let mean = self.env.rewards()[c][a];
                let r = if bernoulli {
                    f64::from(u8::from(rng.random::<f64>() < mean / self.env.reward_max())) * self.env.reward_max()
                } else {
                    mean
                };
                LoggedRecord::with_ids(self.observed_features(self.observed(c)), &ids, a, r)
                    .with_full_propensities(self.env.logging()[c].clone())
                    .with_hidden(self.hidden(c))
            })
            .collect();
        self.observed_dataset(records)
    }

    /// Every joint outcome as one record weighted by its probability,
    /// exposing only `x1`.
    pub fn enumerated_dataset(&self) -> Result<LoggedDataset> {
        let ids = self.ids();
        let mut records = Vec::new();
        for (c, pc) in self.env.context_probs().iter().enumerate() {
            for (a, mu) in self.env.logging()[c].iter().enumerate() {
                if *pc > 0.0 && *mu > 0.0 {
                    records.push(
                        LoggedRecord::with_ids(
                            self.observed_features(self.observed(c)),
                            &ids,
                            a,
                            self.env.rewards()[c][a],
                        )
                        .with_full_propensities(self.env.logging()[c].clone())
                        .with_hidden(self.hidden(c))
                        .with_sample_weight(pc * mu),
                    );
                }
            }
        }
        self.observed_dataset(records)
    }

    fn observed_dataset(&self, records: Vec<LoggedRecord>) -> Result<LoggedDataset> {
        let d = LoggedDataset::new(records, LoggingScenario::Full)?;
        let dim = if self.n_observed == 1 { 0 } else { self.n_observed };
        Ok(d.with_context_dim(dim)?)
    }
}

/// Random confounded environment: uniform context distribution, logging
/// softmax with standard-normal logits scaled by 2 (mixed with 5% uniform),
/// rewards uniform on `[0, 1]`.
pub fn synth_confounded_env(n_observed: usize, n_hidden: usize, n_actions: usize, seed: u64) -> Result<ConfoundedEnv> {
    if n_observed == 0 || n_hidden == 0 || n_actions == 0 {
        return Err(Error::arg("environment sizes must be >= 1"));
    }
    let mut rng = seed::derived_rng(seed, &[0xc0]);
    let normal = Normal::new(0.0, 2.0).expect("valid normal");
    let nc = n_observed * n_hidden;
    let context_probs = vec![1.0 / nc as f64; nc];
    let mut logging = Vec::with_capacity(nc);
    for _ in 0..nc {
        let logits: Vec<f64> = (0..n_actions).map(|_| normal.sample(&mut rng)).collect();
        let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
        let s: f64 = e.iter().sum();
        let mut row: Vec<f64> = e.iter().map(|v| 0.95 * v / s + 0.05 / n_actions as f64).collect();
        let t: f64 = row.iter().sum();
        row.iter_mut().for_each(|p| *p /= t);
        logging.push(row);
    }
    let rewards = (0..nc)
        .map(|_| (0..n_actions).map(|_| rng.random::<f64>()).collect())
        .collect();
    let env = TabularEnvironment::new(context_probs, logging, rewards, 1.0)?;
    ConfoundedEnv::new(n_observed, n_hidden, env)
}

/// Labeled multiclass examples with sparse features.
#[derive(Debug, Clone, PartialEq)]
pub struct MulticlassData {
    pub examples: Vec<(SparseVector, usize)>,
    pub n_classes: usize,
    pub dim: usize,
    /// Original label of each class index.
    pub labels: Vec<String>,
}

impl MulticlassData {
    /// Parses lines of `label idx:val idx:val ...`. Labels are mapped to
    /// class indices in sorted order (numerically when all are integers).
    pub fn parse(text: &str) -> Result<Self> {
        let mut raw = Vec::new();
        for (ln, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let mut parts = line.split_whitespace();
            let label = parts.next().expect("nonempty line").to_string();
            let mut feats = Vec::new();
            for tok in parts {
                let (i, v) = tok
                    .split_once(':')
                    .ok_or_else(|| Error::Invalid(format!("line {}: expected idx:val, got `{tok}`", ln + 1)))?;
                let i: usize = i
                    .parse()
                    .map_err(|_| Error::Invalid(format!("line {}: bad feature index `{i}`", ln + 1)))?;
                let v: f64 = v
                    .parse()
                    .map_err(|_| Error::Invalid(format!("line {}: bad feature value `{v}`", ln + 1)))?;
                feats.push((i, v));
            }
            raw.push((SparseVector::new(feats), label));
        }
        if raw.is_empty() {
            return Err(Error::Invalid("empty multiclass file".into()));
        }
        let mut labels: Vec<String> = raw.iter().map(|(_, l)| l.clone()).collect();
        labels.sort();
        labels.dedup();
        if labels.iter().all(|l| l.parse::<i64>().is_ok()) {
            labels.sort_by_key(|l| l.parse::<i64>().expect("checked"));
        }
        if labels.len() < 2 {
            return Err(Error::Invalid("need at least 2 classes".into()));
        }
        let dim = raw.iter().map(|(x, _)| x.dim_hint()).max().unwrap_or(0);
        let examples = raw
            .into_iter()
            .map(|(x, l)| (x, labels.iter().position(|k| *k == l).expect("label present")))
            .collect();
        Ok(MulticlassData {
            examples,
            n_classes: labels.len(),
            dim,
            labels,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&fs::read_to_string(path)?)
    }

    /// Gaussian class clusters: class `k` has a random unit-scale mean in
    /// `dim` dimensions; features are mean plus `noise`-scaled Gaussian
    /// noise.
    pub fn synthetic(n: usize, dim: usize, n_classes: usize, noise: f64, seed: u64) -> Self {
        let mut rng = seed::derived_rng(seed, &[0x3c]);
        let normal = Normal::new(0.0, 1.0).expect("valid normal");
        let means: Vec<Vec<f64>> = (0..n_classes)
            .map(|_| (0..dim).map(|_| normal.sample(&mut rng)).collect())
            .collect();
        let examples = (0..n)
            .map(|i| {
                let k = i % n_classes;
                let x = means[k]
                    .iter()
                    .enumerate()
                    .map(|(j, m)| (j, m + noise * normal.sample(&mut rng)))
                    .collect();
                (SparseVector::new(x), k)
            })
            .collect();
        MulticlassData {
            examples,
            n_classes,
            dim,
            labels: (0..n_classes).map(|k| k.to_string()).collect(),
        }
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (x, k) in &self.examples {
            out.push_str(&self.labels[*k]);
            for (i, v) in x.iter() {
                out.push_str(&format!(" {i}:{v}"));
            }
            out.push('\n');
        }
        out
    }

    fn ids(&self) -> Vec<String> {
        self.labels.clone()
    }

    /// Supervised dataset (the true label as the action, reward 1), for
    /// fitting classifiers with the cross-entropy objective.
    pub fn supervised_dataset(&self, indices: &[usize]) -> Result<LoggedDataset> {
        let ids = self.ids();
        let records = indices
            .iter()
            .map(|&i| {
                let (x, k) = &self.examples[i];
                LoggedRecord::with_ids(x.clone(), &ids, *k, 1.0)
            })
            .collect();
        Ok(LoggedDataset::new(records, LoggingScenario::Missing)?.with_context_dim(self.dim)?)
    }
}

/// Held-out labeled examples for exact policy accuracy.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSet {
    pub data: MulticlassData,
}

impl LabeledSet {
    /// Mean probability the policy puts on the true label.
    pub fn fractional_accuracy(&self, policy: &impl crate::policy::Policy) -> Result<f64> {
        let ids = self.data.ids();
        let mut total = 0.0;
        for (x, k) in &self.data.examples {
            let r = LoggedRecord::with_ids(x.clone(), &ids, *k, 1.0);
            total += policy.prob_of(&r, *k)?;
        }
        Ok(total / self.data.examples.len() as f64)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConversionSpec {
    pub train_fraction: f64,
    /// Fraction of examples dropped from the first `⌈K/2⌉` classes when
    /// training the logging classifier.
    pub skew: f64,
    pub temperature: f64,
    /// Bandit records emitted per training example.
    pub repetitions: usize,
    pub seed: u64,
    /// Training schedule for the logging classifier.
    pub classifier: TrainConfig,
}

impl Default for ConversionSpec {
    fn default() -> Self {
        ConversionSpec {
            train_fraction: 0.5,
            skew: 0.9,
            temperature: 1.0,
            repetitions: 1,
            seed: 0,
            classifier: TrainConfig {
                learning_rate: 0.5,
                schedule: Schedule::InverseSqrt,
                max_epochs: 100,
                ..TrainConfig::default()
            },
        }
    }
}

/// Output of [`convert_multiclass`].
#[derive(Debug, Clone)]
pub struct Conversion {
    pub train: LoggedDataset,
    pub test: LabeledSet,
    /// Logging classifier (before the temperature is applied).
    pub logging: PolicyParams,
}

/// Converts labeled data to a fully logged bandit dataset.
pub fn convert_multiclass(data: &MulticlassData, spec: &ConversionSpec) -> Result<Conversion> {
    if !(spec.train_fraction > 0.0 && spec.train_fraction < 1.0) {
        return Err(Error::arg(format!("train fraction must lie in (0, 1), got {}", spec.train_fraction)));
    }
    if !(spec.temperature > 0.0) {
        return Err(Error::arg(format!("temperature must be > 0, got {}", spec.temperature)));
    }
    if !(0.0..=1.0).contains(&spec.skew) {
        return Err(Error::arg(format!("skew must lie in [0, 1], got {}", spec.skew)));
    }
    if spec.repetitions == 0 {
        return Err(Error::arg("repetitions must be >= 1"));
    }
    let k = data.n_classes;
    let mut idx: Vec<usize> = (0..data.examples.len()).collect();
    idx.shuffle(&mut seed::derived_rng(spec.seed, &[0x5b1]));
    let n_train = ((idx.len() as f64) * spec.train_fraction).round() as usize;
    let (train_idx, test_idx) = idx.split_at(n_train.clamp(1, idx.len() - 1));

    // skewed subsample for the logging classifier
    let skewed_classes = k.div_ceil(2);
    let mut rng = seed::derived_rng(spec.seed, &[0x5c3]);
    let skewed: Vec<usize> = train_idx
        .iter()
        .copied()
        .filter(|&i| data.examples[i].1 >= skewed_classes || rng.random::<f64>() >= spec.skew)
        .collect();
    for c in 0..k {
        if !skewed.iter().any(|&i| data.examples[i].1 == c) {
            return Err(Error::Invalid(format!("class `{}` has no examples after skewing", data.labels[c])));
        }
    }
    let sup = data.supervised_dataset(&skewed)?;
    let cfg = TrainConfig {
        seed: seed::derive(spec.seed, &[0x10c]),
        ..spec.classifier.clone()
    };
    let (logging, _) = train(&ObjectiveSpec::new(ObjectiveKind::CeWeighted), &sup, PolicyFamily::BilinearFull, &cfg)?;
    let tempered = PolicyParams {
        theta: logging.theta.iter().map(|t| t / spec.temperature).collect(),
        ..logging.clone()
    };

    let ids = data.ids();
    let mut records = Vec::with_capacity(train_idx.len() * spec.repetitions);
    let mut rng = seed::derived_rng(spec.seed, &[0xac7]);
    for _ in 0..spec.repetitions {
        for &i in train_idx {
            let (x, label) = &data.examples[i];
            let base = LoggedRecord::with_ids(x.clone(), &ids, 0, 0.0);
            let probs = tempered.score(&base)?.probs();
            let a = sample_index(&probs, &mut rng);
            records.push(
                LoggedRecord::with_ids(x.clone(), &ids, a, if a == *label { 1.0 } else { 0.0 })
                    .with_full_propensities(renormalized(probs)),
            );
        }
    }
    let train_set = LoggedDataset::new(records, LoggingScenario::Full)?.with_context_dim(data.dim)?;
    let test = LabeledSet {
        data: MulticlassData {
            examples: test_idx.iter().map(|&i| data.examples[i].clone()).collect(),
            ..data.clone()
        },
    };
    Ok(Conversion {
        train: train_set,
        test,
        logging,
    })
}

/// Softmax outputs can miss 1 by a few ulps; the dataset format checks the
/// sum to 1e-9, so this is only a guard.
fn renormalized(mut p: Vec<f64>) -> Vec<f64> {
    let s: f64 = p.iter().sum();
    p.iter_mut().for_each(|v| *v /= s);
    p
}

/// Random tabular environment, re-exported for generator symmetry.
pub fn random_environment(n_contexts: usize, n_actions: usize, seed: u64) -> TabularEnvironment {
    TabularEnvironment::random(n_contexts, n_actions, 1.0, &mut seed::derived_rng(seed, &[0xe1]))
}

/// Random probability table with `rows` rows over `cols` actions.
pub fn random_policy_table(rows: usize, cols: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = seed::derived_rng(seed, &[0x7ab]);
    (0..rows).map(|_| random_simplex(cols, 0.0, &mut rng)).collect()
}
