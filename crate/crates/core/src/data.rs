//! Logged bandit data.
//!
//! A [`LoggedDataset`] is an immutable list of [`LoggedRecord`]s plus the
//! declared [`LoggingScenario`]. Datasets are stored as line-delimited JSON,
//! one record per line:
//!
//! ```text
//! {"x": [[0, 1.0]], "cands": [{"id": "a"}, {"id": "b", "f": [[3, 0.5]]}], "a": 1, "p": 0.25, "r": 1.0}
//! ```
//!
//! Optional keys: `p_all` (probabilities of every candidate), `count`
//! (aggregated rows, expanded on load), `h` (hidden variable kept for
//! oracles only) and `sw` (sample weight, written by imitation resampling).
//!
//! [`TabularEnvironment`] is the finite brute-force oracle used throughout
//! the tests: expectations under the logging policy and policy values are
//! computed by exact enumeration.

use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Smallest propensity accepted at load time.
pub const MIN_PROPENSITY: f64 = 1e-12;

const SUM_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("empty dataset")]
    Empty,

    #[error("line {line}: parse error: {msg}")]
    Parse { line: usize, msg: String },

    #[error("record {record}: field `{field}`: {msg}")]
    Invariant {
        record: usize,
        field: &'static str,
        msg: String,
    },

    #[error("record {record}: {scenario} logging requires `{field}`")]
    ScenarioMismatch {
        record: usize,
        scenario: LoggingScenario,
        field: &'static str,
    },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// How much of the logging policy was recorded.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LoggingScenario {
    /// Probabilities of every candidate are logged.
    Full,
    /// Only the probability of the taken action is logged.
    Partial,
    /// No probabilities are available.
    Missing,
}

impl LoggingScenario {
    pub fn has_propensities(self) -> bool {
        !matches!(self, LoggingScenario::Missing)
    }
}

impl fmt::Display for LoggingScenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LoggingScenario::Full => "FULL",
            LoggingScenario::Partial => "PARTIAL",
            LoggingScenario::Missing => "MISSING",
        })
    }
}

impl FromStr for LoggingScenario {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "full" => Ok(LoggingScenario::Full),
            "partial" => Ok(LoggingScenario::Partial),
            "missing" => Ok(LoggingScenario::Missing),
            other => Err(format!("unknown logging scenario `{other}`")),
        }
    }
}

/// Sparse real vector stored as `(index, value)` pairs.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SparseVector(pub Vec<(usize, f64)>);

impl SparseVector {
    pub fn new(entries: Vec<(usize, f64)>) -> Self {
        SparseVector(entries)
    }

    pub fn one_hot(index: usize) -> Self {
        SparseVector(vec![(index, 1.0)])
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.0.iter().copied()
    }

    /// One past the largest index, 0 when empty.
    pub fn dim_hint(&self) -> usize {
        self.0.iter().map(|&(i, _)| i + 1).max().unwrap_or(0)
    }

    pub fn to_dense(&self, dim: usize) -> Vec<f64> {
        let mut out = vec![0.0; dim];
        for (i, v) in self.iter() {
            out[i] += v;
        }
        out
    }
}

/// An action available in a record's context.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub id: String,
    /// Action features; when absent the candidate is the indicator vector of
    /// its position in the candidate list.
    #[serde(rename = "f", default, skip_serializing_if = "Option::is_none")]
    pub features: Option<SparseVector>,
}

impl Candidate {
    pub fn new(id: impl Into<String>) -> Self {
        Candidate {
            id: id.into(),
            features: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoggedRecord {
    pub context: SparseVector,
    pub candidates: Vec<Candidate>,
    pub action: usize,
    pub propensity: Option<f64>,
    pub full_propensities: Option<Vec<f64>>,
    pub reward: f64,
    /// Hidden (confounding) variable, visible to oracles only.
    pub hidden: Option<usize>,
    /// Sample weight, 1 when absent.
    pub sample_weight: Option<f64>,
}

impl LoggedRecord {
    pub fn new(
        context: SparseVector,
        candidates: Vec<Candidate>,
        action: usize,
        reward: f64,
    ) -> Self {
        LoggedRecord {
            context,
            candidates,
            action,
            propensity: None,
            full_propensities: None,
            reward,
            hidden: None,
            sample_weight: None,
        }
    }

    /// Candidates named `ids`, with indicator action features.
    pub fn with_ids<S: AsRef<str>>(context: SparseVector, ids: &[S], action: usize, reward: f64) -> Self {
        let candidates = ids.iter().map(|s| Candidate::new(s.as_ref())).collect();
        Self::new(context, candidates, action, reward)
    }

    pub fn with_propensity(mut self, p: f64) -> Self {
        self.propensity = Some(p);
        self
    }

    /// Sets the full probability vector and the taken action's propensity.
    pub fn with_full_propensities(mut self, probs: Vec<f64>) -> Self {
        self.propensity = probs.get(self.action).copied();
        self.full_propensities = Some(probs);
        self
    }

    pub fn with_hidden(mut self, h: usize) -> Self {
        self.hidden = Some(h);
        self
    }

    pub fn with_sample_weight(mut self, w: f64) -> Self {
        self.sample_weight = Some(w);
        self
    }

    pub fn weight(&self) -> f64 {
        self.sample_weight.unwrap_or(1.0)
    }

    pub fn num_candidates(&self) -> usize {
        self.candidates.len()
    }

    fn validate(&self, record: usize) -> Result<(), DataError> {
        let bad = |field: &'static str, msg: String| DataError::Invariant { record, field, msg };
        if self.candidates.is_empty() {
            return Err(bad("cands", "candidate set must be nonempty".into()));
        }
        if self.action >= self.candidates.len() {
            return Err(bad(
                "a",
                format!(
                    "action index {} out of range for {} candidates",
                    self.action,
                    self.candidates.len()
                ),
            ));
        }
        if !(self.reward.is_finite() && self.reward >= 0.0) {
            return Err(bad("r", format!("reward must be finite and >= 0, got {}", self.reward)));
        }
        if let Some(p) = self.propensity {
            if !(p > 0.0 && p <= 1.0) {
                return Err(bad("p", format!("propensity must be in (0,1], got {p}")));
            }
            if p < MIN_PROPENSITY {
                return Err(bad("p", format!("propensity {p} below minimum {MIN_PROPENSITY}")));
            }
        }
        if let Some(all) = &self.full_propensities {
            if all.len() != self.candidates.len() {
                return Err(bad(
                    "p_all",
                    format!("{} probabilities for {} candidates", all.len(), self.candidates.len()),
                ));
            }
            if let Some(q) = all.iter().find(|q| !(**q >= 0.0 && **q <= 1.0)) {
                return Err(bad("p_all", format!("probability {q} outside [0,1]")));
            }
            let sum: f64 = all.iter().sum();
            if (sum - 1.0).abs() > SUM_TOLERANCE {
                return Err(bad("p_all", format!("probabilities sum to {sum}, expected 1")));
            }
            if let Some(p) = self.propensity {
                if (all[self.action] - p).abs() > 1e-12 {
                    return Err(bad(
                        "p_all",
                        format!("entry {} at the taken action differs from p = {p}", all[self.action]),
                    ));
                }
            }
        }
        if let Some(w) = self.sample_weight {
            if !(w.is_finite() && w >= 0.0) {
                return Err(bad("sw", format!("sample weight must be finite and >= 0, got {w}")));
            }
        }
        let with_features = self.candidates.iter().filter(|c| c.features.is_some()).count();
        if with_features != 0 && with_features != self.candidates.len() {
            return Err(bad("cands", "candidate features must be given for all candidates or none".into()));
        }
        Ok(())
    }
}

/// Wire representation of one line.
#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RecordLine {
    x: SparseVector,
    cands: Vec<Candidate>,
    a: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    p: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    p_all: Option<Vec<f64>>,
    r: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    count: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    h: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    sw: Option<f64>,
}

impl RecordLine {
    fn from_record(r: &LoggedRecord, count: Option<u64>) -> Self {
        RecordLine {
            x: r.context.clone(),
            cands: r.candidates.clone(),
            a: r.action,
            p: r.propensity,
            p_all: r.full_propensities.clone(),
            r: r.reward,
            count,
            h: r.hidden,
            sw: r.sample_weight,
        }
    }

    fn into_record(self) -> (LoggedRecord, Option<u64>) {
        let mut propensity = self.p;
        if propensity.is_none() {
            propensity = self.p_all.as_ref().and_then(|all| all.get(self.a).copied());
        }
        (
            LoggedRecord {
                context: self.x,
                candidates: self.cands,
                action: self.a,
                propensity,
                full_propensities: self.p_all,
                reward: self.r,
                hidden: self.h,
                sample_weight: self.sw,
            },
            self.count,
        )
    }
}

/// Validated, immutable logged dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct LoggedDataset {
    records: Vec<LoggedRecord>,
    scenario: LoggingScenario,
    context_dim: usize,
    action_feature_dim: Option<usize>,
}

impl LoggedDataset {
    /// Validates `records` against `scenario`, inferring feature dimensions.
    pub fn new(records: Vec<LoggedRecord>, scenario: LoggingScenario) -> Result<Self, DataError> {
        if records.is_empty() {
            return Err(DataError::Empty);
        }
        let mut context_dim = 0;
        let mut action_dim: Option<usize> = None;
        let mut featured = None;
        for (i, r) in records.iter().enumerate() {
            r.validate(i)?;
            match scenario {
                LoggingScenario::Full if r.full_propensities.is_none() => {
                    return Err(DataError::ScenarioMismatch { record: i, scenario, field: "p_all" });
                }
                LoggingScenario::Partial if r.propensity.is_none() => {
                    return Err(DataError::ScenarioMismatch { record: i, scenario, field: "p" });
                }
                _ => {}
            }
            context_dim = context_dim.max(r.context.dim_hint());
            let has_features = r.candidates[0].features.is_some();
            match featured {
                None => featured = Some(has_features),
                Some(f) if f != has_features => {
                    return Err(DataError::Invariant {
                        record: i,
                        field: "cands",
                        msg: "mixing featured and indicator candidates across records".into(),
                    })
                }
                _ => {}
            }
            if has_features {
                let d = r
                    .candidates
                    .iter()
                    .filter_map(|c| c.features.as_ref())
                    .map(SparseVector::dim_hint)
                    .max()
                    .unwrap_or(0);
                action_dim = Some(action_dim.unwrap_or(0).max(d));
            }
        }
        Ok(LoggedDataset {
            records,
            scenario,
            context_dim,
            action_feature_dim: action_dim,
        })
    }

    /// Declares a (larger) context dimension, e.g. for one-hot contexts with
    /// levels unseen in this sample.
    pub fn with_context_dim(mut self, dim: usize) -> Result<Self, DataError> {
        if dim < self.context_dim {
            return Err(DataError::Dimension(format!(
                "context index {} does not fit dimension {dim}",
                self.context_dim - 1
            )));
        }
        self.context_dim = dim;
        Ok(self)
    }

    pub fn with_action_feature_dim(mut self, dim: usize) -> Result<Self, DataError> {
        match self.action_feature_dim {
            Some(d) if d <= dim => {
                self.action_feature_dim = Some(dim);
                Ok(self)
            }
            None if self.max_candidates() <= dim => Ok(self),
            _ => Err(DataError::Dimension(format!("action features do not fit dimension {dim}"))),
        }
    }

    /// Re-declares the logging scenario, re-validating the records.
    pub fn with_scenario(self, scenario: LoggingScenario) -> Result<Self, DataError> {
        let (cd, ad) = (self.context_dim, self.action_feature_dim);
        let mut out = LoggedDataset::new(self.records, scenario)?;
        out.context_dim = out.context_dim.max(cd);
        if let (Some(a), Some(b)) = (out.action_feature_dim, ad) {
            out.action_feature_dim = Some(a.max(b));
        }
        Ok(out)
    }

    pub fn records(&self) -> &[LoggedRecord] {
        &self.records
    }

    pub fn into_records(self) -> Vec<LoggedRecord> {
        self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn scenario(&self) -> LoggingScenario {
        self.scenario
    }

    pub fn context_dim(&self) -> usize {
        self.context_dim
    }

    pub fn action_feature_dim(&self) -> Option<usize> {
        self.action_feature_dim
    }

    pub fn max_candidates(&self) -> usize {
        self.records.iter().map(|r| r.candidates.len()).max().unwrap_or(0)
    }

    /// Dimension of the action feature vectors: declared features, or the
    /// largest candidate set for indicator actions.
    pub fn action_dim(&self) -> usize {
        self.action_feature_dim.unwrap_or_else(|| self.max_candidates())
    }

    pub fn has_propensities(&self) -> bool {
        self.scenario.has_propensities()
    }

    pub fn total_weight(&self) -> f64 {
        self.records.iter().map(LoggedRecord::weight).sum()
    }

    pub fn mean_reward(&self) -> f64 {
        let s: f64 = self.records.iter().map(|r| r.weight() * r.reward).sum();
        s / self.total_weight()
    }

    /// Records at `indices`, keeping the declared dimensions.
    pub fn subset(&self, indices: &[usize]) -> Result<Self, DataError> {
        if indices.is_empty() {
            return Err(DataError::Empty);
        }
        Ok(LoggedDataset {
            records: indices.iter().map(|&i| self.records[i].clone()).collect(),
            scenario: self.scenario,
            context_dim: self.context_dim,
            action_feature_dim: self.action_feature_dim,
        })
    }

    /// Replaces each context by the indicator of its hidden variable.
    pub fn reveal_hidden(&self) -> Result<Self, DataError> {
        let mut levels = 0;
        let mut records = self.records.clone();
        for (i, r) in records.iter_mut().enumerate() {
            let h = r.hidden.ok_or(DataError::Invariant {
                record: i,
                field: "h",
                msg: "hidden variable not recorded".into(),
            })?;
            levels = levels.max(h + 1);
            r.context = SparseVector::one_hot(h);
        }
        LoggedDataset::new(records, self.scenario)?.with_context_dim(levels)
    }

    /// Drops the logged propensities (for experiments on the missing
    /// scenario).
    pub fn without_propensities(&self) -> Self {
        let mut out = self.clone();
        for r in &mut out.records {
            r.propensity = None;
            r.full_propensities = None;
        }
        out.scenario = LoggingScenario::Missing;
        out
    }

    pub fn load(path: impl AsRef<Path>, scenario: LoggingScenario) -> Result<Self, DataError> {
        Self::from_reader(File::open(path)?, scenario)
    }

    pub fn from_reader(reader: impl Read, scenario: LoggingScenario) -> Result<Self, DataError> {
        let mut records = Vec::new();
        for (i, line) in BufReader::new(reader).lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let parsed: RecordLine = serde_json::from_str(&line).map_err(|e| DataError::Parse {
                line: i + 1,
                msg: e.to_string(),
            })?;
            let (record, count) = parsed.into_record();
            match count {
                None => records.push(record),
                Some(0) => {
                    return Err(DataError::Parse {
                        line: i + 1,
                        msg: "count must be >= 1".into(),
                    })
                }
                Some(c) => records.extend(std::iter::repeat_n(record, c as usize)),
            }
        }
        LoggedDataset::new(records, scenario)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), DataError> {
        let mut w = BufWriter::new(File::create(path)?);
        self.to_writer(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn to_writer(&self, mut w: impl Write) -> Result<(), DataError> {
        for r in &self.records {
            write_line(&mut w, &RecordLine::from_record(r, None))?;
        }
        Ok(())
    }
}

/// Writes `records` with run-length aggregation of identical consecutive
/// records into `count` rows.
pub fn write_aggregated(records: &[LoggedRecord], mut w: impl Write) -> Result<(), DataError> {
    let mut i = 0;
    while i < records.len() {
        let mut j = i + 1;
        while j < records.len() && records[j] == records[i] {
            j += 1;
        }
        let count = (j - i > 1).then_some((j - i) as u64);
        write_line(&mut w, &RecordLine::from_record(&records[i], count))?;
        i = j;
    }
    Ok(())
}

fn write_line(w: &mut impl Write, line: &RecordLine) -> Result<(), DataError> {
    let s = serde_json::to_string(line).map_err(|e| DataError::Parse { line: 0, msg: e.to_string() })?;
    w.write_all(s.as_bytes())?;
    w.write_all(b"\n")?;
    Ok(())
}

/// Finite contextual bandit with known context distribution, logging policy
/// and expected rewards.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularEnvironment {
    context_probs: Vec<f64>,
    logging: Vec<Vec<f64>>,
    rewards: Vec<Vec<f64>>,
    reward_max: f64,
}

fn check_simplex(v: &[f64], what: &str) -> Result<(), DataError> {
    let sum: f64 = v.iter().sum();
    if v.iter().any(|p| !(*p >= 0.0 && *p <= 1.0)) || (sum - 1.0).abs() > 1e-12 {
        return Err(DataError::Dimension(format!("{what} is not a probability vector (sum {sum})")));
    }
    Ok(())
}

impl TabularEnvironment {
    pub fn new(
        context_probs: Vec<f64>,
        logging: Vec<Vec<f64>>,
        rewards: Vec<Vec<f64>>,
        reward_max: f64,
    ) -> Result<Self, DataError> {
        check_simplex(&context_probs, "context distribution")?;
        let nx = context_probs.len();
        if logging.len() != nx || rewards.len() != nx {
            return Err(DataError::Dimension(format!(
                "{nx} contexts but {} logging rows and {} reward rows",
                logging.len(),
                rewards.len()
            )));
        }
        let na = logging.first().map_or(0, Vec::len);
        if na == 0 {
            return Err(DataError::Dimension("no actions".into()));
        }
        for (x, (mu, r)) in logging.iter().zip(&rewards).enumerate() {
            if mu.len() != na || r.len() != na {
                return Err(DataError::Dimension(format!("context {x} has a ragged row")));
            }
            check_simplex(mu, &format!("logging policy at context {x}"))?;
            if r.iter().any(|v| !(*v >= 0.0 && *v <= reward_max)) {
                return Err(DataError::Dimension(format!(
                    "context {x}: rewards must lie in [0, {reward_max}]"
                )));
            }
        }
        Ok(TabularEnvironment {
            context_probs,
            logging,
            rewards,
            reward_max,
        })
    }

    /// Random environment. Logging probabilities are bounded below by
    /// `0.1 / n_actions`; rewards are uniform on `[0, reward_max]`.
    pub fn random(n_contexts: usize, n_actions: usize, reward_max: f64, rng: &mut impl Rng) -> Self {
        let context_probs = random_simplex(n_contexts, 0.0, rng);
        let logging = (0..n_contexts).map(|_| random_simplex(n_actions, 0.1, rng)).collect();
        let rewards = (0..n_contexts)
            .map(|_| (0..n_actions).map(|_| rng.random::<f64>() * reward_max).collect())
            .collect();
        TabularEnvironment::new(context_probs, logging, rewards, reward_max)
            .expect("random environment is valid by construction")
    }

    pub fn n_contexts(&self) -> usize {
        self.context_probs.len()
    }

    pub fn n_actions(&self) -> usize {
        self.logging[0].len()
    }

    pub fn context_probs(&self) -> &[f64] {
        &self.context_probs
    }

    pub fn logging(&self) -> &[Vec<f64>] {
        &self.logging
    }

    pub fn rewards(&self) -> &[Vec<f64>] {
        &self.rewards
    }

    pub fn reward_max(&self) -> f64 {
        self.reward_max
    }

    /// Same environment with a different logging policy.
    pub fn with_logging(&self, logging: Vec<Vec<f64>>) -> Result<Self, DataError> {
        TabularEnvironment::new(self.context_probs.clone(), logging, self.rewards.clone(), self.reward_max)
    }

    fn check_policy(&self, policy: &[Vec<f64>]) -> Result<(), DataError> {
        if policy.len() != self.n_contexts() || policy.iter().any(|p| p.len() != self.n_actions()) {
            return Err(DataError::Dimension(format!(
                "policy must be {} x {}",
                self.n_contexts(),
                self.n_actions()
            )));
        }
        Ok(())
    }

    /// `Σ_x p(x) Σ_a π(a|x) r(x,a)` by enumeration.
    pub fn exact_policy_value(&self, policy: &[Vec<f64>]) -> Result<f64, DataError> {
        self.check_policy(policy)?;
        Ok(self
            .context_probs
            .iter()
            .zip(policy)
            .zip(&self.rewards)
            .map(|((px, pi), r)| px * pi.iter().zip(r).map(|(p, v)| p * v).sum::<f64>())
            .sum())
    }

    /// `Σ_x p(x) Σ_a μ(a|x) f(x,a)` by enumeration.
    pub fn expectation_under_logging(&self, mut f: impl FnMut(usize, usize) -> f64) -> f64 {
        let mut total = 0.0;
        for (x, px) in self.context_probs.iter().enumerate() {
            let mut inner = 0.0;
            for (a, mu) in self.logging[x].iter().enumerate() {
                if *mu > 0.0 {
                    inner += mu * f(x, a);
                }
            }
            total += px * inner;
        }
        total
    }

    /// Checked variant of [`expectation_under_logging`](Self::expectation_under_logging)
    /// for functions of a policy table.
    pub fn expectation_with_policy(
        &self,
        policy: &[Vec<f64>],
        mut f: impl FnMut(usize, usize, f64) -> f64,
    ) -> Result<f64, DataError> {
        self.check_policy(policy)?;
        Ok(self.expectation_under_logging(|x, a| f(x, a, policy[x][a])))
    }

    /// Every outcome `(x, a)` with `μ(a|x) > 0` as one record with sample
    /// weight `p(x) μ(a|x)`; contexts are indicator vectors and rewards are
    /// the expected rewards. Weighted means over this dataset are exact
    /// expectations under the logging distribution.
    pub fn enumerated_dataset(&self) -> LoggedDataset {
        let ids: Vec<String> = (0..self.n_actions()).map(|a| a.to_string()).collect();
        let mut records = Vec::new();
        for (x, px) in self.context_probs.iter().enumerate() {
            for (a, mu) in self.logging[x].iter().enumerate() {
                if *mu > 0.0 && *px > 0.0 {
                    records.push(
                        LoggedRecord::with_ids(SparseVector::one_hot(x), &ids, a, self.rewards[x][a])
                            .with_full_propensities(self.logging[x].clone())
                            .with_sample_weight(px * mu),
                    );
                }
            }
        }
        LoggedDataset::new(records, LoggingScenario::Full)
            .and_then(|d| d.with_context_dim(self.n_contexts()))
            .expect("enumerated records are valid")
    }

    /// Samples `n` records with Bernoulli rewards (requires `reward_max <= 1`)
    /// or noiseless expected rewards.
    pub fn sample_dataset(&self, n: usize, bernoulli: bool, rng: &mut impl Rng) -> LoggedDataset {
        let ids: Vec<String> = (0..self.n_actions()).map(|a| a.to_string()).collect();
        let records = (0..n)
            .map(|_| {
                let x = sample_index(&self.context_probs, rng);
                let a = sample_index(&self.logging[x], rng);
                let mean = self.rewards[x][a];
                let r = if bernoulli {
                    f64::from(u8::from(rng.random::<f64>() < mean))
                } else {
                    mean
                };
                LoggedRecord::with_ids(SparseVector::one_hot(x), &ids, a, r)
                    .with_full_propensities(self.logging[x].clone())
            })
            .collect();
        LoggedDataset::new(records, LoggingScenario::Full)
            .and_then(|d| d.with_context_dim(self.n_contexts()))
            .expect("sampled records are valid")
    }
}

/// Uniform-ish random probability vector, each entry at least `floor`
/// before renormalisation (`floor` is split evenly).
pub fn random_simplex(n: usize, floor: f64, rng: &mut impl Rng) -> Vec<f64> {
    let raw: Vec<f64> = (0..n).map(|_| -(1.0 - rng.random::<f64>()).ln()).collect();
    let s: f64 = raw.iter().sum();
    let mut v: Vec<f64> = raw.iter().map(|r| (1.0 - floor) * r / s + floor / n as f64).collect();
    // exact renormalisation so the 1e-12 simplex check holds
    let t: f64 = v.iter().sum();
    v.iter_mut().for_each(|p| *p /= t);
    v
}

/// Inverse-CDF draw from a probability vector.
pub fn sample_index(probs: &[f64], rng: &mut impl Rng) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.iter().rposition(|p| *p > 0.0).unwrap_or(0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;

    fn kidney_env() -> TabularEnvironment {
        TabularEnvironment::new(
            vec![357.0 / 700.0, 343.0 / 700.0],
            vec![vec![87.0 / 357.0, 270.0 / 357.0], vec![263.0 / 343.0, 80.0 / 343.0]],
            vec![vec![81.0 / 87.0, 234.0 / 270.0], vec![192.0 / 263.0, 55.0 / 80.0]],
            1.0,
        )
        .unwrap()
    }

    #[test]
    fn kidney_surgery_value_by_enumeration() {
        let env = kidney_env();
        let surgery = vec![vec![1.0, 0.0], vec![1.0, 0.0]];
        let v = env.exact_policy_value(&surgery).unwrap();
        let expected = (357.0 / 700.0) * (81.0 / 87.0) + (343.0 / 700.0) * (192.0 / 263.0);
        assert!((v - expected).abs() < 1e-15);
        assert!((v - 0.832546).abs() < 1e-6);
        // IPWE unbiasedness through the logging expectation
        let ipw = env
            .expectation_with_policy(&surgery, |x, a, pi| pi / env.logging()[x][a] * env.rewards()[x][a])
            .unwrap();
        assert!((ipw - expected).abs() < 1e-12);
    }

    #[test]
    fn logging_identities() {
        let env = kidney_env();
        let mu = env.logging().to_vec();
        let v_mu = env.exact_policy_value(&mu).unwrap();
        let direct = env.expectation_under_logging(|x, a| env.rewards()[x][a]);
        assert!((v_mu - direct).abs() < 1e-15);
        let kl = env.expectation_with_policy(&mu, |x, a, pi| -(pi / env.logging()[x][a]).ln()).unwrap();
        assert_eq!(kl, 0.0);
    }

    #[test]
    fn zero_reward_arm() {
        let env = TabularEnvironment::new(vec![1.0], vec![vec![0.5, 0.5]], vec![vec![1.0, 0.0]], 1.0).unwrap();
        assert_eq!(env.exact_policy_value(&[vec![0.0, 1.0]]).unwrap(), 0.0);
        assert!(matches!(
            env.exact_policy_value(&[vec![1.0]]),
            Err(DataError::Dimension(_))
        ));
    }

    #[test]
    fn random_environments_self_normalize() {
        let mut rng = seed::rng(3);
        for _ in 0..50 {
            let env = TabularEnvironment::random(4, 3, 1.0, &mut rng);
            let pi: Vec<Vec<f64>> = (0..4).map(|_| random_simplex(3, 0.0, &mut rng)).collect();
            let mass = env.expectation_with_policy(&pi, |x, a, p| p / env.logging()[x][a]).unwrap();
            assert!((mass - 1.0).abs() < 1e-12);
            let ipw = env
                .expectation_with_policy(&pi, |x, a, p| p / env.logging()[x][a] * env.rewards()[x][a])
                .unwrap();
            assert!((ipw - env.exact_policy_value(&pi).unwrap()).abs() < 1e-12);
        }
    }

    #[test]
    fn aggregated_rows_expand() {
        let text = concat!(
            r#"{"x":[],"cands":[{"id":"s"},{"id":"p"}],"a":0,"p":0.25,"r":1.0,"count":3}"#,
            "\n",
            r#"{"x":[[2,1.0]],"cands":[{"id":"s"},{"id":"p"}],"a":1,"p":0.75,"r":0.0}"#,
            "\n"
        );
        let d = LoggedDataset::from_reader(text.as_bytes(), LoggingScenario::Partial).unwrap();
        assert_eq!(d.len(), 4);
        assert_eq!(d.context_dim(), 3);
        assert_eq!(d.action_dim(), 2);
        assert!(d.records()[..3].iter().all(|r| r.propensity == Some(0.25)));
    }

    #[test]
    fn load_errors() {
        let err = LoggedDataset::from_reader("".as_bytes(), LoggingScenario::Missing).unwrap_err();
        assert_eq!(err.to_string(), "empty dataset");

        let zero = r#"{"x":[],"cands":[{"id":"s"}],"a":0,"p":0.0,"r":1.0}"#;
        let err = LoggedDataset::from_reader(zero.as_bytes(), LoggingScenario::Partial).unwrap_err();
        assert!(err.to_string().contains("propensity must be in (0,1]"), "{err}");

        let tiny = r#"{"x":[],"cands":[{"id":"s"}],"a":0,"p":1e-13,"r":1.0}"#;
        let err = LoggedDataset::from_reader(tiny.as_bytes(), LoggingScenario::Partial).unwrap_err();
        assert!(matches!(err, DataError::Invariant { field: "p", .. }));

        let garbage = "{\"x\":[]}\nnot json";
        match LoggedDataset::from_reader(garbage.as_bytes(), LoggingScenario::Missing) {
            Err(DataError::Parse { line: 1, .. }) => {}
            other => panic!("{other:?}"),
        }

        let no_p = r#"{"x":[],"cands":[{"id":"s"}],"a":0,"r":1.0}"#;
        assert!(matches!(
            LoggedDataset::from_reader(no_p.as_bytes(), LoggingScenario::Partial),
            Err(DataError::ScenarioMismatch { field: "p", .. })
        ));
        assert!(matches!(
            LoggedDataset::from_reader(no_p.as_bytes(), LoggingScenario::Full),
            Err(DataError::ScenarioMismatch { field: "p_all", .. })
        ));
        assert!(LoggedDataset::from_reader(no_p.as_bytes(), LoggingScenario::Missing).is_ok());

        let bad_sum = r#"{"x":[],"cands":[{"id":"s"},{"id":"t"}],"a":0,"p_all":[0.5,0.6],"r":1.0}"#;
        assert!(matches!(
            LoggedDataset::from_reader(bad_sum.as_bytes(), LoggingScenario::Full),
            Err(DataError::Invariant { field: "p_all", .. })
        ));

        let neg = r#"{"x":[],"cands":[{"id":"s"}],"a":0,"r":-1.0}"#;
        assert!(matches!(
            LoggedDataset::from_reader(neg.as_bytes(), LoggingScenario::Missing),
            Err(DataError::Invariant { field: "r", .. })
        ));

        let out_of_range = r#"{"x":[],"cands":[{"id":"s"}],"a":1,"r":1.0}"#;
        assert!(matches!(
            LoggedDataset::from_reader(out_of_range.as_bytes(), LoggingScenario::Missing),
            Err(DataError::Invariant { field: "a", .. })
        ));

        let unknown = r#"{"x":[],"cands":[{"id":"s"}],"a":0,"r":1.0,"bogus":1}"#;
        assert!(matches!(
            LoggedDataset::from_reader(unknown.as_bytes(), LoggingScenario::Missing),
            Err(DataError::Parse { .. })
        ));
    }

    #[test]
    fn full_vector_supplies_partial_propensity() {
        let line = r#"{"x":[],"cands":[{"id":"s"},{"id":"t"}],"a":1,"p_all":[0.25,0.75],"r":1.0}"#;
        let d = LoggedDataset::from_reader(line.as_bytes(), LoggingScenario::Partial).unwrap();
        assert_eq!(d.records()[0].propensity, Some(0.75));
    }

    #[test]
    fn reveal_hidden_builds_indicator_contexts() {
        let recs = vec![
            LoggedRecord::with_ids(SparseVector::default(), &["a", "b"], 0, 1.0)
                .with_propensity(0.5)
                .with_hidden(1),
            LoggedRecord::with_ids(SparseVector::default(), &["a", "b"], 1, 0.0)
                .with_propensity(0.5)
                .with_hidden(0),
        ];
        let d = LoggedDataset::new(recs, LoggingScenario::Partial).unwrap();
        let r = d.reveal_hidden().unwrap();
        assert_eq!(r.context_dim(), 2);
        assert_eq!(r.records()[0].context, SparseVector::one_hot(1));
    }

    #[test]
    fn enumerated_dataset_weights_sum_to_one() {
        let env = kidney_env();
        let d = env.enumerated_dataset();
        assert_eq!(d.len(), 4);
        assert!((d.total_weight() - 1.0).abs() < 1e-15);
        let v_mu = env.exact_policy_value(env.logging()).unwrap();
        assert!((d.mean_reward() - v_mu).abs() < 1e-15);
    }
}
