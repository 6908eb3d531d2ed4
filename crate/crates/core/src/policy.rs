//! Softmax policy families over candidate sets.
//!
//! Every family scores candidate `a` (an action feature vector, by default
//! the indicator of its position) with a potential that is linear in `a`:
//! `φ(x, a) = g(x)ᵀa`, where `g(x)` is
//!
//! | family               | `g(x)`            |
//! |----------------------|-------------------|
//! | `context-free`       | `w`               |
//! | `tabular`            | `Θ[cell(x)]`      |
//! | `linear`             | `Wᵀx`             |
//! | `bilinear-full`      | `Wᵀx + w`         |
//! | `bilinear-lowrank:r` | `V Uᵀx + w`       |
//!
//! The policy is the softmax of the potentials over the record's
//! candidates. Because `φ` is linear in `a`, the score function is
//! `∇ log π(a_k|x) = ∇_θ g(x)ᵀ(a_k − ā)` with `ā = Σ_j π_j a_j`, which is
//! what [`PolicyParams::accumulate_score_grad`] computes.

use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{sample_index, Candidate, LoggedDataset, LoggedRecord, SparseVector};
use crate::seed;

/// Probability floor applied inside importance ratios whenever a logarithm
/// of `π` is taken.
pub const PI_MIN: f64 = 1e-8;

#[derive(Debug, Error)]
pub enum PolicyError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("parameter vector has length {got}, family {family} expects {expected}")]
    ThetaLength {
        family: PolicyFamily,
        expected: usize,
        got: usize,
    },

    #[error("non-finite potential for candidate {0}")]
    NonFinite(usize),

    #[error("logging policy unavailable: record has no full propensity vector")]
    NoLoggingProbabilities,

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PolicyFamily {
    /// One logit per action feature, ignoring the context.
    ContextFree,
    /// A logit row per context cell; contexts must be indicator vectors.
    Tabular,
    Linear,
    BilinearFull,
    BilinearLowRank(usize),
}

impl fmt::Display for PolicyFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PolicyFamily::ContextFree => f.write_str("context-free"),
            PolicyFamily::Tabular => f.write_str("tabular"),
            PolicyFamily::Linear => f.write_str("linear"),
            PolicyFamily::BilinearFull => f.write_str("bilinear-full"),
            PolicyFamily::BilinearLowRank(r) => write!(f, "bilinear-lowrank:{r}"),
        }
    }
}

impl FromStr for PolicyFamily {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.to_ascii_lowercase().replace('_', "-");
        match s.as_str() {
            "context-free" | "contextfree" => Ok(PolicyFamily::ContextFree),
            "tabular" => Ok(PolicyFamily::Tabular),
            "linear" => Ok(PolicyFamily::Linear),
            "bilinear-full" | "full" => Ok(PolicyFamily::BilinearFull),
            _ => {
                let rank = s
                    .strip_prefix("bilinear-lowrank:")
                    .or_else(|| s.strip_prefix("lowrank:"))
                    .or_else(|| s.strip_prefix("rank-"))
                    .ok_or_else(|| format!("unknown policy family `{s}`"))?;
                match rank.parse::<usize>() {
                    Ok(r) if r >= 1 => Ok(PolicyFamily::BilinearLowRank(r)),
                    _ => Err(format!("invalid rank in `{s}`")),
                }
            }
        }
    }
}

impl Serialize for PolicyFamily {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for PolicyFamily {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Dimensions of a parameter vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Shapes {
    /// Context dimension (number of cells for the tabular family).
    pub context_dim: usize,
    pub action_dim: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyParams {
    pub family: PolicyFamily,
    pub shapes: Shapes,
    pub theta: Vec<f64>,
}

/// Log-probabilities over one record's candidates.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionDistribution {
    pub log_probs: Vec<f64>,
}

impl ActionDistribution {
    /// Stable log-softmax of `potentials`.
    pub fn from_potentials(potentials: &[f64]) -> Self {
        let m = potentials.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + potentials.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        ActionDistribution {
            log_probs: potentials.iter().map(|v| v - lse).collect(),
        }
    }

    pub fn probs(&self) -> Vec<f64> {
        self.log_probs.iter().map(|l| l.exp()).collect()
    }

    pub fn len(&self) -> usize {
        self.log_probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.log_probs.is_empty()
    }
}

/// Index of the largest entry; the lowest index wins ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// Something that assigns probabilities to a record's candidates.
pub trait Policy: Sync {
    fn probabilities(&self, record: &LoggedRecord) -> Result<Vec<f64>, PolicyError>;

    /// Probability of candidate `k`.
    fn prob_of(&self, record: &LoggedRecord, k: usize) -> Result<f64, PolicyError> {
        let probs = self.probabilities(record)?;
        probs
            .get(k)
            .copied()
            .ok_or_else(|| PolicyError::Dimension(format!("candidate {k} out of range")))
    }
}

impl<P: Policy + ?Sized> Policy for &P {
    fn probabilities(&self, record: &LoggedRecord) -> Result<Vec<f64>, PolicyError> {
        (**self).probabilities(record)
    }

    fn prob_of(&self, record: &LoggedRecord, k: usize) -> Result<f64, PolicyError> {
        (**self).prob_of(record, k)
    }
}

/// Tabular cell of an indicator context: 0 for the empty vector, otherwise
/// the index of its single nonzero entry.
pub fn context_cell(x: &SparseVector, cells: usize) -> Result<usize, PolicyError> {
    let mut nonzero = x.iter().filter(|(_, v)| *v != 0.0);
    let cell = match (nonzero.next(), nonzero.next()) {
        (None, _) if cells == 1 => 0,
        (None, _) => {
            return Err(PolicyError::Dimension(format!(
                "empty context for a tabular policy with {cells} cells"
            )))
        }
        (Some((i, _)), None) => i,
        (Some(_), Some(_)) => {
            return Err(PolicyError::Dimension(
                "tabular policies need indicator contexts (one nonzero entry)".into(),
            ))
        }
    };
    if cell >= cells {
        return Err(PolicyError::Dimension(format!("context cell {cell} >= {cells} cells")));
    }
    Ok(cell)
}

fn candidate_features(c: &Candidate, position: usize) -> CandFeat<'_> {
    match &c.features {
        Some(f) => CandFeat::Sparse(f),
        None => CandFeat::Indicator(position),
    }
}

enum CandFeat<'a> {
    Indicator(usize),
    Sparse(&'a SparseVector),
}

impl CandFeat<'_> {
    fn dot(&self, g: &[f64]) -> Result<f64, PolicyError> {
        let q = g.len();
        let oob = |j: usize| PolicyError::Dimension(format!("action feature {j} >= action dimension {q}"));
        match self {
            CandFeat::Indicator(j) => g.get(*j).copied().ok_or_else(|| oob(*j)),
            CandFeat::Sparse(f) => f.iter().try_fold(0.0, |acc, (j, v)| {
                g.get(j).map(|gj| acc + gj * v).ok_or_else(|| oob(j))
            }),
        }
    }

    fn add_to(&self, out: &mut [f64], scale: f64) {
        match self {
            CandFeat::Indicator(j) => out[*j] += scale,
            CandFeat::Sparse(f) => {
                for (j, v) in f.iter() {
                    out[j] += scale * v;
                }
            }
        }
    }
}

impl PolicyParams {
    pub fn num_params(family: PolicyFamily, shapes: Shapes) -> usize {
        let (p, q) = (shapes.context_dim, shapes.action_dim);
        match family {
            PolicyFamily::ContextFree => q,
            PolicyFamily::Tabular | PolicyFamily::Linear => p * q,
            PolicyFamily::BilinearFull => p * q + q,
            PolicyFamily::BilinearLowRank(r) => p * r + q * r + q,
        }
    }

    pub fn new(family: PolicyFamily, shapes: Shapes, theta: Vec<f64>) -> Result<Self, PolicyError> {
        let expected = Self::num_params(family, shapes);
        if theta.len() != expected {
            return Err(PolicyError::ThetaLength {
                family,
                expected,
                got: theta.len(),
            });
        }
        if let Some(i) = theta.iter().position(|t| !t.is_finite()) {
            return Err(PolicyError::Dimension(format!("parameter {i} is not finite")));
        }
        Ok(PolicyParams { family, shapes, theta })
    }

    /// Shapes for `family` on `dataset`. Tabular policies get one cell per
    /// context coordinate (a single cell when contexts are empty).
    pub fn shapes_for(family: PolicyFamily, dataset: &LoggedDataset) -> Shapes {
        let p = match family {
            PolicyFamily::ContextFree => 0,
            PolicyFamily::Tabular => dataset.context_dim().max(1),
            _ => dataset.context_dim(),
        };
        Shapes {
            context_dim: p,
            action_dim: dataset.action_dim(),
        }
    }

    /// All-zero parameters: the uniform policy.
    pub fn zeros(family: PolicyFamily, shapes: Shapes) -> Self {
        PolicyParams {
            family,
            shapes,
            theta: vec![0.0; Self::num_params(family, shapes)],
        }
    }

    /// Default initialization: zeros, except the low-rank factors `U`, `V`
    /// which are drawn uniformly from `[-0.1, 0.1] / sqrt(r)` (zero is a
    /// saddle point for them).
    pub fn init(family: PolicyFamily, shapes: Shapes, seed: u64) -> Self {
        let mut params = Self::zeros(family, shapes);
        if let PolicyFamily::BilinearLowRank(r) = family {
            let mut rng = seed::derived_rng(seed, &[0x1a17]);
            let scale = 0.1 / (r as f64).sqrt();
            let factors = (shapes.context_dim + shapes.action_dim) * r;
            for t in &mut params.theta[..factors] {
                *t = (2.0 * rng.random::<f64>() - 1.0) * scale;
            }
        }
        params
    }

    pub fn for_dataset(family: PolicyFamily, dataset: &LoggedDataset, seed: u64) -> Self {
        Self::init(family, Self::shapes_for(family, dataset), seed)
    }

    /// Tabular parameters with logits `ln p` for per-cell probability rows.
    pub fn tabular_from_probs(rows: &[Vec<f64>]) -> Result<Self, PolicyError> {
        let q = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != q) {
            return Err(PolicyError::Dimension("ragged probability table".into()));
        }
        let theta = rows.iter().flatten().map(|p| p.max(1e-300).ln()).collect();
        Self::new(
            PolicyFamily::Tabular,
            Shapes {
                context_dim: rows.len(),
                action_dim: q,
            },
            theta,
        )
    }

    pub fn is_finite(&self) -> bool {
        self.theta.iter().all(|t| t.is_finite())
    }

    fn check_context(&self, x: &SparseVector) -> Result<(), PolicyError> {
        let p = self.shapes.context_dim;
        match x.iter().find(|(i, _)| *i >= p) {
            Some((i, _)) => Err(PolicyError::Dimension(format!("context index {i} >= context dimension {p}"))),
            None => Ok(()),
        }
    }

    fn layout(&self) -> (usize, usize, usize) {
        let (p, q) = (self.shapes.context_dim, self.shapes.action_dim);
        let r = match self.family {
            PolicyFamily::BilinearLowRank(r) => r,
            _ => 0,
        };
        (p, q, r)
    }

    /// The action-space vector `g(x)` with `φ(x, a) = g(x)ᵀa`.
    fn action_vector(&self, x: &SparseVector) -> Result<Vec<f64>, PolicyError> {
        let (p, q, r) = self.layout();
        let th = &self.theta;
        match self.family {
            PolicyFamily::ContextFree => Ok(th.clone()),
            PolicyFamily::Tabular => {
                let c = context_cell(x, p)?;
                Ok(th[c * q..(c + 1) * q].to_vec())
            }
            PolicyFamily::Linear | PolicyFamily::BilinearFull => {
                self.check_context(x)?;
                let mut g = if self.family == PolicyFamily::BilinearFull {
                    th[p * q..].to_vec()
                } else {
                    vec![0.0; q]
                };
                for (i, v) in x.iter() {
                    for (gj, wij) in g.iter_mut().zip(&th[i * q..(i + 1) * q]) {
                        *gj += v * wij;
                    }
                }
                Ok(g)
            }
            PolicyFamily::BilinearLowRank(_) => {
                self.check_context(x)?;
                let u = self.projected_context(x);
                let (v, w) = th[p * r..].split_at(q * r);
                Ok((0..q)
                    .map(|j| w[j] + (0..r).map(|k| v[j * r + k] * u[k]).sum::<f64>())
                    .collect())
            }
        }
    }

    /// `Uᵀx` for the low-rank family.
    fn projected_context(&self, x: &SparseVector) -> Vec<f64> {
        let (_, _, r) = self.layout();
        let mut u = vec![0.0; r];
        for (i, v) in x.iter() {
            for (uk, uik) in u.iter_mut().zip(&self.theta[i * r..(i + 1) * r]) {
                *uk += v * uik;
            }
        }
        u
    }

    /// Potentials `φ(x, a)` for each candidate.
    pub fn potentials(&self, record: &LoggedRecord) -> Result<Vec<f64>, PolicyError> {
        let g = self.action_vector(&record.context)?;
        record
            .candidates
            .iter()
            .enumerate()
            .map(|(k, c)| {
                let v = candidate_features(c, k).dot(&g)?;
                if v.is_finite() {
                    Ok(v)
                } else {
                    Err(PolicyError::NonFinite(k))
                }
            })
            .collect()
    }

    /// Log-softmax of the potentials over the record's candidates.
    pub fn score(&self, record: &LoggedRecord) -> Result<ActionDistribution, PolicyError> {
        Ok(ActionDistribution::from_potentials(&self.potentials(record)?))
    }

    /// Adds `scale · Σ_k coefs[k] ∇ log π(a_k|x)` to `grad`, given the
    /// record's probabilities `probs`.
    pub fn accumulate_score_grad(
        &self,
        record: &LoggedRecord,
        probs: &[f64],
        coefs: &[f64],
        scale: f64,
        grad: &mut [f64],
    ) -> Result<(), PolicyError> {
        let q = self.shapes.action_dim;
        // direction d = Σ_k c_k (a_k − ā)
        let total: f64 = coefs.iter().sum();
        let mut d = vec![0.0; q];
        for (k, c) in record.candidates.iter().enumerate() {
            let f = candidate_features(c, k);
            let coef = coefs[k] - total * probs[k];
            if coef != 0.0 {
                f.add_to(&mut d, scale * coef);
            }
        }
        self.accumulate_direction(&record.context, &d, grad)
    }

    /// Gradient of the potential `φ(x, a_k)` with respect to `theta`.
    pub fn potential_grad(&self, record: &LoggedRecord, k: usize) -> Result<Vec<f64>, PolicyError> {
        let c = record
            .candidates
            .get(k)
            .ok_or_else(|| PolicyError::Dimension(format!("candidate {k} out of range")))?;
        let mut d = vec![0.0; self.shapes.action_dim];
        let f = candidate_features(c, k);
        if let CandFeat::Sparse(sv) = &f {
            if let Some((j, _)) = sv.iter().find(|(j, _)| *j >= d.len()) {
                return Err(PolicyError::Dimension(format!("action feature {j} >= action dimension {}", d.len())));
            }
        } else if k >= d.len() {
            return Err(PolicyError::Dimension(format!("action feature {k} >= action dimension {}", d.len())));
        }
        f.add_to(&mut d, 1.0);
        let mut grad = vec![0.0; self.theta.len()];
        self.accumulate_direction(&record.context, &d, &mut grad)?;
        Ok(grad)
    }

    /// Adds `∇_θ g(x)ᵀ d` to `grad` for an action-space direction `d`.
    fn accumulate_direction(&self, x: &SparseVector, d: &[f64], grad: &mut [f64]) -> Result<(), PolicyError> {
        let (p, q, r) = self.layout();
        match self.family {
            PolicyFamily::ContextFree => add(grad, d),
            PolicyFamily::Tabular => {
                let c = context_cell(x, p)?;
                add(&mut grad[c * q..(c + 1) * q], d);
            }
            PolicyFamily::Linear | PolicyFamily::BilinearFull => {
                for (i, v) in x.iter() {
                    for (gij, dj) in grad[i * q..(i + 1) * q].iter_mut().zip(d) {
                        *gij += v * dj;
                    }
                }
                if self.family == PolicyFamily::BilinearFull {
                    add(&mut grad[p * q..], d);
                }
            }
            PolicyFamily::BilinearLowRank(_) => {
                let u = self.projected_context(x);
                let (v, _) = self.theta[p * r..].split_at(q * r);
                let vt_d: Vec<f64> = (0..r).map(|k| (0..q).map(|j| v[j * r + k] * d[j]).sum()).collect();
                for (i, xi) in x.iter() {
                    for (gik, vk) in grad[i * r..(i + 1) * r].iter_mut().zip(&vt_d) {
                        *gik += xi * vk;
                    }
                }
                let (gv, gw) = grad[p * r..].split_at_mut(q * r);
                for j in 0..q {
                    for k in 0..r {
                        gv[j * r + k] += d[j] * u[k];
                    }
                }
                add(gw, d);
            }
        }
        Ok(())
    }

    /// Analytic gradient of `log π(a_k|x)` with respect to `theta`.
    pub fn grad_log_prob(&self, record: &LoggedRecord, k: usize) -> Result<Vec<f64>, PolicyError> {
        if k >= record.candidates.len() {
            return Err(PolicyError::Dimension(format!("candidate {k} out of range")));
        }
        let probs = self.score(record)?.probs();
        let mut coefs = vec![0.0; probs.len()];
        coefs[k] = 1.0;
        let mut grad = vec![0.0; self.theta.len()];
        self.accumulate_score_grad(record, &probs, &coefs, 1.0, &mut grad)?;
        Ok(grad)
    }

    /// Greedy action: argmax of the log-probabilities, lowest index on ties.
    pub fn sharpen(&self, record: &LoggedRecord) -> Result<usize, PolicyError> {
        Ok(argmax(&self.score(record)?.log_probs))
    }

    /// Draws a candidate index from the policy with a generator seeded by
    /// `rng_seed`.
    pub fn sample_action(&self, record: &LoggedRecord, rng_seed: u64) -> Result<usize, PolicyError> {
        let probs = self.score(record)?.probs();
        Ok(sample_index(&probs, &mut seed::rng(rng_seed)))
    }

    /// Low-rank factors `(U, V)` and first-order weights, row-major.
    pub fn factors(&self) -> Option<(&[f64], &[f64], &[f64])> {
        let (p, q, r) = self.layout();
        match self.family {
            PolicyFamily::BilinearLowRank(_) => {
                let (u, rest) = self.theta.split_at(p * r);
                let (v, w) = rest.split_at(q * r);
                Some((u, v, w))
            }
            _ => None,
        }
    }

    pub fn save(&self, path: impl AsRef<Path>, seed: u64, greedy: bool) -> Result<(), PolicyError> {
        let mut w = BufWriter::new(File::create(path)?);
        write_checkpoint(&mut w, self, seed, greedy)?;
        w.flush()?;
        Ok(())
    }
}

fn add(dst: &mut [f64], src: &[f64]) {
    for (a, b) in dst.iter_mut().zip(src) {
        *a += b;
    }
}

impl Policy for PolicyParams {
    fn probabilities(&self, record: &LoggedRecord) -> Result<Vec<f64>, PolicyError> {
        Ok(self.score(record)?.probs())
    }
}

/// The logging policy as recorded in the data. `prob_of` the taken action
/// returns the logged propensity itself, so importance weights of the
/// logging policy are exactly 1.
#[derive(Debug, Clone, Copy, Default)]
pub struct LoggingPolicy;

impl Policy for LoggingPolicy {
    fn probabilities(&self, record: &LoggedRecord) -> Result<Vec<f64>, PolicyError> {
        record.full_propensities.clone().ok_or(PolicyError::NoLoggingProbabilities)
    }

    fn prob_of(&self, record: &LoggedRecord, k: usize) -> Result<f64, PolicyError> {
        match (k == record.action, record.propensity) {
            (true, Some(p)) => Ok(p),
            _ => self
                .probabilities(record)?
                .get(k)
                .copied()
                .ok_or_else(|| PolicyError::Dimension(format!("candidate {k} out of range"))),
        }
    }
}

/// Greedy sharpening of another policy: all mass on its argmax.
#[derive(Debug, Clone)]
pub struct Greedy<P>(pub P);

impl<P: Policy> Policy for Greedy<P> {
    fn probabilities(&self, record: &LoggedRecord) -> Result<Vec<f64>, PolicyError> {
        let probs = self.0.probabilities(record)?;
        let best = argmax(&probs);
        Ok((0..probs.len()).map(|k| if k == best { 1.0 } else { 0.0 }).collect())
    }
}

/// Deterministic policy choosing the candidate with a given id (or the
/// first candidate when the id is absent).
#[derive(Debug, Clone)]
pub struct ConstantPolicy {
    pub id: String,
}

impl Policy for ConstantPolicy {
    fn probabilities(&self, record: &LoggedRecord) -> Result<Vec<f64>, PolicyError> {
        let k = record.candidates.iter().position(|c| c.id == self.id).unwrap_or(0);
        Ok((0..record.candidates.len()).map(|j| if j == k { 1.0 } else { 0.0 }).collect())
    }
}

/// Explicit probability table over tabular context cells.
#[derive(Debug, Clone, PartialEq)]
pub struct TablePolicy {
    pub probs: Vec<Vec<f64>>,
}

impl Policy for TablePolicy {
    fn probabilities(&self, record: &LoggedRecord) -> Result<Vec<f64>, PolicyError> {
        let row = &self.probs[context_cell(&record.context, self.probs.len())?];
        if row.len() != record.candidates.len() {
            return Err(PolicyError::Dimension(format!(
                "table row has {} entries for {} candidates",
                row.len(),
                record.candidates.len()
            )));
        }
        Ok(row.clone())
    }
}

/// Evaluates `policy` on every context of an `n_contexts × n_actions`
/// tabular environment (indicator contexts, indicator actions).
pub fn tabulate(policy: &impl Policy, n_contexts: usize, n_actions: usize) -> Result<Vec<Vec<f64>>, PolicyError> {
    let ids: Vec<String> = (0..n_actions).map(|a| a.to_string()).collect();
    (0..n_contexts)
        .map(|x| {
            let context = if n_contexts == 1 {
                SparseVector::default()
            } else {
                SparseVector::one_hot(x)
            };
            policy.probabilities(&LoggedRecord::with_ids(context, &ids, 0, 0.0))
        })
        .collect()
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CheckpointHeader {
    family: PolicyFamily,
    context_dim: usize,
    action_dim: usize,
    seed: u64,
    #[serde(default)]
    greedy: bool,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CheckpointBody {
    theta: Vec<f64>,
}

/// A parameter checkpoint: header line, then the flat parameter array.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: PolicyParams,
    pub seed: u64,
    /// Evaluate the greedy sharpening rather than the softmax.
    pub greedy: bool,
}

impl Checkpoint {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, PolicyError> {
        read_checkpoint(File::open(path)?)
    }
}

impl Policy for Checkpoint {
    fn probabilities(&self, record: &LoggedRecord) -> Result<Vec<f64>, PolicyError> {
        if self.greedy {
            Greedy(&self.params).probabilities(record)
        } else {
            self.params.probabilities(record)
        }
    }
}

pub fn write_checkpoint(mut w: impl Write, params: &PolicyParams, seed: u64, greedy: bool) -> Result<(), PolicyError> {
    let header = CheckpointHeader {
        family: params.family,
        context_dim: params.shapes.context_dim,
        action_dim: params.shapes.action_dim,
        seed,
        greedy,
    };
    let enc = |e: serde_json::Error| PolicyError::Checkpoint(e.to_string());
    writeln!(w, "{}", serde_json::to_string(&header).map_err(enc)?)?;
    let body = CheckpointBody {
        theta: params.theta.clone(),
    };
    writeln!(w, "{}", serde_json::to_string(&body).map_err(enc)?)?;
    Ok(())
}

pub fn read_checkpoint(r: impl Read) -> Result<Checkpoint, PolicyError> {
    let mut lines = BufReader::new(r).lines().filter(|l| !matches!(l, Ok(s) if s.trim().is_empty()));
    let mut next = |what: &str| -> Result<String, PolicyError> {
        lines
            .next()
            .transpose()?
            .ok_or_else(|| PolicyError::Checkpoint(format!("missing {what} line")))
    };
    let header: CheckpointHeader = serde_json::from_str(&next("header")?)
        .map_err(|e| PolicyError::Checkpoint(format!("header: {e}")))?;
    let body: CheckpointBody = serde_json::from_str(&next("parameter")?)
        .map_err(|e| PolicyError::Checkpoint(format!("parameters: {e}")))?;
    let shapes = Shapes {
        context_dim: header.context_dim,
        action_dim: header.action_dim,
    };
    Ok(Checkpoint {
        params: PolicyParams::new(header.family, shapes, body.theta)?,
        seed: header.seed,
        greedy: header.greedy,
    })
}
