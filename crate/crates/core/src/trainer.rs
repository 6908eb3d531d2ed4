//! Seeded minibatch gradient ascent and reward-model regression.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;

use crate::data::{LoggedDataset, LoggingScenario};
use crate::estimators::{RewardModel, WeightVector};
use crate::objectives::{eval_objective, eval_objective_on, iml_loss, ObjectiveKind, ObjectiveSpec};
use crate::policy::{PolicyError, PolicyFamily, PolicyParams};
use crate::{seed, Error, Result};

/// Seed-derivation tags.
const TAG_SHUFFLE: u64 = 0x5f;
const TAG_HOLDOUT: u64 = 0x40;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Schedule {
    Constant,
    /// `η / sqrt(1 + epoch)`.
    InverseSqrt,
}

impl std::str::FromStr for Schedule {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "constant" => Ok(Schedule::Constant),
            "inverse-sqrt" | "inv-sqrt" => Ok(Schedule::InverseSqrt),
            other => Err(format!("unknown schedule `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub schedule: Schedule,
    /// `None` trains full-batch.
    pub batch_size: Option<usize>,
    pub max_epochs: usize,
    pub seed: u64,
    /// Weight decay applied at every step.
    pub l2: f64,
    /// Stop once the epoch objective changes by less than `tolerance`
    /// (relative to `max(|value|, 1)`) for `patience` consecutive epochs.
    pub tolerance: f64,
    pub patience: usize,
    pub holdout_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1.0,
            schedule: Schedule::InverseSqrt,
            batch_size: None,
            max_epochs: 500,
            seed: 0,
            l2: 0.0,
            tolerance: 1e-6,
            patience: 5,
            holdout_fraction: 0.0,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::arg(format!("learning rate must be > 0, got {}", self.learning_rate)));
        }
        if self.batch_size == Some(0) {
            return Err(Error::arg("batch size must be >= 1"));
        }
        if !(0.0..1.0).contains(&self.holdout_fraction) {
            return Err(Error::arg(format!("holdout fraction must lie in [0, 1), got {}", self.holdout_fraction)));
        }
        if !(self.l2 >= 0.0 && self.l2.is_finite()) {
            return Err(Error::arg(format!("l2 must be >= 0, got {}", self.l2)));
        }
        Ok(())
    }

    fn rate(&self, epoch: usize) -> f64 {
        match self.schedule {
            Schedule::Constant => self.learning_rate,
            Schedule::InverseSqrt => self.learning_rate / ((1 + epoch) as f64).sqrt(),
        }
    }
}

/// Per-epoch training diagnostics.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainTrace {
    pub objective: Vec<f64>,
    pub grad_norm: Vec<f64>,
    /// Imitation loss on the training split, for the dataset's scenario.
    pub iml_loss: Vec<f64>,
    /// Self-normalization gap on the holdout split (when there is one and
    /// propensities are logged).
    pub holdout_gap: Vec<Option<f64>>,
    pub converged: bool,
}

impl TrainTrace {
    pub fn epochs(&self) -> usize {
        self.objective.len()
    }

    pub fn write_csv(&self, w: impl Write) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["epoch", "objective", "grad_norm", "iml_loss", "holdout_gap"])?;
        for e in 0..self.epochs() {
            out.write_record([
                e.to_string(),
                self.objective[e].to_string(),
                self.grad_norm[e].to_string(),
                self.iml_loss[e].to_string(),
                self.holdout_gap[e].map_or(String::new(), |g| g.to_string()),
            ])?;
        }
        out.flush()?;
        Ok(())
    }
}

/// The imitation loss matching a scenario.
pub fn scenario_iml(scenario: LoggingScenario) -> ObjectiveKind {
    match scenario {
        LoggingScenario::Full => ObjectiveKind::ImlFull,
        LoggingScenario::Partial => ObjectiveKind::ImlPart,
        LoggingScenario::Missing => ObjectiveKind::ImlMiss,
    }
}

/// Splits off a seeded holdout of `fraction` of the records.
pub fn holdout_split(dataset: &LoggedDataset, fraction: f64, seed: u64) -> Result<(LoggedDataset, Option<LoggedDataset>)> {
    let n_hold = (dataset.len() as f64 * fraction).floor() as usize;
    if n_hold == 0 {
        return Ok((dataset.clone(), None));
    }
    if n_hold >= dataset.len() {
        return Err(Error::arg("holdout leaves no training records"));
    }
    let mut idx: Vec<usize> = (0..dataset.len()).collect();
    idx.shuffle(&mut seed::derived_rng(seed, &[TAG_HOLDOUT]));
    let (hold, train) = idx.split_at(n_hold);
    let (mut hold, mut train) = (hold.to_vec(), train.to_vec());
    hold.sort_unstable();
    train.sort_unstable();
    Ok((dataset.subset(&train)?, Some(dataset.subset(&hold)?)))
}

/// Maximizes `spec` over `family`, starting from the default
/// initialization.
pub fn train(
    spec: &ObjectiveSpec,
    dataset: &LoggedDataset,
    family: PolicyFamily,
    config: &TrainConfig,
) -> Result<(PolicyParams, TrainTrace)> {
    let init = PolicyParams::for_dataset(family, dataset, config.seed);
    train_from(spec, dataset, init, config)
}

/// Maximizes `spec` starting from `init`.
pub fn train_from(
    spec: &ObjectiveSpec,
    dataset: &LoggedDataset,
    init: PolicyParams,
    config: &TrainConfig,
) -> Result<(PolicyParams, TrainTrace)> {
    config.validate()?;
    let (train_set, holdout) = holdout_split(dataset, config.holdout_fraction, config.seed)?;
    let n = train_set.len();
    let batch = config.batch_size.unwrap_or(n).min(n);
    let iml_kind = scenario_iml(train_set.scenario());

    let mut params = init;
    let mut trace = TrainTrace::default();
    let mut order: Vec<usize> = (0..n).collect();
    let mut prev: Option<f64> = None;
    let mut calm = 0;

    for epoch in 0..config.max_epochs {
        let eta = config.rate(epoch);
        let last_finite = params.clone();
        let diverged = |epoch| Error::Diverged {
            epoch,
            last_finite: Box::new(last_finite.clone()),
        };
        if batch < n {
            order.sort_unstable();
            order.shuffle(&mut seed::derived_rng(config.seed, &[TAG_SHUFFLE, epoch as u64]));
        }
        for chunk in order.chunks(batch) {
            let (value, grad) = match eval_objective_on(spec, &train_set, &params, chunk) {
                Ok(v) => v,
                Err(Error::Policy(PolicyError::NonFinite(_))) => return Err(diverged(epoch)),
                Err(e) => return Err(e),
            };
            if !value.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(diverged(epoch));
            }
            for (t, g) in params.theta.iter_mut().zip(&grad) {
                *t += eta * (g - config.l2 * *t);
            }
            if !params.is_finite() {
                return Err(diverged(epoch));
            }
        }

        let (value, grad) = match eval_objective(spec, &train_set, &params) {
            Ok(v) => v,
            Err(Error::Policy(PolicyError::NonFinite(_))) => return Err(diverged(epoch)),
            Err(e) => return Err(e),
        };
        if !value.is_finite() {
            return Err(diverged(epoch));
        }
        trace.objective.push(value);
        trace.grad_norm.push(grad.iter().map(|g| g * g).sum::<f64>().sqrt());
        trace.iml_loss.push(iml_loss(&iml_kind, &train_set, &params)?);
        trace.holdout_gap.push(match &holdout {
            Some(h) if h.has_propensities() => {
                let w = WeightVector::compute(h, &params)?;
                Some(w.w.iter().map(|w| 1.0 - w).sum::<f64>() / w.len() as f64)
            }
            _ => None,
        });

        if let Some(p) = prev {
            if (value - p).abs() / p.abs().max(1.0) < config.tolerance {
                calm += 1;
            } else {
                calm = 0;
            }
        }
        prev = Some(value);
        if calm >= config.patience {
            trace.converged = true;
            break;
        }
    }
    Ok((params, trace))
}

/// Least-squares fit of rewards on the potentials of `family`, over the
/// logged (context, action) pairs. Linear-in-parameter families are solved
/// exactly; the low-rank family by alternating least squares. A ridge of
/// `1e-6` is added only when the normal equations are singular.
pub fn fit_reward_model(dataset: &LoggedDataset, family: PolicyFamily) -> Result<RewardModel> {
    let mut params = PolicyParams::for_dataset(family, dataset, 0);
    let m = params.theta.len();
    match family {
        PolicyFamily::BilinearLowRank(r) => {
            let p = params.shapes.context_dim;
            let u_block: Vec<usize> = (0..p * r).collect();
            let vw_block: Vec<usize> = (p * r..m).collect();
            let mut prev = f64::INFINITY;
            for _ in 0..200 {
                solve_block(dataset, &mut params, &vw_block)?;
                let sse = solve_block(dataset, &mut params, &u_block)?;
                if (prev - sse).abs() <= 1e-12 * prev.max(1.0) {
                    break;
                }
                prev = sse;
            }
        }
        _ => {
            let all: Vec<usize> = (0..m).collect();
            solve_block(dataset, &mut params, &all)?;
        }
    }
    Ok(RewardModel::Fitted(params))
}

/// Solves the weighted least-squares problem over the parameters in
/// `block`, holding the rest fixed; returns the residual sum of squares.
fn solve_block(dataset: &LoggedDataset, params: &mut PolicyParams, block: &[usize]) -> Result<f64> {
    let k = block.len();
    let mut xtx = DMatrix::<f64>::zeros(k, k);
    let mut xty = DVector::<f64>::zeros(k);
    let mut rows = Vec::with_capacity(dataset.len());
    for r in dataset.records() {
        let full = params.potential_grad(r, r.action)?;
        // potential of the fixed part: φ minus the block's contribution
        let phi = params.potentials(r)?[r.action];
        let block_part: f64 = block.iter().map(|&j| full[j] * params.theta[j]).sum();
        let offset = phi - block_part;
        let x: Vec<(usize, f64)> = block
            .iter()
            .enumerate()
            .filter_map(|(bi, &j)| (full[j] != 0.0).then_some((bi, full[j])))
            .collect();
        let s = r.weight();
        let y = r.reward - offset;
        for &(a, xa) in &x {
            xty[a] += s * xa * y;
            for &(b, xb) in &x {
                xtx[(a, b)] += s * xa * xb;
            }
        }
        rows.push((x, y, s));
    }
    let beta = match xtx.clone().cholesky() {
        Some(ch) => ch.solve(&xty),
        None => {
            let ridged = xtx + DMatrix::<f64>::identity(k, k) * 1e-6;
            ridged
                .cholesky()
                .ok_or_else(|| Error::Invalid("reward regression is ill-posed".into()))?
                .solve(&xty)
        }
    };
    for (bi, &j) in block.iter().enumerate() {
        params.theta[j] = beta[bi];
    }
    Ok(rows
        .iter()
        .map(|(x, y, s)| {
            let fit: f64 = x.iter().map(|(a, xa)| xa * beta[*a]).sum();
            s * (y - fit).powi(2)
        })
        .sum())
}
