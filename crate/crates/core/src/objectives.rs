//! Differentiable training objectives.
//!
//! Every objective is returned in the maximization convention: larger is
//! better, and imitation losses enter with a minus sign. Gradients are
//! exact and flow through [`PolicyParams::accumulate_score_grad`]: each
//! record contributes `Σ_k c_k ∇ log π(a_k|x)` for objective-specific
//! coefficients `c_k`.
//!
//! Per-record terms, with `w = π(a_i|x_i)/μ_i`:
//!
//! | kind         | term                                            |
//! |--------------|-------------------------------------------------|
//! | `IpweRaw`    | `(w − 1) r`                                     |
//! | `IpweClipped`| `(min(w, τ) − 1) r`                             |
//! | `PilMu`      | `r log w` if `w ≥ 1`, else `r (w − 1)`          |
//! | `PilEmpty`   | `r log w` (`r log π` without propensities)      |
//! | `CeWeighted` | `r log π`                                       |
//! | `ImlFull`    | `Σ_a μ(a|x) log w(a|x)`                         |
//! | `ImlPart`    | `log w`                                         |
//! | `ImlMiss`    | `log π`                                         |
//!
//! Logarithms of `π` use the floor [`PI_MIN`]; where the floor is active
//! the term is constant in the parameters.

use crate::data::{LoggedDataset, LoggedRecord, LoggingScenario};
use crate::estimators::{pairwise_sum, RewardModel, WeightBound};
use crate::policy::{Policy, PolicyParams, PI_MIN};
use crate::{Error, Result};

/// Default imitation weight.
pub const DEFAULT_EPSILON: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq)]
pub enum ObjectiveKind {
    IpweRaw,
    IpweClipped(f64),
    PilMu,
    PilEmpty,
    CeWeighted,
    ImlFull,
    ImlPart,
    ImlMiss,
    /// `PIL + ε IML`; the variants are chosen from the logging scenario
    /// (`PilEmpty`/`ImlMiss`, `PilMu`/`ImlPart`, `PilMu`/`ImlFull`).
    PilIml(f64),
    /// `ΔIPWE − α √(s²/n)` with the unbiased sample variance `s²`.
    Poem(f64),
    /// Doubly robust value.
    DrObj(RewardModel),
    /// Lower-bounded doubly robust value minus `ε IML_full`.
    PilDr {
        model: RewardModel,
        epsilon: f64,
        bound: WeightBound,
    },
}

/// What a kind needs from the logging record.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Requirement {
    Nothing,
    Propensity,
    FullPropensities,
}

impl ObjectiveKind {
    pub fn requirement(&self) -> Requirement {
        match self {
            ObjectiveKind::PilEmpty | ObjectiveKind::CeWeighted | ObjectiveKind::ImlMiss | ObjectiveKind::PilIml(_) => {
                Requirement::Nothing
            }
            ObjectiveKind::ImlFull | ObjectiveKind::PilDr { .. } => Requirement::FullPropensities,
            _ => Requirement::Propensity,
        }
    }

    pub fn name(&self) -> String {
        match self {
            ObjectiveKind::IpweRaw => "ipwe".into(),
            ObjectiveKind::IpweClipped(t) => format!("ipwe-clipped:{t}"),
            ObjectiveKind::PilMu => "pil-mu".into(),
            ObjectiveKind::PilEmpty => "pil-empty".into(),
            ObjectiveKind::CeWeighted => "ce".into(),
            ObjectiveKind::ImlFull => "iml-full".into(),
            ObjectiveKind::ImlPart => "iml-part".into(),
            ObjectiveKind::ImlMiss => "iml-miss".into(),
            ObjectiveKind::PilIml(e) => format!("pil-iml:{e}"),
            ObjectiveKind::Poem(a) => format!("poem:{a}"),
            ObjectiveKind::DrObj(_) => "dr".into(),
            ObjectiveKind::PilDr { epsilon, .. } => format!("pil-dr:{epsilon}"),
        }
    }

    fn validate(&self) -> Result<()> {
        let bad = |what: &str, v: f64| Error::arg(format!("{what} must be finite and >= 0, got {v}"));
        match self {
            ObjectiveKind::IpweClipped(t) if !(*t > 0.0) => Err(Error::arg(format!("tau must be > 0, got {t}"))),
            ObjectiveKind::PilIml(e) | ObjectiveKind::PilDr { epsilon: e, .. } if !(e.is_finite() && *e >= 0.0) => {
                Err(bad("epsilon", *e))
            }
            ObjectiveKind::Poem(a) if !(a.is_finite() && *a >= 0.0) => Err(bad("alpha", *a)),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObjectiveSpec {
    pub kind: ObjectiveKind,
    /// Penalty `l2/2 ‖θ‖²` subtracted from the value.
    pub l2: f64,
}

impl ObjectiveSpec {
    pub fn new(kind: ObjectiveKind) -> Self {
        ObjectiveSpec { kind, l2: 0.0 }
    }

    pub fn with_l2(mut self, l2: f64) -> Self {
        self.l2 = l2;
        self
    }
}

impl From<ObjectiveKind> for ObjectiveSpec {
    fn from(kind: ObjectiveKind) -> Self {
        ObjectiveSpec::new(kind)
    }
}

fn check_scenario(req: Requirement, dataset: &LoggedDataset) -> Result<()> {
    match (req, dataset.scenario()) {
        (Requirement::Nothing, _) => Ok(()),
        (Requirement::Propensity, LoggingScenario::Missing) => Err(Error::PropensitiesRequired(dataset.scenario())),
        (Requirement::FullPropensities, s) if s != LoggingScenario::Full => Err(Error::FullPropensitiesRequired(s)),
        _ => Ok(()),
    }
}

/// `log max(p, π_min)` and its derivative with respect to `log p`.
fn floored_log(p: f64) -> (f64, f64) {
    if p >= PI_MIN {
        (p.ln(), 1.0)
    } else {
        (PI_MIN.ln(), 0.0)
    }
}

/// Derivative of a bounded weight with respect to `log π`.
fn bound_dlog(bound: WeightBound, pi: f64, mu: f64) -> f64 {
    let w = pi / mu;
    match bound {
        WeightBound::Identity => w,
        WeightBound::Clip(tau) if w < tau => w,
        WeightBound::Clip(_) => 0.0,
        WeightBound::Log => floored_log(pi).1,
        WeightBound::LogAboveOne if w >= 1.0 => 1.0,
        WeightBound::LogAboveOne => w,
    }
}

/// Resolved per-record term, with scenario-dependent kinds expanded.
#[derive(Debug, Clone, Copy)]
enum Term<'a> {
    Ipwe(Option<f64>),
    PilMu,
    /// Reward-weighted `log π`, plus `−r log μ` when `with_mu`.
    PilEmpty { with_mu: bool },
    ImlFull,
    ImlPart,
    ImlMiss,
    Dr(&'a RewardModel, WeightBound),
}

/// Value and `∇ log π` coefficients of one record's term.
fn record_term(term: Term<'_>, r: &LoggedRecord, probs: &[f64], coefs: &mut [f64]) -> Result<f64> {
    let a = r.action;
    let pi = probs[a];
    let mu = || r.propensity.expect("scenario checked");
    let reward = r.reward;
    Ok(match term {
        Term::Ipwe(tau) => {
            let w = pi / mu();
            let clipped = tau.is_some_and(|t| w >= t);
            let wbar = tau.map_or(w, |t| w.min(t));
            if !clipped {
                coefs[a] += w * reward;
            }
            (wbar - 1.0) * reward
        }
        Term::PilMu => {
            let w = pi / mu();
            if w >= 1.0 {
                let (lp, d) = floored_log(pi);
                coefs[a] += reward * d;
                reward * (lp - mu().ln())
            } else {
                coefs[a] += reward * w;
                reward * (w - 1.0)
            }
        }
        Term::PilEmpty { with_mu } => {
            let (lp, d) = floored_log(pi);
            coefs[a] += reward * d;
            if with_mu {
                reward * (lp - mu().ln())
            } else {
                reward * lp
            }
        }
        Term::ImlPart => {
            let (lp, d) = floored_log(pi);
            coefs[a] += d;
            lp - mu().ln()
        }
        Term::ImlMiss => {
            let (lp, d) = floored_log(pi);
            coefs[a] += d;
            lp
        }
        Term::ImlFull => {
            let all = r.full_propensities.as_ref().expect("scenario checked");
            let mut v = 0.0;
            for (k, (m, p)) in all.iter().zip(probs).enumerate() {
                if *m > 0.0 {
                    let (lp, d) = floored_log(*p);
                    coefs[k] += m * d;
                    v += m * (lp - m.ln());
                }
            }
            v
        }
        Term::Dr(model, bound) => {
            let f = model.predict(r)?;
            let m = mu();
            let mut v = bound.apply(pi, m) * (reward - f[a]);
            coefs[a] += bound_dlog(bound, pi, m) * (reward - f[a]);
            match bound {
                WeightBound::Identity => {
                    for (k, (p, fk)) in probs.iter().zip(&f).enumerate() {
                        v += p * fk;
                        coefs[k] += p * fk;
                    }
                }
                _ => {
                    let all = r.full_propensities.as_ref().expect("scenario checked");
                    for (k, ((mk, p), fk)) in all.iter().zip(probs).zip(&f).enumerate() {
                        if *mk > 0.0 {
                            v += bound.apply(*p, *mk) * mk * fk;
                            coefs[k] += bound_dlog(bound, *p, *mk) * mk * fk;
                        }
                    }
                }
            }
            v
        }
    })
}

/// Weighted sum of `scale ×` resolved terms, as `(value, grad)` over the
/// selected records.
struct Accumulator<'a> {
    params: &'a PolicyParams,
    value: f64,
    grad: Vec<f64>,
}

impl<'a> Accumulator<'a> {
    fn new(params: &'a PolicyParams) -> Self {
        Accumulator {
            params,
            value: 0.0,
            grad: vec![0.0; params.theta.len()],
        }
    }
}

fn scenario_terms(kind: &ObjectiveKind, scenario: LoggingScenario) -> Vec<(Term<'_>, f64)> {
    let with_mu = scenario.has_propensities();
    match kind {
        ObjectiveKind::IpweRaw | ObjectiveKind::Poem(_) => vec![(Term::Ipwe(None), 1.0)],
        ObjectiveKind::IpweClipped(t) => vec![(Term::Ipwe(Some(*t)), 1.0)],
        ObjectiveKind::PilMu => vec![(Term::PilMu, 1.0)],
        ObjectiveKind::PilEmpty => vec![(Term::PilEmpty { with_mu }, 1.0)],
        ObjectiveKind::CeWeighted => vec![(Term::PilEmpty { with_mu: false }, 1.0)],
        ObjectiveKind::ImlFull => vec![(Term::ImlFull, 1.0)],
        ObjectiveKind::ImlPart => vec![(Term::ImlPart, 1.0)],
        ObjectiveKind::ImlMiss => vec![(Term::ImlMiss, 1.0)],
        ObjectiveKind::PilIml(eps) => match scenario {
            LoggingScenario::Missing => vec![(Term::PilEmpty { with_mu: false }, 1.0), (Term::ImlMiss, *eps)],
            LoggingScenario::Partial => vec![(Term::PilMu, 1.0), (Term::ImlPart, *eps)],
            LoggingScenario::Full => vec![(Term::PilMu, 1.0), (Term::ImlFull, *eps)],
        },
        ObjectiveKind::DrObj(model) => vec![(Term::Dr(model, WeightBound::Identity), 1.0)],
        ObjectiveKind::PilDr { model, epsilon, bound } => {
            vec![(Term::Dr(model, *bound), 1.0), (Term::ImlFull, *epsilon)]
        }
    }
}

/// Value and gradient of `spec` on the whole dataset.
pub fn eval_objective(spec: &ObjectiveSpec, dataset: &LoggedDataset, params: &PolicyParams) -> Result<(f64, Vec<f64>)> {
    let all: Vec<usize> = (0..dataset.len()).collect();
    eval_objective_on(spec, dataset, params, &all)
}

/// Value and gradient of `spec` on the records at `indices` (a minibatch).
pub fn eval_objective_on(
    spec: &ObjectiveSpec,
    dataset: &LoggedDataset,
    params: &PolicyParams,
    indices: &[usize],
) -> Result<(f64, Vec<f64>)> {
    spec.kind.validate()?;
    if !(spec.l2.is_finite() && spec.l2 >= 0.0) {
        return Err(Error::arg(format!("l2 must be finite and >= 0, got {}", spec.l2)));
    }
    check_scenario(spec.kind.requirement(), dataset)?;
    if indices.is_empty() {
        return Err(Error::arg("objective over an empty batch"));
    }
    let records = dataset.records();
    let total: f64 = indices.iter().map(|&i| records[i].weight()).sum();
    if !(total > 0.0) {
        return Err(Error::arg("batch has zero total sample weight"));
    }
    let terms = scenario_terms(&spec.kind, dataset.scenario());

    let mut acc = Accumulator::new(params);
    let mut values = Vec::with_capacity(indices.len());
    let mut poem_terms = Vec::new();
    for &i in indices {
        let r = &records[i];
        let probs = params.score(r)?.probs();
        let mut z_total = 0.0;
        let mut coefs_total = vec![0.0; probs.len()];
        for &(term, factor) in &terms {
            let mut coefs = vec![0.0; probs.len()];
            // imitation terms are `−loss`, so `+ε·term` subtracts the loss
            let z = record_term(term, r, &probs, &mut coefs)?;
            z_total += factor * z;
            for (c, d) in coefs_total.iter_mut().zip(&coefs) {
                *c += factor * d;
            }
        }
        let s = r.weight() / total;
        values.push(s * z_total);
        acc.params.accumulate_score_grad(r, &probs, &coefs_total, s, &mut acc.grad)?;
        if matches!(spec.kind, ObjectiveKind::Poem(_)) {
            poem_terms.push((i, z_total, probs, coefs_total));
        }
    }
    acc.value = pairwise_sum(&values);

    if let ObjectiveKind::Poem(alpha) = spec.kind {
        poem_penalty(alpha, records, total, &poem_terms, &mut acc)?;
    }

    if spec.l2 > 0.0 {
        let sq: f64 = params.theta.iter().map(|t| t * t).sum();
        acc.value -= 0.5 * spec.l2 * sq;
        for (g, t) in acc.grad.iter_mut().zip(&params.theta) {
            *g -= spec.l2 * t;
        }
    }
    Ok((acc.value, acc.grad))
}

/// Subtracts `α √V` with `V = Σ s (z − m)² / S / (n − 1)`.
fn poem_penalty(
    alpha: f64,
    records: &[LoggedRecord],
    total: f64,
    terms: &[(usize, f64, Vec<f64>, Vec<f64>)],
    acc: &mut Accumulator<'_>,
) -> Result<()> {
    let n = terms.len();
    if alpha == 0.0 || n < 2 {
        return Ok(());
    }
    let mean = acc.value;
    let var: f64 = terms
        .iter()
        .map(|(i, z, _, _)| records[*i].weight() * (z - mean).powi(2))
        .sum::<f64>()
        / total
        / (n as f64 - 1.0);
    acc.value -= alpha * var.sqrt();
    if var == 0.0 {
        return Ok(());
    }
    // ∇V = 2 Σ s (z − m) ∇z / S / (n − 1); the ∇m part sums to zero
    let k = alpha / (2.0 * var.sqrt()) * 2.0 / total / (n as f64 - 1.0);
    for (i, z, probs, coefs) in terms {
        let r = &records[*i];
        let scale = -k * r.weight() * (z - mean);
        acc.params.accumulate_score_grad(r, probs, coefs, scale, &mut acc.grad)?;
    }
    Ok(())
}

/// Imitation loss (a KL estimate in nats, smaller is better) of any policy.
/// `kind` must be `ImlFull`, `ImlPart` or `ImlMiss`.
pub fn iml_loss(kind: &ObjectiveKind, dataset: &LoggedDataset, policy: &impl Policy) -> Result<f64> {
    let term = match kind {
        ObjectiveKind::ImlFull => Term::ImlFull,
        ObjectiveKind::ImlPart => Term::ImlPart,
        ObjectiveKind::ImlMiss => Term::ImlMiss,
        other => return Err(Error::arg(format!("{} is not an imitation loss", other.name()))),
    };
    check_scenario(kind.requirement(), dataset)?;
    mean_term(dataset, policy, term).map(|v| -v)
}

/// Reward-weighted cross-entropy `CE(π; r) = −mean(r log π)`, or the
/// unweighted `CE(π; 1)` when `reward_weighted` is false.
pub fn cross_entropy(dataset: &LoggedDataset, policy: &impl Policy, reward_weighted: bool) -> Result<f64> {
    if reward_weighted {
        mean_term(dataset, policy, Term::PilEmpty { with_mu: false }).map(|v| -v)
    } else {
        mean_term(dataset, policy, Term::ImlMiss).map(|v| -v)
    }
}

/// Cross-entropy of the logging propensities, `−mean(r log μ)` (or
/// `−mean(log μ)` unweighted).
pub fn logging_cross_entropy(dataset: &LoggedDataset, reward_weighted: bool) -> Result<f64> {
    check_scenario(Requirement::Propensity, dataset)?;
    let total = dataset.total_weight();
    let terms: Vec<f64> = dataset
        .records()
        .iter()
        .map(|r| {
            let f = if reward_weighted { r.reward } else { 1.0 };
            -r.weight() * f * r.propensity.expect("scenario checked").ln()
        })
        .collect();
    Ok(pairwise_sum(&terms) / total)
}

/// Value (maximization convention) of any non-POEM objective for an
/// arbitrary policy; `l2` is not applied.
pub fn objective_value(kind: &ObjectiveKind, dataset: &LoggedDataset, policy: &impl Policy) -> Result<f64> {
    check_scenario(kind.requirement(), dataset)?;
    let terms = scenario_terms(kind, dataset.scenario());
    if matches!(kind, ObjectiveKind::Poem(_)) {
        return Err(Error::arg("POEM values need a parametric policy; use eval_objective"));
    }
    let mut v = 0.0;
    for (term, factor) in terms {
        v += factor * mean_term(dataset, policy, term)?;
    }
    Ok(v)
}

fn mean_term(dataset: &LoggedDataset, policy: &impl Policy, term: Term<'_>) -> Result<f64> {
    let total = dataset.total_weight();
    let mut terms = Vec::with_capacity(dataset.len());
    for r in dataset.records() {
        let probs = policy.probabilities(r)?;
        let mut scratch = vec![0.0; probs.len()];
        terms.push(r.weight() * record_term(term, r, &probs, &mut scratch)?);
    }
    Ok(pairwise_sum(&terms) / total)
}
