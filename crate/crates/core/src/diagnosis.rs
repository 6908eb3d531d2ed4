//! Imitation-based diagnosis of hidden decision variables.
//!
//! Fitting the logging policy within a policy family leaves a residual
//! KL divergence. On tabular environments where part of the context is
//! hidden, the minimum residual equals the conditional mutual information
//! `I(a; x2 | x1)` under the logging policy, which [`mutual_info_oracle`]
//! computes exactly. [`resample_weights`] turns a fitted imitation policy
//! into per-record importance weights that remove the dependence on the
//! hidden variable.

use std::collections::BTreeMap;
use std::fmt;

use serde::Serialize;

use crate::data::{LoggedDataset, LoggingScenario, TabularEnvironment};
use crate::estimators::{propensity, require_propensities};
use crate::objectives::{iml_loss, ObjectiveSpec};
use crate::policy::{Policy, PolicyFamily, PolicyParams};
use crate::trainer::{scenario_iml, train, TrainConfig, TrainTrace};
use crate::{Error, Result};

/// Residual imitation loss above which the family is declared unable to
/// reproduce the logging policy.
pub const DEFAULT_THRESHOLD: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Verdict {
    Realizable,
    Underfit,
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Verdict::Realizable => "REALIZABLE",
            Verdict::Underfit => "UNDERFIT",
        })
    }
}

#[derive(Debug, Clone)]
pub struct DiagnosisReport {
    /// Residual imitation loss in nats.
    pub iml_loss: f64,
    pub perplexity: f64,
    pub verdict: Verdict,
    pub threshold: f64,
    /// The fitted imitation policy.
    pub policy: PolicyParams,
    pub trace: TrainTrace,
}

impl DiagnosisReport {
    pub const CSV_HEADER: &'static str = "iml_loss,perplexity,verdict,threshold";

    pub fn csv_row(&self) -> String {
        format!("{},{},{},{}", self.iml_loss, self.perplexity, self.verdict, self.threshold)
    }
}

/// Fits the scenario's imitation objective within `family` and reports the
/// residual loss. Requires logged propensities.
pub fn diagnose(
    dataset: &LoggedDataset,
    family: PolicyFamily,
    config: &TrainConfig,
    threshold: f64,
) -> Result<DiagnosisReport> {
    require_propensities(dataset)?;
    if !(threshold >= 0.0) {
        return Err(Error::arg(format!("threshold must be >= 0, got {threshold}")));
    }
    let kind = scenario_iml(dataset.scenario());
    let (policy, trace) = train(&ObjectiveSpec::new(kind.clone()), dataset, family, config)?;
    let loss = iml_loss(&kind, dataset, &policy)?;
    Ok(DiagnosisReport {
        iml_loss: loss,
        perplexity: loss.exp(),
        verdict: if loss > threshold { Verdict::Underfit } else { Verdict::Realizable },
        threshold,
        policy,
        trace,
    })
}

fn check_split(env: &TabularEnvironment, observed_of: &[usize]) -> Result<usize> {
    if observed_of.len() != env.n_contexts() {
        return Err(Error::arg(format!(
            "observed split has {} entries for {} contexts",
            observed_of.len(),
            env.n_contexts()
        )));
    }
    Ok(observed_of.iter().max().map_or(0, |m| m + 1))
}

/// `E[μ(a|x) | x1]`, indexed by observed group. `observed_of[c]` is the
/// observed group of joint context `c`.
pub fn marginalize(env: &TabularEnvironment, observed_of: &[usize]) -> Result<Vec<Vec<f64>>> {
    let groups = check_split(env, observed_of)?;
    let mut mass = vec![0.0; groups];
    let mut m = vec![vec![0.0; env.n_actions()]; groups];
    for (c, pc) in env.context_probs().iter().enumerate() {
        let g = observed_of[c];
        mass[g] += pc;
        for (a, mu) in env.logging()[c].iter().enumerate() {
            m[g][a] += pc * mu;
        }
    }
    for (row, w) in m.iter_mut().zip(&mass) {
        if *w > 0.0 {
            row.iter_mut().for_each(|v| *v /= w);
        }
    }
    Ok(m)
}

fn kl(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .filter(|(pi, _)| **pi > 0.0)
        .map(|(pi, qi)| pi * (pi / qi).ln())
        .sum()
}

fn entropy(p: &[f64]) -> f64 {
    -p.iter().filter(|v| **v > 0.0).map(|v| v * v.ln()).sum::<f64>()
}

/// Exact `I(a; x2 | x1)` under the logging policy, in nats.
pub fn mutual_info_oracle(env: &TabularEnvironment, observed_of: &[usize]) -> Result<f64> {
    let m = marginalize(env, observed_of)?;
    Ok(env
        .context_probs()
        .iter()
        .enumerate()
        .map(|(c, pc)| pc * kl(&env.logging()[c], &m[observed_of[c]]))
        .sum())
}

/// Returns `(E H(π) − E H(μ), E KL(μ‖π))` for the marginalized policy
/// `π(a|x1)`; the two agree when `marginalized` is the true
/// marginalization, which is checked to 1e-9.
pub fn entropy_increase(
    env: &TabularEnvironment,
    observed_of: &[usize],
    marginalized: &[Vec<f64>],
) -> Result<(f64, f64)> {
    let m = marginalize(env, observed_of)?;
    if marginalized.len() != m.len() {
        return Err(Error::arg(format!("expected {} marginal rows, got {}", m.len(), marginalized.len())));
    }
    for (g, (want, got)) in m.iter().zip(marginalized).enumerate() {
        if want.len() != got.len() || want.iter().zip(got).any(|(a, b)| (a - b).abs() > 1e-9) {
            return Err(Error::arg(format!("row {g} is not the marginalization of the logging policy")));
        }
    }
    let mut dh = 0.0;
    let mut gap = 0.0;
    for (c, pc) in env.context_probs().iter().enumerate() {
        let mu = &env.logging()[c];
        let pi = &marginalized[observed_of[c]];
        dh += pc * (entropy(pi) - entropy(mu));
        gap += pc * kl(mu, pi);
    }
    Ok((dh, gap))
}

/// Per-record importance ratios `π_IML(a_i|x_i) / μ_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct ResampleWeights {
    pub weights: Vec<f64>,
    /// Sample-weighted sum of the weights; equals the total sample weight
    /// in expectation.
    pub ess: f64,
    /// Sample-weighted mean weight per distinct context, keyed by the
    /// context's JSON form.
    pub per_context: BTreeMap<String, f64>,
}

pub fn resample_weights(dataset: &LoggedDataset, iml_policy: &impl Policy) -> Result<ResampleWeights> {
    require_propensities(dataset)?;
    let mut weights = Vec::with_capacity(dataset.len());
    let mut groups: BTreeMap<String, (f64, f64)> = BTreeMap::new();
    let mut ess = 0.0;
    for (i, r) in dataset.records().iter().enumerate() {
        let w = iml_policy.prob_of(r, r.action)? / propensity(r);
        if !w.is_finite() {
            return Err(Error::Invalid(format!("non-finite resample weight at record {i}")));
        }
        let key = serde_json::to_string(&r.context).expect("sparse vectors serialize");
        let e = groups.entry(key).or_default();
        e.0 += r.weight() * w;
        e.1 += r.weight();
        ess += r.weight() * w;
        weights.push(w);
    }
    Ok(ResampleWeights {
        weights,
        ess,
        per_context: groups.into_iter().map(|(k, (s, n))| (k, s / n)).collect(),
    })
}

/// The log as if collected under the imitation policy: propensities become
/// `π_IML` and sample weights are multiplied by the resample weights.
pub fn reweight(dataset: &LoggedDataset, iml_policy: &impl Policy) -> Result<LoggedDataset> {
    let rw = resample_weights(dataset, iml_policy)?;
    let mut records = Vec::with_capacity(dataset.len());
    for (r, w) in dataset.records().iter().zip(&rw.weights) {
        let mut r = r.clone();
        r.propensity = Some(iml_policy.prob_of(&r, r.action)?);
        if dataset.scenario() == LoggingScenario::Full {
            r.full_propensities = Some(iml_policy.probabilities(&r)?);
        }
        r.sample_weight = Some(r.weight() * w);
        records.push(r);
    }
    Ok(LoggedDataset::new(records, dataset.scenario())?
        .with_context_dim(dataset.context_dim())?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::TablePolicy;
    use crate::simulators::{simulate_simpson, SimpsonSpec};

    fn kidney() -> TabularEnvironment {
        SimpsonSpec::default().environment().unwrap()
    }

    #[test]
    fn kidney_mutual_information() {
        let env = kidney();
        let mi = mutual_info_oracle(&env, &[0, 0]).unwrap();
        assert!((mi - 0.1440).abs() < 5e-4, "{mi}");
        assert_eq!(mutual_info_oracle(&env, &[0, 1]).unwrap(), 0.0);
        let (dh, gap) = entropy_increase(&env, &[0, 0], &[vec![0.5, 0.5]]).unwrap();
        assert!((dh - gap).abs() < 1e-12);
        assert!((gap - mi).abs() < 1e-15);
        assert!(entropy_increase(&env, &[0, 0], &[vec![0.4, 0.6]]).is_err());
    }

    #[test]
    fn deterministic_hidden_bit_is_ln2() {
        let env = TabularEnvironment::new(
            vec![0.5, 0.5],
            vec![vec![1.0, 0.0], vec![0.0, 1.0]],
            vec![vec![0.0, 1.0], vec![1.0, 0.0]],
            1.0,
        )
        .unwrap();
        let mi = mutual_info_oracle(&env, &[0, 0]).unwrap();
        assert!((mi - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn kidney_resample_weights() {
        let d = simulate_simpson(&SimpsonSpec::default()).unwrap();
        let half = TablePolicy { probs: vec![vec![0.5, 0.5]] };
        let rw = resample_weights(&d, &half).unwrap();
        let i = d.records().iter().position(|r| r.hidden == Some(0) && r.action == 0).unwrap();
        assert!((rw.weights[i] - 0.5 / (87.0 / 357.0)).abs() < 1e-12);
        assert!((rw.weights[i] - 2.052).abs() < 1e-3);
        assert!((rw.ess - 700.0).abs() < 1e-9);
        let re = reweight(&d, &half).unwrap();
        assert!(re.records().iter().all(|r| r.propensity == Some(0.5)));
    }
}
