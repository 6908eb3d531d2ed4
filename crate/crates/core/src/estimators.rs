//! Policy value and improvement estimators over logged data.
//!
//! All estimators work from a precomputed [`WeightVector`], so the target
//! policy is evaluated once per dataset. Records may carry sample weights
//! `s_i` (see [`LoggedRecord::weight`]); every average below is the
//! weighted mean `Σ s_i z_i / Σ s_i`, which reduces to the plain mean for
//! unweighted logs.

use rayon::prelude::*;

use crate::bootstrap::quantile;
use crate::data::{LoggedDataset, LoggedRecord};
use crate::policy::{argmax, Policy, PolicyError, PolicyParams, PI_MIN};
use crate::{seed, Error, Result};

/// Two-sided 95% normal quantile.
pub const Z95: f64 = 1.959_963_984_540_054;

/// Default clipping threshold for evaluation.
pub const DEFAULT_TAU: f64 = 500.0;

/// Default upper bound on the unknown reward of unexplored mass.
pub const DEFAULT_R_MAX: f64 = 0.01;

/// Importance weights `w_i = π(a_i|x_i) / μ_i`, optionally clipped.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightVector {
    pub w: Vec<f64>,
    pub clipped_at: Option<f64>,
}

impl WeightVector {
    /// Weights of `policy` on a dataset with logged propensities.
    pub fn compute(dataset: &LoggedDataset, policy: &impl Policy) -> Result<Self> {
        require_propensities(dataset)?;
        let w = dataset
            .records()
            .par_iter()
            .map(|r| Ok(policy.prob_of(r, r.action)? / propensity(r)))
            .collect::<Result<Vec<f64>, PolicyError>>()?;
        Ok(WeightVector { w, clipped_at: None })
    }

    /// `min(w, τ)`; `τ = ∞` leaves the weights unchanged.
    pub fn clip(&self, tau: f64) -> Result<Self> {
        if !(tau > 0.0) {
            return Err(Error::arg(format!("clipping threshold must be > 0, got {tau}")));
        }
        Ok(WeightVector {
            w: self.w.iter().map(|w| w.min(tau)).collect(),
            clipped_at: Some(self.clipped_at.map_or(tau, |t| t.min(tau))),
        })
    }

    pub fn len(&self) -> usize {
        self.w.len()
    }

    pub fn is_empty(&self) -> bool {
        self.w.is_empty()
    }

    pub fn max(&self) -> f64 {
        self.w.iter().copied().fold(0.0, f64::max)
    }
}

pub(crate) fn require_propensities(dataset: &LoggedDataset) -> Result<()> {
    if dataset.has_propensities() {
        Ok(())
    } else {
        Err(Error::PropensitiesRequired(dataset.scenario()))
    }
}

pub(crate) fn propensity(r: &LoggedRecord) -> f64 {
    r.propensity.expect("propensity presence checked against the scenario")
}

/// Pointwise lower bounds `w̄ ≤ w` on importance weights.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum WeightBound {
    /// `w̄ = w`.
    Identity,
    /// `w̄ = min(w, τ)`.
    Clip(f64),
    /// `w̄ = 1 + log w` (with `π` floored at [`PI_MIN`]).
    Log,
    /// `w̄ = 1 + log w` for `w ≥ 1`, `w` otherwise.
    LogAboveOne,
}

impl WeightBound {
    /// Bounded weight for policy probability `pi` and logging probability
    /// `mu`.
    pub fn apply(self, pi: f64, mu: f64) -> f64 {
        let w = pi / mu;
        match self {
            WeightBound::Identity => w,
            WeightBound::Clip(tau) => w.min(tau),
            WeightBound::Log => 1.0 + (pi.max(PI_MIN) / mu).ln(),
            WeightBound::LogAboveOne if w >= 1.0 => 1.0 + w.ln(),
            WeightBound::LogAboveOne => w,
        }
    }
}

/// Outcome of one estimator on one (dataset, policy) pair.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimateReport {
    pub estimator: String,
    pub point: f64,
    /// Self-normalization gap `mean(1 − w̄)`.
    pub gap: f64,
    /// Estimated variance of `point`.
    pub variance: f64,
    pub ci: Option<(f64, f64)>,
    pub gap_ci: Option<(f64, f64)>,
    pub n: usize,
    pub clip_tau: Option<f64>,
    pub notes: Vec<String>,
}

impl EstimateReport {
    fn from_terms(name: &str, terms: &[f64], gaps: &[f64], sw: &[f64], clip_tau: Option<f64>) -> Self {
        let (point, variance) = weighted_mean_var(terms, sw);
        let (gap, gap_var) = weighted_mean_var(gaps, sw);
        let half = Z95 * variance.sqrt();
        let gap_half = Z95 * gap_var.sqrt();
        EstimateReport {
            estimator: name.to_string(),
            point,
            gap,
            variance,
            ci: Some((point - half, point + half)),
            gap_ci: Some((gap - gap_half, gap + gap_half)),
            n: terms.len(),
            clip_tau,
            notes: Vec::new(),
        }
    }

    pub fn std_error(&self) -> f64 {
        self.variance.sqrt()
    }
}

/// Deterministic pairwise summation.
pub fn pairwise_sum(v: &[f64]) -> f64 {
    if v.len() <= 32 {
        v.iter().sum()
    } else {
        let (a, b) = v.split_at(v.len() / 2);
        pairwise_sum(a) + pairwise_sum(b)
    }
}

/// Weighted mean of `z` and the estimated variance of that mean:
/// `Σ s (z − m)² / Σ s / (n − 1)` (the unbiased `s²/n` for unit weights).
pub fn weighted_mean_var(z: &[f64], s: &[f64]) -> (f64, f64) {
    let n = z.len();
    let total = pairwise_sum(s);
    let sz: Vec<f64> = z.iter().zip(s).map(|(z, s)| z * s).collect();
    let mean = pairwise_sum(&sz) / total;
    if n < 2 {
        return (mean, 0.0);
    }
    let dev: Vec<f64> = z.iter().zip(s).map(|(z, s)| s * (z - mean) * (z - mean)).collect();
    (mean, pairwise_sum(&dev) / total / (n as f64 - 1.0))
}

fn sample_weights(dataset: &LoggedDataset) -> Vec<f64> {
    dataset.records().iter().map(LoggedRecord::weight).collect()
}

fn check_len(dataset: &LoggedDataset, w: &WeightVector) -> Result<()> {
    if w.len() != dataset.len() {
        return Err(Error::arg(format!("{} weights for {} records", w.len(), dataset.len())));
    }
    Ok(())
}

/// IPWE from precomputed weights: `mean(w r)`, gap `mean(1 − w)`.
pub fn ipwe_with_weights(dataset: &LoggedDataset, w: &WeightVector) -> Result<EstimateReport> {
    check_len(dataset, w)?;
    let terms: Vec<f64> = w.w.iter().zip(dataset.records()).map(|(w, r)| w * r.reward).collect();
    let gaps: Vec<f64> = w.w.iter().map(|w| 1.0 - w).collect();
    let name = if w.clipped_at.is_some() { "clipped_ipwe" } else { "ipwe" };
    Ok(EstimateReport::from_terms(name, &terms, &gaps, &sample_weights(dataset), w.clipped_at))
}

/// Inverse propensity weighted estimate of the value of `policy`.
pub fn ipwe(dataset: &LoggedDataset, policy: &impl Policy) -> Result<EstimateReport> {
    ipwe_with_weights(dataset, &WeightVector::compute(dataset, policy)?)
}

/// Improvement estimate `mean((w − 1) r)` with variance `V((w−1)r)/n`.
pub fn delta_ipwe_with_weights(dataset: &LoggedDataset, w: &WeightVector) -> Result<EstimateReport> {
    check_len(dataset, w)?;
    let terms: Vec<f64> = w
        .w
        .iter()
        .zip(dataset.records())
        .map(|(w, r)| (w - 1.0) * r.reward)
        .collect();
    let gaps: Vec<f64> = w.w.iter().map(|w| 1.0 - w).collect();
    let name = if w.clipped_at.is_some() { "clipped_delta_ipwe" } else { "delta_ipwe" };
    Ok(EstimateReport::from_terms(name, &terms, &gaps, &sample_weights(dataset), w.clipped_at))
}

pub fn delta_ipwe(dataset: &LoggedDataset, policy: &impl Policy) -> Result<EstimateReport> {
    delta_ipwe_with_weights(dataset, &WeightVector::compute(dataset, policy)?)
}

/// IPWE with weights clipped at `tau`; the gap uses the clipped weights.
pub fn clipped_ipwe(dataset: &LoggedDataset, policy: &impl Policy, tau: f64) -> Result<EstimateReport> {
    ipwe_with_weights(dataset, &WeightVector::compute(dataset, policy)?.clip(tau)?)
}

/// Improvement form of [`clipped_ipwe`]: `mean((min(w, τ) − 1) r)`.
pub fn clipped_delta_ipwe(dataset: &LoggedDataset, policy: &impl Policy, tau: f64) -> Result<EstimateReport> {
    delta_ipwe_with_weights(dataset, &WeightVector::compute(dataset, policy)?.clip(tau)?)
}

/// Estimated variance of the improvement estimate, `V_μ((w−1)r)/n`.
pub fn improvement_variance(dataset: &LoggedDataset, w: &WeightVector) -> Result<f64> {
    Ok(delta_ipwe_with_weights(dataset, w)?.variance)
}

/// A reward regressor `f̂(x, a)` evaluated on every candidate.
#[derive(Debug, Clone, PartialEq)]
pub enum RewardModel {
    Zero,
    /// Predictions are the potentials `φ(x, a)` of a parameter vector, so
    /// every policy family doubles as a regression family.
    Fitted(PolicyParams),
}

impl RewardModel {
    /// Exact reward table over tabular context cells.
    pub fn table(rows: &[Vec<f64>]) -> Result<Self> {
        let mut params = PolicyParams::tabular_from_probs(rows)?;
        params.theta = rows.iter().flatten().copied().collect();
        Ok(RewardModel::Fitted(params))
    }

    pub fn predict(&self, record: &LoggedRecord) -> Result<Vec<f64>> {
        match self {
            RewardModel::Zero => Ok(vec![0.0; record.candidates.len()]),
            RewardModel::Fitted(params) => Ok(params.potentials(record)?),
        }
    }
}

/// Greedy policy over a reward model (the Q-learning baseline); ties go to
/// the lowest candidate index.
#[derive(Debug, Clone)]
pub struct QGreedy<'a>(pub &'a RewardModel);

impl Policy for QGreedy<'_> {
    fn probabilities(&self, record: &LoggedRecord) -> Result<Vec<f64>, PolicyError> {
        let q = match self.0.predict(record) {
            Ok(q) => q,
            Err(Error::Policy(e)) => return Err(e),
            Err(e) => return Err(PolicyError::Dimension(e.to_string())),
        };
        let best = argmax(&q);
        Ok((0..q.len()).map(|k| if k == best { 1.0 } else { 0.0 }).collect())
    }
}

/// Doubly robust estimate
/// `mean(w (r − f̂(x, a_i)) + Σ_a π(a|x) f̂(x, a))`.
pub fn dr(dataset: &LoggedDataset, policy: &impl Policy, model: &RewardModel) -> Result<EstimateReport> {
    dr_bounded(dataset, policy, model, WeightBound::Identity, "dr")
}

/// Lower-bounded doubly robust estimate: the weights are replaced by a
/// bound `w̄ ≤ w`, the model term uses the induced `π̄ = w̄ μ`, and the
/// nonnegative bound-error term is dropped. Needs all candidate
/// propensities and nonnegative rewards.
pub fn clipped_pil_dr(
    dataset: &LoggedDataset,
    policy: &impl Policy,
    model: &RewardModel,
    bound: WeightBound,
) -> Result<EstimateReport> {
    if let Some((i, r)) = dataset.records().iter().enumerate().find(|(_, r)| r.reward < 0.0) {
        return Err(Error::NegativeReward {
            what: "clipped_pil_dr",
            record: i,
            reward: r.reward,
        });
    }
    if bound != WeightBound::Identity && dataset.records().iter().any(|r| r.full_propensities.is_none()) {
        return Err(Error::FullPropensitiesRequired(dataset.scenario()));
    }
    dr_bounded(dataset, policy, model, bound, "clipped_pil_dr")
}

fn dr_bounded(
    dataset: &LoggedDataset,
    policy: &impl Policy,
    model: &RewardModel,
    bound: WeightBound,
    name: &str,
) -> Result<EstimateReport> {
    require_propensities(dataset)?;
    let per_record = dataset
        .records()
        .par_iter()
        .map(|r| -> Result<(f64, f64)> {
            let pi = policy.probabilities(r)?;
            let f = model.predict(r)?;
            let mu = propensity(r);
            let wbar = bound.apply(pi[r.action], mu);
            let direct: f64 = match bound {
                WeightBound::Identity => pi.iter().zip(&f).map(|(p, f)| p * f).sum(),
                _ => {
                    let all = r.full_propensities.as_ref().expect("checked by caller");
                    all.iter()
                        .zip(&pi)
                        .zip(&f)
                        .filter(|((m, _), _)| **m > 0.0)
                        .map(|((m, p), f)| bound.apply(*p, *m) * m * f)
                        .sum()
                }
            };
            Ok((wbar * (r.reward - f[r.action]) + direct, 1.0 - wbar))
        })
        .collect::<Result<Vec<_>>>()?;
    let (terms, gaps): (Vec<f64>, Vec<f64>) = per_record.into_iter().unzip();
    let clip = match bound {
        WeightBound::Clip(t) => Some(t),
        _ => None,
    };
    Ok(EstimateReport::from_terms(name, &terms, &gaps, &sample_weights(dataset), clip))
}

/// Result of the paired comparison estimator.
#[derive(Debug, Clone, PartialEq)]
pub struct PairedDelta {
    /// `mean(d_i r_i)`.
    pub term1: f64,
    /// `mean(d_i)`, the coefficient of the unknown reward level `R`.
    pub term2: f64,
    /// Percentile bootstrap interval of `term1`.
    pub term1_ci: (f64, f64),
    /// `term1_ci` widened by sweeping `R` over `(0, R_max)`.
    pub interval: (f64, f64),
}

/// Paired improvement of `pi` over `mu_hat` with
/// `d_i = clip((π_i − μ̂_i)/μ_i, −τ, τ)`.
pub fn paired_delta(
    dataset: &LoggedDataset,
    pi: &impl Policy,
    mu_hat: &impl Policy,
    tau: f64,
    r_max: f64,
    replicates: usize,
    seed: u64,
) -> Result<PairedDelta> {
    require_propensities(dataset)?;
    if !(tau >= 0.0) {
        return Err(Error::arg(format!("tau must be >= 0, got {tau}")));
    }
    if !(r_max > 0.0) {
        return Err(Error::arg(format!("R_max must be > 0, got {r_max}")));
    }
    if replicates == 0 {
        return Err(Error::arg("bootstrap replicates must be >= 1"));
    }
    let d = dataset
        .records()
        .par_iter()
        .map(|r| -> Result<f64> {
            let diff = pi.prob_of(r, r.action)? - mu_hat.prob_of(r, r.action)?;
            Ok((diff / propensity(r)).clamp(-tau, tau))
        })
        .collect::<Result<Vec<f64>>>()?;
    let sw = sample_weights(dataset);
    let dr: Vec<f64> = d.iter().zip(dataset.records()).map(|(d, r)| d * r.reward).collect();
    let (term1, _) = weighted_mean_var(&dr, &sw);
    let (term2, _) = weighted_mean_var(&d, &sw);

    let n = dr.len();
    let mut stats: Vec<f64> = (0..replicates)
        .into_par_iter()
        .map(|k| {
            let mut rng = seed::derived_rng(seed, &[k as u64]);
            let (mut num, mut den) = (0.0, 0.0);
            for _ in 0..n {
                let i = rand::Rng::random_range(&mut rng, 0..n);
                num += sw[i] * dr[i];
                den += sw[i];
            }
            if den > 0.0 {
                num / den
            } else {
                0.0
            }
        })
        .collect();
    stats.sort_by(f64::total_cmp);
    let term1_ci = (quantile(&stats, 0.025), quantile(&stats, 0.975));
    let sweep = term2 * r_max;
    Ok(PairedDelta {
        term1,
        term2,
        term1_ci,
        interval: (term1_ci.0 + sweep.min(0.0), term1_ci.1 + sweep.max(0.0)),
    })
}

/// `IPWE + Gap·R` for `0 < R < R_max`, widened side by side with the sign
/// of the gap (the gap interval when available).
pub fn combined_offline_estimate(report: &EstimateReport, r_max: f64) -> Result<(f64, f64)> {
    let (lo, hi) = report
        .ci
        .ok_or_else(|| Error::arg(format!("{} report has no confidence interval", report.estimator)))?;
    if !(r_max > 0.0) {
        return Err(Error::arg(format!("R_max must be > 0, got {r_max}")));
    }
    let (g_lo, g_hi) = report.gap_ci.unwrap_or((report.gap, report.gap));
    Ok((lo + (g_lo * r_max).min(0.0), hi + (g_hi * r_max).max(0.0)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{LoggingScenario, SparseVector};
    use crate::policy::{ConstantPolicy, LoggingPolicy, TablePolicy};

    fn two_arm(rows: &[(usize, f64, f64)]) -> LoggedDataset {
        let recs = rows
            .iter()
            .map(|&(a, p, r)| {
                let all = if a == 0 { vec![p, 1.0 - p] } else { vec![1.0 - p, p] };
                LoggedRecord::with_ids(SparseVector::default(), &["A", "B"], a, r).with_full_propensities(all)
            })
            .collect();
        LoggedDataset::new(recs, LoggingScenario::Full).unwrap()
    }

    #[test]
    fn logging_policy_has_zero_gap() {
        let d = two_arm(&[(0, 0.3, 1.0), (1, 0.7, 0.5), (1, 0.7, 0.0)]);
        let rep = ipwe(&d, &LoggingPolicy).unwrap();
        assert_eq!(rep.gap, 0.0);
        assert!((rep.point - 0.5).abs() < 1e-15);
        let delta = delta_ipwe(&d, &LoggingPolicy).unwrap();
        assert_eq!(delta.point, 0.0);
        assert_eq!(delta.variance, 0.0);
    }

    #[test]
    fn single_rare_success_blows_up() {
        let mut rows = vec![(1, 0.99, 0.0); 99];
        rows.insert(0, (0, 0.01, 1.0));
        let d = two_arm(&rows);
        let rep = ipwe(&d, &ConstantPolicy { id: "A".into() }).unwrap();
        assert!((rep.point - 1.0).abs() < 1e-12);
    }

    #[test]
    fn missing_scenario_is_rejected() {
        let d = two_arm(&[(0, 0.5, 1.0)]).without_propensities();
        let err = ipwe(&d, &LoggingPolicy).unwrap_err();
        assert!(err.to_string().starts_with("propensities required"), "{err}");
    }

    #[test]
    fn clipping_caps_contributions() {
        let d = two_arm(&[(0, 1.0 / 4.9e4, 1.0), (1, 0.5, 1.0), (1, 0.5, 0.0), (1, 0.5, 1.0)]);
        let pol = ConstantPolicy { id: "A".into() };
        let raw = ipwe(&d, &pol).unwrap();
        let clipped = clipped_ipwe(&d, &pol, 500.0).unwrap();
        assert!((raw.point - 4.9e4 / 4.0).abs() < 1e-6);
        assert!((clipped.point - 500.0 / 4.0).abs() < 1e-12);
        assert_eq!(clipped.clip_tau, Some(500.0));
        let inf = clipped_delta_ipwe(&d, &pol, f64::INFINITY).unwrap();
        let delta = delta_ipwe(&d, &pol).unwrap();
        assert_eq!(inf.point, delta.point);
        assert!(clipped_ipwe(&d, &pol, 0.0).is_err());
    }

    #[test]
    fn dr_with_zero_model_is_ipwe() {
        let d = two_arm(&[(0, 0.3, 1.0), (1, 0.7, 0.5), (0, 0.3, 0.0)]);
        let pol = TablePolicy { probs: vec![vec![0.8, 0.2]] };
        let a = dr(&d, &pol, &RewardModel::Zero).unwrap();
        let b = ipwe(&d, &pol).unwrap();
        assert!((a.point - b.point).abs() < 1e-15);
        let c = clipped_pil_dr(&d, &pol, &RewardModel::Zero, WeightBound::Identity).unwrap();
        assert_eq!(a.point, c.point);
    }

    #[test]
    fn paired_delta_degenerate_cases() {
        let d = two_arm(&[(0, 0.3, 1.0), (1, 0.7, 0.5), (0, 0.3, 0.0)]);
        let pol = TablePolicy { probs: vec![vec![0.8, 0.2]] };
        let same = paired_delta(&d, &pol, &pol, 500.0, 0.01, 200, 1).unwrap();
        assert_eq!(same.interval, (0.0, 0.0));
        let zero_tau = paired_delta(&d, &pol, &LoggingPolicy, 0.0, 0.01, 200, 1).unwrap();
        assert_eq!((zero_tau.term1, zero_tau.term2), (0.0, 0.0));
    }

    #[test]
    fn combined_estimate_sign_logic() {
        let mut rep = EstimateReport {
            estimator: "ipwe".into(),
            point: 43.2e-4,
            gap: 0.0,
            variance: 0.0,
            ci: Some((41.8e-4, 44.6e-4)),
            gap_ci: None,
            n: 1,
            clip_tau: Some(500.0),
            notes: vec![],
        };
        assert_eq!(combined_offline_estimate(&rep, 0.01).unwrap(), (41.8e-4, 44.6e-4));
        rep.gap_ci = Some((0.07, 0.08));
        let (lo, hi) = combined_offline_estimate(&rep, 0.01).unwrap();
        assert!((lo - 41.8e-4).abs() < 1e-15 && (hi - 52.6e-4).abs() < 1e-12);
        rep.gap_ci = None;
        rep.gap = -0.3;
        let (lo, hi) = combined_offline_estimate(&rep, 0.01).unwrap();
        assert!((lo - (41.8e-4 - 0.003)).abs() < 1e-15);
        assert_eq!(hi, 44.6e-4);
        rep.ci = None;
        assert!(combined_offline_estimate(&rep, 0.01).is_err());
    }

    #[test]
    fn pairwise_sum_matches_naive() {
        let v: Vec<f64> = (0..1000).map(|i| i as f64 * 0.5).collect();
        assert_eq!(pairwise_sum(&v), 249750.0);
    }
}
