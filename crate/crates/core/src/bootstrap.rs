//! Subsampling bootstrap for statistics with unknown convergence rate.
//!
//! Assume `n^β (T_n − θ)` has a limiting distribution. For each subsample
//! size `b` we draw `K` subsamples, compute the statistic on each and
//! record the deviations `Q_q(S_b) − T_n` of its lower and upper quantiles.
//! Those deviations shrink like `b^{−β}`, so regressing `log |dev|` on
//! `log b` gives `−β` per side; the interval at the full sample size is
//! extrapolated from the largest subsample.

use rand::seq::index;
use rand::Rng;
use rayon::prelude::*;

use crate::data::LoggedDataset;
use crate::estimators::{require_propensities, WeightVector};
use crate::policy::Policy;
use crate::{seed, Error, Result};

/// Rates at or below this are reported as non-convergent.
pub const NON_CONVERGENT_BETA: f64 = 0.1;

#[derive(Debug, Clone, PartialEq)]
pub struct BootstrapConfig {
    /// Subsample sizes; `None` uses [`default_sizes`].
    pub sizes: Option<Vec<usize>>,
    pub replicates: usize,
    pub quantiles: (f64, f64),
    pub seed: u64,
    pub with_replacement: bool,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        BootstrapConfig {
            sizes: None,
            replicates: 10_000,
            quantiles: (0.025, 0.975),
            seed: 0,
            with_replacement: true,
        }
    }
}

/// Six sizes log-spaced from `n^0.5` to `n^0.75`.
pub fn default_sizes(n: usize) -> Vec<usize> {
    let (lo, hi) = ((n as f64).powf(0.5).ln(), (n as f64).powf(0.75).ln());
    let mut sizes: Vec<usize> = (0..6)
        .map(|i| (lo + (hi - lo) * i as f64 / 5.0).exp().round().max(1.0) as usize)
        .collect();
    sizes.dedup();
    sizes
}

/// Regression of `log |dev|` on `log b` for one quantile side.
#[derive(Debug, Clone, PartialEq)]
pub struct SideFit {
    /// Signed deviations `Q_q(S_b) − T_n`, one per size.
    pub deviations: Vec<f64>,
    /// `−slope`; `None` when fewer than two sizes have nonzero deviation.
    pub beta: Option<f64>,
    pub intercept: Option<f64>,
    pub r2: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BootstrapFlag {
    /// The statistic did not vary across subsamples.
    Degenerate,
    /// Fitted rate at or below [`NON_CONVERGENT_BETA`].
    NonConvergent,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BootstrapResult {
    /// Statistic on the full sample.
    pub t_n: f64,
    pub n: usize,
    pub sizes: Vec<usize>,
    pub quantiles: (f64, f64),
    pub lower: SideFit,
    pub upper: SideFit,
    /// Rate of the side with the larger deviation at the largest size.
    pub beta: Option<f64>,
    pub ci: (f64, f64),
    pub flags: Vec<BootstrapFlag>,
}

impl BootstrapResult {
    pub fn is_flagged(&self, flag: BootstrapFlag) -> bool {
        self.flags.contains(&flag)
    }
}

/// Quantile of sorted data with linear interpolation between order
/// statistics.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of empty data");
    let h = (sorted.len() - 1) as f64 * q.clamp(0.0, 1.0);
    let (i, frac) = (h.floor() as usize, h - h.floor());
    if i + 1 < sorted.len() {
        sorted[i] + frac * (sorted[i + 1] - sorted[i])
    } else {
        sorted[i]
    }
}

/// Least-squares fit `y = a + s x`, returning `(s, a, r²)`.
pub fn linear_fit(x: &[f64], y: &[f64]) -> Option<(f64, f64, f64)> {
    let n = x.len() as f64;
    if x.len() < 2 {
        return None;
    }
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let syy: f64 = y.iter().map(|v| (v - my).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let slope = sxy / sxx;
    let r2 = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    Some((slope, my - slope * mx, r2))
}

fn fit_side(sizes: &[usize], deviations: Vec<f64>) -> SideFit {
    let (x, y): (Vec<f64>, Vec<f64>) = sizes
        .iter()
        .zip(&deviations)
        .filter(|(_, d)| **d != 0.0)
        .map(|(b, d)| ((*b as f64).ln(), d.abs().ln()))
        .unzip();
    match linear_fit(&x, &y) {
        Some((slope, intercept, r2)) => SideFit {
            deviations,
            beta: Some(-slope),
            intercept: Some(intercept),
            r2: Some(r2),
        },
        None => SideFit {
            deviations,
            beta: None,
            intercept: None,
            r2: None,
        },
    }
}

/// Runs the subsampling bootstrap of `statistic` over `data`.
pub fn subsample_ci<T, F>(statistic: F, data: &[T], config: &BootstrapConfig) -> Result<BootstrapResult>
where
    T: Clone + Send + Sync,
    F: Fn(&[T]) -> f64 + Sync,
{
    let n = data.len();
    if n == 0 {
        return Err(Error::arg("bootstrap of an empty sample"));
    }
    if config.replicates < 100 {
        return Err(Error::arg(format!("need at least 100 replicates, got {}", config.replicates)));
    }
    let (q_lo, q_hi) = config.quantiles;
    if !(q_lo > 0.0 && q_lo < q_hi && q_hi < 1.0) {
        return Err(Error::arg(format!("quantiles must satisfy 0 < lo < hi < 1, got ({q_lo}, {q_hi})")));
    }
    let sizes = config.sizes.clone().unwrap_or_else(|| default_sizes(n));
    if sizes.is_empty() || sizes.iter().any(|&b| b == 0 || b > n) {
        return Err(Error::arg(format!("subsample sizes must lie in [1, {n}]")));
    }
    let t_n = statistic(data);
    if !t_n.is_finite() {
        return Err(Error::Invalid("statistic is not finite on the full sample".into()));
    }

    let mut lower = Vec::with_capacity(sizes.len());
    let mut upper = Vec::with_capacity(sizes.len());
    for &b in &sizes {
        let mut stats: Vec<f64> = (0..config.replicates)
            .into_par_iter()
            .map_init(
                || Vec::with_capacity(b),
                |buf, k| {
                    let mut rng = seed::derived_rng(config.seed, &[b as u64, k as u64]);
                    buf.clear();
                    if config.with_replacement {
                        buf.extend((0..b).map(|_| data[rng.random_range(0..n)].clone()));
                    } else {
                        buf.extend(index::sample(&mut rng, n, b).into_iter().map(|i| data[i].clone()));
                    }
                    statistic(buf)
                },
            )
            .collect();
        if stats.iter().any(|s| !s.is_finite()) {
            return Err(Error::Invalid(format!("statistic is not finite on a subsample of size {b}")));
        }
        stats.sort_by(f64::total_cmp);
        lower.push(quantile(&stats, q_lo) - t_n);
        upper.push(quantile(&stats, q_hi) - t_n);
    }

    let lower = fit_side(&sizes, lower);
    let upper = fit_side(&sizes, upper);
    let last = sizes.len() - 1;
    let (dominant, other) = if lower.deviations[last].abs() >= upper.deviations[last].abs() {
        (&lower, &upper)
    } else {
        (&upper, &lower)
    };
    let beta = dominant.beta.or(other.beta);

    let mut flags = Vec::new();
    if lower.deviations.iter().chain(&upper.deviations).all(|d| *d == 0.0) {
        flags.push(BootstrapFlag::Degenerate);
    }
    if beta.is_some_and(|b| b <= NON_CONVERGENT_BETA) {
        flags.push(BootstrapFlag::NonConvergent);
    }

    // extrapolate each side's deviation from b_max to n with its own rate,
    // then reflect around T_n
    let b_max = sizes[last] as f64;
    let scale = |side: &SideFit| match side.beta.or(beta) {
        Some(bt) => side.deviations[last] * (n as f64 / b_max).powf(-bt),
        None => 0.0,
    };
    let (d_lo, d_hi) = (scale(&lower), scale(&upper));
    let (a, b) = (t_n - d_hi, t_n - d_lo);
    Ok(BootstrapResult {
        t_n,
        n,
        sizes,
        quantiles: config.quantiles,
        lower,
        upper,
        beta,
        ci: (a.min(b), a.max(b)),
        flags,
    })
}

/// Sample mean, for use as a bootstrap statistic.
pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample median, for use as a bootstrap statistic.
pub fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    quantile(&v, 0.5)
}

/// Sample maximum, for use as a bootstrap statistic.
pub fn max(xs: &[f64]) -> f64 {
    xs.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

/// Log-log survival table of absolute weights.
#[derive(Debug, Clone, PartialEq)]
pub struct TailPlot {
    /// `(w, fraction of |W| ≥ w)` at each distinct `|w|`, ascending.
    pub table: Vec<(f64, f64)>,
    /// Slope of `log survival` against `log w` over the top decade
    /// (survival ≤ 0.1); `None` with fewer than two such points.
    pub slope: Option<f64>,
}

/// Empirical survival function of `|w|` with a tail slope fit.
pub fn tail_exponent_plot(weights: &[f64]) -> Result<TailPlot> {
    if weights.is_empty() {
        return Err(Error::arg("tail plot of an empty weight vector"));
    }
    let mut abs: Vec<f64> = weights.iter().map(|w| w.abs()).collect();
    abs.sort_by(f64::total_cmp);
    let n = abs.len() as f64;
    let mut table = Vec::new();
    let mut i = 0;
    while i < abs.len() {
        table.push((abs[i], (abs.len() - i) as f64 / n));
        let v = abs[i];
        while i < abs.len() && abs[i] == v {
            i += 1;
        }
    }
    let (x, y): (Vec<f64>, Vec<f64>) = table
        .iter()
        .filter(|(w, s)| *s <= 0.1 && *w > 0.0)
        .map(|(w, s)| (w.ln(), s.ln()))
        .unzip();
    let slope = linear_fit(&x, &y).map(|(s, _, _)| s);
    Ok(TailPlot { table, slope })
}

/// One row of a clipping study.
#[derive(Debug, Clone, PartialEq)]
pub struct ClippingRate {
    pub tau: f64,
    pub result: BootstrapResult,
}

impl ClippingRate {
    pub fn beta_lo(&self) -> Option<f64> {
        self.result.lower.beta
    }

    pub fn beta_hi(&self) -> Option<f64> {
        self.result.upper.beta
    }
}

/// Subsampling bootstrap of the clipped IPWE for each threshold in `taus`
/// (`f64::INFINITY` for no clipping).
pub fn clipping_rate_study(
    dataset: &LoggedDataset,
    policy: &impl Policy,
    taus: &[f64],
    config: &BootstrapConfig,
) -> Result<Vec<ClippingRate>> {
    require_propensities(dataset)?;
    let weights = WeightVector::compute(dataset, policy)?;
    let items: Vec<(f64, f64, f64)> = weights
        .w
        .iter()
        .zip(dataset.records())
        .map(|(w, r)| (*w, r.reward, r.weight()))
        .collect();
    taus.iter()
        .map(|&tau| {
            if !(tau > 0.0) {
                return Err(Error::arg(format!("clipping threshold must be > 0, got {tau}")));
            }
            let stat = |xs: &[(f64, f64, f64)]| {
                let (num, den) = xs
                    .iter()
                    .fold((0.0, 0.0), |(a, b), (w, r, s)| (a + s * w.min(tau) * r, b + s));
                num / den
            };
            Ok(ClippingRate {
                tau,
                result: subsample_ci(stat, &items, config)?,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_grid() {
        let s = default_sizes(10_000);
        assert_eq!(s.len(), 6);
        assert_eq!(s[0], 100);
        assert_eq!(s[5], 1000);
        assert!(s.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn quantile_interpolates() {
        let v = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(quantile(&v, 0.0), 1.0);
        assert_eq!(quantile(&v, 1.0), 4.0);
        assert!((quantile(&v, 0.5) - 2.5).abs() < 1e-15);
    }

    #[test]
    fn linear_fit_recovers_line() {
        let x = [0.0, 1.0, 2.0, 3.0];
        let y: Vec<f64> = x.iter().map(|v| 1.5 - 0.5 * v).collect();
        let (s, a, r2) = linear_fit(&x, &y).unwrap();
        assert!((s + 0.5).abs() < 1e-12 && (a - 1.5).abs() < 1e-12 && (r2 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn constant_statistic_is_degenerate() {
        let data = vec![2.0; 400];
        let cfg = BootstrapConfig { replicates: 100, ..Default::default() };
        let res = subsample_ci(mean, &data, &cfg).unwrap();
        assert!(res.is_flagged(BootstrapFlag::Degenerate));
        assert_eq!(res.beta, None);
        assert_eq!(res.ci, (2.0, 2.0));
    }

    #[test]
    fn invalid_configs() {
        let data = vec![1.0, 2.0];
        let few = BootstrapConfig { replicates: 10, ..Default::default() };
        assert!(subsample_ci(mean, &data, &few).is_err());
        let big = BootstrapConfig { sizes: Some(vec![3]), replicates: 100, ..Default::default() };
        assert!(subsample_ci(mean, &data, &big).is_err());
        let q = BootstrapConfig { quantiles: (0.9, 0.1), replicates: 100, ..Default::default() };
        assert!(subsample_ci(mean, &data, &q).is_err());
    }

    #[test]
    fn tail_table_of_constants() {
        let t = tail_exponent_plot(&[3.0; 10]).unwrap();
        assert_eq!(t.table, vec![(3.0, 1.0)]);
        assert_eq!(t.slope, None);
    }
}
