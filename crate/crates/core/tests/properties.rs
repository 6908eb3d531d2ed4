//! Randomized invariants.

mod common;

use common::{random_dataset, random_env, random_params, random_table, FAMILIES};
use offpolicy::data::{LoggedDataset, LoggingScenario};
use offpolicy::diagnosis::resample_weights;
use offpolicy::estimators::{clipped_ipwe, clipped_pil_dr, delta_ipwe, RewardModel, WeightBound};
use offpolicy::objectives::{eval_objective, iml_loss, objective_value, ObjectiveKind, ObjectiveSpec};
use offpolicy::policy::{PolicyFamily, PolicyParams, TablePolicy};
use offpolicy::seed;
use offpolicy::trainer::{train, Schedule, TrainConfig};
use proptest::prelude::*;
use rand::Rng;

fn family() -> impl Strategy<Value = PolicyFamily> {
    (0..FAMILIES.len()).prop_map(|i| FAMILIES[i])
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn dataset_round_trips_through_jsonl(fam in family(), n in 1usize..30, s in any::<u64>()) {
        let d = random_dataset(fam, n, s);
        let mut buf = Vec::new();
        d.to_writer(&mut buf).unwrap();
        let back = LoggedDataset::from_reader(buf.as_slice(), LoggingScenario::Full).unwrap();
        prop_assert_eq!(back, d);
    }

    #[test]
    fn tabular_environments_self_normalize(s in any::<u64>(), nx in 1usize..5, na in 2usize..5) {
        let env = random_env(nx, na, s);
        let pi = random_table(nx, na, s ^ 0xabc);
        let mu = env.logging().to_vec();
        let norm = env.expectation_under_logging(|x, a| pi[x][a] / mu[x][a]);
        prop_assert!((norm - 1.0).abs() <= 1e-12);
        let r = env.rewards().to_vec();
        let value = env.expectation_under_logging(|x, a| pi[x][a] / mu[x][a] * r[x][a]);
        prop_assert!((value - env.exact_policy_value(&pi).unwrap()).abs() <= 1e-12);
    }

    #[test]
    fn scores_are_probability_vectors(fam in family(), s in any::<u64>(), scale in 0.0f64..50.0) {
        let d = random_dataset(fam, 5, s);
        let params = random_params(fam, &d, scale, s);
        for r in d.records() {
            let p = params.score(r).unwrap().probs();
            prop_assert!(p.iter().all(|x| (0.0..=1.0).contains(x)));
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn log_prob_gradients_match_finite_differences(fam in family(), s in any::<u64>()) {
        let d = random_dataset(fam, 1, s);
        let params = random_params(fam, &d, 1.0, s);
        let r = &d.records()[0];
        let k = r.action;
        let g = params.grad_log_prob(r, k).unwrap();
        let h = 1e-5;
        let (mut num, mut norm) = (0.0, 0.0);
        for j in 0..params.theta.len() {
            let mut plus = params.clone();
            plus.theta[j] += h;
            let mut minus = params.clone();
            minus.theta[j] -= h;
            let fd = (plus.score(r).unwrap().log_probs[k] - minus.score(r).unwrap().log_probs[k]) / (2.0 * h);
            num += (g[j] - fd).powi(2);
            norm += fd * fd;
        }
        prop_assert!(num.sqrt() <= 1e-4 * norm.sqrt().max(1e-3));
    }

    #[test]
    fn full_rank_factorization_matches_the_full_model(s in any::<u64>()) {
        let d = random_dataset(PolicyFamily::BilinearFull, 8, s);
        let shapes = PolicyParams::shapes_for(PolicyFamily::BilinearFull, &d);
        let (p, q) = (shapes.context_dim, shapes.action_dim);
        let r = p.min(q);
        let low = random_params(PolicyFamily::BilinearLowRank(r), &d, 1.0, s);
        let (u, v, w) = low.factors().unwrap();
        let mut theta = vec![0.0; p * q];
        for i in 0..p {
            for j in 0..q {
                theta[i * q + j] = (0..r).map(|k| u[i * r + k] * v[j * r + k]).sum();
            }
        }
        theta.extend_from_slice(w);
        let full = PolicyParams::new(PolicyFamily::BilinearFull, shapes, theta).unwrap();
        for rec in d.records() {
            let a = low.score(rec).unwrap().log_probs;
            let b = full.score(rec).unwrap().log_probs;
            for (x, y) in a.iter().zip(&b) {
                prop_assert!((x - y).abs() <= 1e-10);
            }
        }
    }

    #[test]
    fn sharpening_ignores_constant_shifts(s in any::<u64>(), c in -100.0f64..100.0) {
        let d = random_dataset(PolicyFamily::ContextFree, 4, s);
        let params = random_params(PolicyFamily::ContextFree, &d, 3.0, s);
        let mut shifted = params.clone();
        shifted.theta.iter_mut().for_each(|t| *t += c);
        for r in d.records() {
            prop_assert_eq!(params.sharpen(r).unwrap(), shifted.sharpen(r).unwrap());
        }
    }

    #[test]
    fn clipped_ipwe_is_monotone_in_tau(fam in family(), s in any::<u64>(), t1 in 0.01f64..20.0, t2 in 0.01f64..20.0) {
        let d = random_dataset(fam, 20, s);
        let pi = random_params(fam, &d, 2.0, s);
        let (lo, hi) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
        let a = clipped_ipwe(&d, &pi, lo).unwrap().point;
        let b = clipped_ipwe(&d, &pi, hi).unwrap().point;
        prop_assert!(a <= b + 1e-12);
    }

    #[test]
    fn log_bound_gap_is_the_partial_imitation_loss(fam in family(), s in any::<u64>()) {
        let d = random_dataset(fam, 20, s);
        let pi = random_params(fam, &d, 1.0, s);
        let rep = clipped_pil_dr(&d, &pi, &RewardModel::Zero, WeightBound::Log).unwrap();
        let iml = iml_loss(&ObjectiveKind::ImlPart, &d, &pi).unwrap();
        prop_assert!((rep.gap - iml).abs() <= 1e-10);
    }

    #[test]
    fn pil_mu_dominates_pil_empty(fam in family(), s in any::<u64>()) {
        let d = random_dataset(fam, 20, s);
        let pi = random_params(fam, &d, 2.0, s);
        let mu = objective_value(&ObjectiveKind::PilMu, &d, &pi).unwrap();
        let empty = objective_value(&ObjectiveKind::PilEmpty, &d, &pi).unwrap();
        prop_assert!(mu >= empty - 1e-12);
    }

    #[test]
    fn reward_weighted_cross_entropy_ignores_propensities(fam in family(), s in any::<u64>()) {
        let d = random_dataset(fam, 15, s);
        let pi = random_params(fam, &d, 1.0, s);
        let mut rng = seed::derived_rng(s, &[0x33]);
        let altered: Vec<_> = d
            .records()
            .iter()
            .map(|r| {
                let m = r.num_candidates();
                let mu = offpolicy::data::random_simplex(m, 0.01, &mut rng);
                let mut r = r.clone();
                r.propensity = Some(mu[r.action]);
                r.full_propensities = Some(mu);
                r
            })
            .collect();
        let altered = LoggedDataset::new(altered, LoggingScenario::Full).unwrap();
        let spec = ObjectiveSpec::new(ObjectiveKind::CeWeighted);
        prop_assert_eq!(eval_objective(&spec, &d, &pi).unwrap(), eval_objective(&spec, &altered, &pi).unwrap());
    }

    #[test]
    fn full_imitation_loss_is_nonnegative(fam in family(), s in any::<u64>()) {
        let d = random_dataset(fam, 15, s);
        let pi = random_params(fam, &d, 3.0, s);
        prop_assert!(iml_loss(&ObjectiveKind::ImlFull, &d, &pi).unwrap() >= -1e-12);
    }

    #[test]
    fn resample_weights_self_normalize_per_context(s in any::<u64>(), nx in 2usize..5, na in 2usize..5) {
        let env = random_env(nx, na, s);
        let d = env.enumerated_dataset();
        let pi = TablePolicy { probs: random_table(nx, na, s ^ 0x99) };
        let rw = resample_weights(&d, &pi).unwrap();
        for (ctx, mean) in &rw.per_context {
            prop_assert!((mean - 1.0).abs() <= 1e-9, "{ctx}: {mean}");
        }
        prop_assert!((rw.ess - d.total_weight()).abs() <= 1e-9);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn training_is_bitwise_reproducible(fam in family(), s in any::<u64>(), batch in proptest::option::of(1usize..8)) {
        let d = random_dataset(fam, 20, s);
        let cfg = TrainConfig {
            batch_size: batch,
            max_epochs: 15,
            seed: s,
            holdout_fraction: 0.2,
            ..TrainConfig::default()
        };
        let spec = ObjectiveSpec::new(ObjectiveKind::PilIml(0.1));
        let a = train(&spec, &d, fam, &cfg).unwrap();
        let b = train(&spec, &d, fam, &cfg).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn full_batch_tabular_imitation_ascends(s in any::<u64>()) {
        let env = random_env(3, 4, s);
        let d = env.sample_dataset(200, false, &mut seed::derived_rng(s, &[2]));
        let cfg = TrainConfig {
            learning_rate: 0.1,
            schedule: Schedule::Constant,
            max_epochs: 50,
            tolerance: 0.0,
            ..TrainConfig::default()
        };
        let (_, trace) = train(&ObjectiveSpec::new(ObjectiveKind::ImlFull), &d, PolicyFamily::Tabular, &cfg).unwrap();
        for pair in trace.objective.windows(2) {
            prop_assert!(pair[1] >= pair[0] - 1e-12, "{pair:?}");
        }
    }
}

#[test]
fn gap_of_the_logging_policy_is_zero() {
    let d = random_dataset(PolicyFamily::Tabular, 30, 4);
    let rep = delta_ipwe(&d, &offpolicy::policy::LoggingPolicy).unwrap();
    assert_eq!(rep.gap, 0.0);
}

#[test]
fn imitation_on_a_realizable_log_closes_the_holdout_gap() {
    let env = random_env(3, 3, 8);
    let d = env.sample_dataset(6000, true, &mut seed::derived_rng(8, &[3]));
    let cfg = TrainConfig {
        learning_rate: 2.0,
        holdout_fraction: 0.3,
        seed: 8,
        ..TrainConfig::default()
    };
    let (_, trace) = train(&ObjectiveSpec::new(ObjectiveKind::ImlFull), &d, PolicyFamily::Tabular, &cfg).unwrap();
    let first = trace.holdout_gap[0].unwrap().abs();
    let last = trace.holdout_gap.last().unwrap().unwrap().abs();
    assert!(last < 0.02, "{first} -> {last}");
}

/// Minimizes a unimodal function on `[lo, hi]` by golden-section search.
fn golden(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
    let g = (5f64.sqrt() - 1.0) / 2.0;
    while hi - lo > 1e-9 {
        let (a, b) = (hi - g * (hi - lo), lo + g * (hi - lo));
        if f(a) < f(b) {
            hi = b;
        } else {
            lo = a;
        }
    }
    0.5 * (lo + hi)
}

#[test]
fn imitation_and_squared_weight_error_share_their_minimizer() {
    // one-parameter family π_θ ∝ exp(θ v) against a logging policy close to
    // the family, where the two criteria agree to second order
    let mut checked = 0;
    for s in 0..200 {
        let mut rng = seed::derived_rng(s, &[0xc0]);
        let v: Vec<f64> = (0..4).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
        let theta0 = rng.random::<f64>() * 2.0 - 1.0;
        let pi = |t: f64| {
            let e: Vec<f64> = v.iter().map(|x| (t * x).exp()).collect();
            let z: f64 = e.iter().sum();
            e.into_iter().map(|x| x / z).collect::<Vec<f64>>()
        };
        let mu: Vec<f64> = {
            let base = pi(theta0);
            let noisy: Vec<f64> = base.iter().map(|b| b * (1.0 + 0.05 * (rng.random::<f64>() - 0.5))).collect();
            let z: f64 = noisy.iter().sum();
            noisy.into_iter().map(|x| x / z).collect()
        };
        let nll = |t: f64| -> f64 { -mu.iter().zip(pi(t)).map(|(m, p)| m * p.ln()).sum::<f64>() };
        let sq = |t: f64| -> f64 { 0.5 * mu.iter().zip(pi(t)).map(|(m, p)| m * (p / m - 1.0).powi(2)).sum::<f64>() };
        let (a, b) = (golden(nll, -5.0, 5.0), golden(sq, -5.0, 5.0));
        let max_dev = pi(a).iter().zip(&mu).fold(0.0f64, |d, (p, m)| d.max((p / m - 1.0).abs()));
        if max_dev <= 0.1 {
            checked += 1;
            assert!((a - b).abs() <= 1e-2, "seed {s}: {a} vs {b}");
        }
    }
    assert!(checked >= 100, "{checked}");
}

#[test]
fn every_simulator_output_validates() {
    use offpolicy::simulators::*;
    let datasets = [
        simulate_simpson(&SimpsonSpec::default()).unwrap(),
        simulate_epsilon_greedy(0.1, 50, 1).unwrap(),
        simulate_pareto_weights(100, 1.5, 10.0, 1).unwrap(),
        synth_confounded_env(3, 2, 3, 1).unwrap().sample_dataset(50, true, 1).unwrap(),
        synth_confounded_env(3, 2, 3, 1).unwrap().enumerated_dataset().unwrap(),
    ];
    for d in datasets {
        let revalidated = LoggedDataset::new(d.records().to_vec(), d.scenario()).unwrap();
        assert_eq!(revalidated.len(), d.len());
    }
}
