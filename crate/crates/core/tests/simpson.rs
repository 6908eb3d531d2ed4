mod common;

use offpolicy::data::{LoggedDataset, LoggingScenario};
use offpolicy::diagnosis::{diagnose, mutual_info_oracle, resample_weights, reweight, Verdict, DEFAULT_THRESHOLD};
use offpolicy::estimators::{
    combined_offline_estimate, ipwe, paired_delta, EstimateReport, QGreedy, DEFAULT_R_MAX,
};
use offpolicy::policy::{tabulate, ConstantPolicy, PolicyFamily, TablePolicy};
use offpolicy::simulators::{simulate_simpson, ConfoundedEnv, EmitMode, SimpsonSpec};
use offpolicy::trainer::{fit_reward_model, TrainConfig};

const SURGERY_VALUE: f64 = 0.51 * 81.0 / 87.0 + 0.49 * 192.0 / 263.0;

fn surgery() -> ConstantPolicy {
    ConstantPolicy { id: "surgery".into() }
}

#[test]
fn expected_mode_surgery_ipwe_is_exact() {
    let d = simulate_simpson(&SimpsonSpec::default()).unwrap();
    let rep = ipwe(&d, &surgery()).unwrap();
    assert!((rep.point - SURGERY_VALUE).abs() < 1e-12, "{}", rep.point);
    assert!((rep.point - 0.8325462).abs() < 1e-6);
    let env = SimpsonSpec::default().environment().unwrap();
    let exact = env.exact_policy_value(&[vec![1.0, 0.0], vec![1.0, 0.0]]).unwrap();
    assert!((exact - SURGERY_VALUE).abs() < 1e-15);
}

#[test]
fn puncture_ipwe_matches_its_exact_value() {
    let d = simulate_simpson(&SimpsonSpec::default()).unwrap();
    let rep = ipwe(&d, &ConstantPolicy { id: "puncture".into() }).unwrap();
    let exact = 0.51 * 234.0 / 270.0 + 0.49 * 55.0 / 80.0;
    assert!((rep.point - exact).abs() < 1e-12);
}

#[test]
fn context_free_reward_model_prefers_puncture() {
    let d = simulate_simpson(&SimpsonSpec::default()).unwrap();
    let model = fit_reward_model(&d, PolicyFamily::ContextFree).unwrap();
    let f = model.predict(&d.records()[0]).unwrap();
    assert!((f[0] - 273.0 / 350.0).abs() < 1e-9, "{f:?}");
    assert!((f[1] - 289.0 / 350.0).abs() < 1e-9);
    assert_eq!(format!("{:.3}", f[1]), "0.826");
    let table = tabulate(&QGreedy(&model), 1, 2).unwrap();
    assert_eq!(table, vec![vec![0.0, 1.0]]);
}

#[test]
fn hidden_size_reward_model_prefers_surgery() {
    let d = simulate_simpson(&SimpsonSpec::default()).unwrap().reveal_hidden().unwrap();
    let model = fit_reward_model(&d, PolicyFamily::Tabular).unwrap();
    let table = tabulate(&QGreedy(&model), 2, 2).unwrap();
    assert_eq!(table, vec![vec![1.0, 0.0], vec![1.0, 0.0]]);
}

#[test]
fn sampled_mode_ipwe_is_near_expected() {
    let spec = SimpsonSpec {
        mode: EmitMode::Sampled,
        seed: 3,
        scale: 10,
        ..Default::default()
    };
    let rep = ipwe(&simulate_simpson(&spec).unwrap(), &surgery()).unwrap();
    let (lo, hi) = rep.ci.unwrap();
    assert!(lo < SURGERY_VALUE && SURGERY_VALUE < hi, "{rep:?}");
}

#[test]
fn aggregated_rows_expand_to_the_full_log() {
    let d = simulate_simpson(&SimpsonSpec::default()).unwrap();
    let mut buf = Vec::new();
    offpolicy::data::write_aggregated(d.records(), &mut buf).unwrap();
    assert_eq!(String::from_utf8(buf.clone()).unwrap().lines().count(), 4);
    let back = LoggedDataset::from_reader(buf.as_slice(), LoggingScenario::Full).unwrap();
    assert_eq!(back, d);
}

#[test]
fn context_free_diagnosis_underfits() {
    let d = simulate_simpson(&SimpsonSpec::default()).unwrap();
    let rep = diagnose(&d, PolicyFamily::ContextFree, &TrainConfig::default(), DEFAULT_THRESHOLD).unwrap();
    assert!((rep.perplexity - 1.155).abs() < 0.005, "{}", rep.perplexity);
    assert_eq!(rep.verdict, Verdict::Underfit);
    let probs = rep.policy.score(&d.records()[0]).unwrap().probs();
    assert!((probs[0] - 0.5).abs() < 1e-4, "{probs:?}");
    let kidney = ConfoundedEnv::kidney_stone();
    let mi = mutual_info_oracle(&kidney.env, &kidney.observed_split()).unwrap();
    assert!(rep.iml_loss >= mi - 1e-3);
    assert!((rep.iml_loss - mi).abs() < 1e-4, "{} vs {mi}", rep.iml_loss);
}

#[test]
fn tabular_diagnosis_with_revealed_size_is_realizable() {
    let d = simulate_simpson(&SimpsonSpec::default()).unwrap().reveal_hidden().unwrap();
    let rep = diagnose(&d, PolicyFamily::Tabular, &TrainConfig::default(), DEFAULT_THRESHOLD).unwrap();
    assert!(rep.iml_loss < 1e-3, "{}", rep.iml_loss);
    assert_eq!(rep.verdict, Verdict::Realizable);
}

#[test]
fn partial_scenario_diagnosis_matches_full() {
    let d = simulate_simpson(&SimpsonSpec::default()).unwrap();
    let partial = d.clone().with_scenario(LoggingScenario::Partial).unwrap();
    let rep = diagnose(&partial, PolicyFamily::ContextFree, &TrainConfig::default(), DEFAULT_THRESHOLD).unwrap();
    assert!((rep.perplexity - 1.155).abs() < 0.005, "{}", rep.perplexity);
    assert!(diagnose(&d.without_propensities(), PolicyFamily::ContextFree, &TrainConfig::default(), 0.05).is_err());
}

#[test]
fn iml_resampling_reduces_ipwe_spread() {
    let d = common::kidney_binary();
    let before = ipwe(&d, &surgery()).unwrap();
    let half = TablePolicy { probs: vec![vec![0.5, 0.5]] };
    let after = ipwe(&reweight(&d, &half).unwrap(), &surgery()).unwrap();
    assert!((before.point - SURGERY_VALUE).abs() < 1e-12);
    assert!((after.point - SURGERY_VALUE).abs() < 1e-12);
    assert_eq!(format!("{:.1}", 100.0 * before.std_error()), "5.0");
    assert_eq!(format!("{:.1}", 100.0 * after.std_error()), "3.7");
}

#[test]
fn resample_weights_with_fitted_imitation() {
    let d = simulate_simpson(&SimpsonSpec::default()).unwrap();
    let rep = diagnose(&d, PolicyFamily::ContextFree, &TrainConfig::default(), DEFAULT_THRESHOLD).unwrap();
    let rw = resample_weights(&d, &rep.policy).unwrap();
    let i = d.records().iter().position(|r| r.hidden == Some(0) && r.action == 0).unwrap();
    assert!((rw.weights[i] - 2.052).abs() < 1e-3, "{}", rw.weights[i]);
    assert!((rw.ess - 700.0).abs() < 0.1);
    let same = resample_weights(&d, &offpolicy::policy::LoggingPolicy).unwrap();
    assert!(same.weights.iter().all(|w| *w == 1.0));
    assert_eq!(same.ess, 700.0);
}

#[test]
fn paired_delta_separates_surgery_from_the_imitation() {
    let spec = SimpsonSpec {
        scale: 20,
        ..Default::default()
    };
    let d = simulate_simpson(&spec).unwrap();
    let half = TablePolicy { probs: vec![vec![0.5, 0.5]] };
    let pd = paired_delta(&d, &surgery(), &half, 500.0, DEFAULT_R_MAX, 1000, 11).unwrap();
    assert!(pd.term1_ci.0 > 0.0, "{pd:?}");
    assert!(pd.interval.0 > 0.0);
    assert!(pd.interval.0 <= pd.term1_ci.0 && pd.term1_ci.1 <= pd.interval.1);
}

#[test]
fn combined_estimate_widens_by_the_gap() {
    let rep = EstimateReport {
        estimator: "ipwe".into(),
        point: 43.2e-4,
        gap: 0.075,
        variance: 0.0,
        ci: Some((41.8e-4, 44.6e-4)),
        gap_ci: Some((0.07, 0.08)),
        n: 1,
        clip_tau: None,
        notes: vec![],
    };
    let (lo, hi) = combined_offline_estimate(&rep, 0.01).unwrap();
    assert!((lo - 41.8e-4).abs() < 1e-12);
    assert!((hi - 52.6e-4).abs() < 1e-12);
}
