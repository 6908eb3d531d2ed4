#![allow(dead_code)]

use offpolicy::data::{
    random_simplex, sample_index, Candidate, LoggedDataset, LoggedRecord, LoggingScenario, SparseVector,
    TabularEnvironment,
};
use offpolicy::policy::{PolicyFamily, PolicyParams};
use offpolicy::seed;
use offpolicy::simulators::{simulate_simpson, SimpsonSpec};
use rand::Rng;

pub const FAMILIES: [PolicyFamily; 5] = [
    PolicyFamily::ContextFree,
    PolicyFamily::Tabular,
    PolicyFamily::Linear,
    PolicyFamily::BilinearFull,
    PolicyFamily::BilinearLowRank(2),
];

/// The kidney-stone log with 0/1 rewards: the first `cured` patients of
/// every cell are cured.
pub fn kidney_binary() -> LoggedDataset {
    let spec = SimpsonSpec::default();
    let d = simulate_simpson(&spec).unwrap();
    let mut seen = [[0u64; 2]; 2];
    let records = d
        .into_records()
        .into_iter()
        .map(|mut r| {
            let (s, t) = (r.hidden.unwrap(), r.action);
            r.reward = f64::from(u8::from(seen[s][t] < spec.cells[s][t].cured));
            seen[s][t] += 1;
            r
        })
        .collect();
    LoggedDataset::new(records, LoggingScenario::Full).unwrap()
}

/// Random fully logged dataset shaped for `family`: one-hot contexts for
/// the tabular family, no context for the context-free family, dense
/// contexts and featured candidates otherwise.
pub fn random_dataset(family: PolicyFamily, n: usize, seed: u64) -> LoggedDataset {
    let mut rng = seed::derived_rng(seed, &[0xf1]);
    let (p, q) = (3usize, 3usize);
    let records = (0..n)
        .map(|_| {
            let m = rng.random_range(2..=4usize);
            let context = match family {
                PolicyFamily::ContextFree => SparseVector::default(),
                PolicyFamily::Tabular => SparseVector::one_hot(rng.random_range(0..p)),
                _ => SparseVector::new((0..p).map(|i| (i, rng.random::<f64>() * 2.0 - 1.0)).collect()),
            };
            let candidates = (0..m)
                .map(|k| match family {
                    PolicyFamily::ContextFree | PolicyFamily::Tabular => Candidate::new(k.to_string()),
                    _ => Candidate {
                        id: k.to_string(),
                        features: Some(SparseVector::new(
                            (0..q).map(|j| (j, rng.random::<f64>() * 2.0 - 1.0)).collect(),
                        )),
                    },
                })
                .collect();
            let mu = random_simplex(m, 0.05, &mut rng);
            let a = sample_index(&mu, &mut rng);
            let r = rng.random::<f64>();
            LoggedRecord::new(context, candidates, a, r).with_full_propensities(mu)
        })
        .collect();
    LoggedDataset::new(records, LoggingScenario::Full).unwrap()
}

/// Parameters with entries uniform on `[-scale, scale]`.
pub fn random_params(family: PolicyFamily, dataset: &LoggedDataset, scale: f64, seed: u64) -> PolicyParams {
    let mut params = PolicyParams::for_dataset(family, dataset, seed);
    let mut rng = seed::derived_rng(seed, &[0xa5]);
    for t in &mut params.theta {
        *t = (2.0 * rng.random::<f64>() - 1.0) * scale;
    }
    params
}

/// Random tabular environment with every logging probability >= 0.05.
pub fn random_env(nx: usize, na: usize, seed: u64) -> TabularEnvironment {
    let mut rng = seed::derived_rng(seed, &[0xe2]);
    TabularEnvironment::new(
        random_simplex(nx, 0.0, &mut rng),
        (0..nx).map(|_| random_simplex(na, 0.05, &mut rng)).collect(),
        (0..nx).map(|_| (0..na).map(|_| rng.random::<f64>()).collect()).collect(),
        1.0,
    )
    .unwrap()
}

pub fn random_table(nx: usize, na: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = seed::derived_rng(seed, &[0x7b]);
    (0..nx).map(|_| random_simplex(na, 0.0, &mut rng)).collect()
}
