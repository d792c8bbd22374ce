mod common;

use std::collections::BTreeMap;

use lrsearch::env::{make_bandit, make_load_unload, make_tabular, Bandit, RewardOutcome};
use lrsearch::rng::seeded;
use lrsearch::{exact_value, sample, Environment, Error, PolicyBounds, PolicyClassSpec, PolicyParams};
use statrs::distribution::{Binomial, DiscreteCDF};

use common::{homogeneity_p_value, random_model};

fn return_counts<E: Environment>(env: &mut E, policy: &PolicyParams, trials: usize, seed: u64) -> BTreeMap<i64, u64> {
    let mut rng = seeded(seed);
    let mut counts = BTreeMap::new();
    for _ in 0..trials {
        let (ret, _) = sample(env, policy, &mut rng).unwrap();
        *counts.entry(ret.round() as i64).or_insert(0) += 1;
    }
    counts
}

#[test]
fn tabular_load_unload_matches_native_return_distribution() {
    let mut native = make_load_unload(4, 12).unwrap();
    let mut tabular = make_tabular(native.model().unwrap()).unwrap();
    let spec = native.controller_spec(2, PolicyBounds::default()).unwrap();
    let policy = PolicyParams::random(&spec, &mut seeded(5));
    let a = return_counts(&mut native, &policy, 20_000, 1);
    let b = return_counts(&mut tabular, &policy, 20_000, 2);
    let keys: Vec<i64> = a.keys().chain(b.keys()).copied().collect();
    let xa: Vec<u64> = keys.iter().map(|k| a.get(k).copied().unwrap_or(0)).collect();
    let xb: Vec<u64> = keys.iter().map(|k| b.get(k).copied().unwrap_or(0)).collect();
    let p = homogeneity_p_value(&xa, &xb);
    assert!(p > 1e-3, "p = {p}, native {a:?}, tabular {b:?}");
}

#[test]
fn exact_value_agrees_with_monte_carlo() {
    let mut rng = seeded(9);
    let model = random_model(3, 2, 2, 6, &mut rng);
    let mut env = make_tabular(model.clone()).unwrap();
    let spec = PolicyClassSpec::controller(2, 2, 2, PolicyBounds::default()).unwrap();
    let policy = PolicyParams::random(&spec, &mut rng);
    let exact = exact_value(&model, &policy).unwrap();
    let n = 40_000;
    let returns: Vec<f64> = (0..n).map(|_| sample(&mut env, &policy, &mut rng).unwrap().0).collect();
    let mean = returns.iter().sum::<f64>() / n as f64;
    let sd = (returns.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt();
    let se = sd / (n as f64).sqrt();
    assert!((mean - exact).abs() < 5.0 * se, "mean {mean} exact {exact} se {se}");
}

#[test]
fn load_unload_hand_policies() {
    let env = make_load_unload(5, 100).unwrap();
    let model = env.model().unwrap();
    assert_eq!(exact_value(&model, &env.optimal_controller()).unwrap(), 13.0);
    // One delivery, then stuck at the unload end.
    assert_eq!(exact_value(&model, &env.always_right()).unwrap(), 1.0);
    let short = make_load_unload(5, 8).unwrap();
    assert_eq!(exact_value(&short.model().unwrap(), &short.optimal_controller()).unwrap(), 1.0);
    let nine = make_load_unload(5, 12).unwrap();
    assert_eq!(exact_value(&nine.model().unwrap(), &nine.optimal_controller()).unwrap(), 2.0);
}

#[test]
fn treasure_frequency_is_binomial() {
    let mut env = Bandit::hidden_treasure();
    let spec = PolicyClassSpec::reactive(1, 2, PolicyBounds::unbounded()).unwrap();
    let arm0 = PolicyParams::new(spec, vec![1.0, 0.0]).unwrap();
    let mut rng = seeded(3);
    let n = 50_000u64;
    let hits = (0..n)
        .filter(|_| sample(&mut env, &arm0, &mut rng).unwrap().0 == 1090.0)
        .count() as u64;
    let dist = Binomial::new(0.01, n).unwrap();
    let two_sided = 2.0 * dist.cdf(hits).min(dist.sf(hits.saturating_sub(1)));
    assert!(two_sided > 1e-3, "{hits} treasures in {n} pulls");
}

#[test]
fn bandit_values_are_linear_in_arm_probability() {
    for env in [Bandit::hidden_treasure(), Bandit::hidden_failure()] {
        let model = env.model().unwrap();
        let spec = PolicyClassSpec::reactive(1, 2, PolicyBounds::default()).unwrap();
        for p in [0.1, 0.3, 0.5, 0.9] {
            let policy = PolicyParams::new(spec, vec![p, 1.0 - p]).unwrap();
            let want = p * env.arm_mean(0) + (1.0 - p) * env.arm_mean(1);
            assert!((exact_value(&model, &policy).unwrap() - want).abs() < 1e-12);
        }
    }
}

#[test]
fn full_likelihood_ratio_reduces_to_policy_ratio() {
    let mut rng = seeded(21);
    let model = random_model(4, 3, 2, 7, &mut rng);
    let mut env = make_tabular(model.clone()).unwrap();
    for spec in [
        PolicyClassSpec::reactive(3, 2, PolicyBounds::default()).unwrap(),
        PolicyClassSpec::controller(3, 2, 2, PolicyBounds::default()).unwrap(),
    ] {
        for _ in 0..20 {
            let behaviour = PolicyParams::random(&spec, &mut rng);
            let a = PolicyParams::random(&spec, &mut rng);
            let b = PolicyParams::random(&spec, &mut rng);
            let (_, h) = sample(&mut env, &behaviour, &mut rng).unwrap();
            let full = model.history_log_likelihood(&a, &h).unwrap() - model.history_log_likelihood(&b, &h).unwrap();
            let agent = a.log_phi(&h).unwrap() - b.log_phi(&h).unwrap();
            assert!((full - agent).abs() < 1e-9, "{full} vs {agent}");
        }
    }
}

#[test]
fn sampling_is_deterministic_per_seed() {
    let mut env = make_load_unload(5, 30).unwrap();
    let spec = env.controller_spec(3, PolicyBounds::default()).unwrap();
    let policy = PolicyParams::random(&spec, &mut seeded(0));
    let a = sample(&mut env, &policy, &mut seeded(77)).unwrap();
    let b = sample(&mut env, &policy, &mut seeded(77)).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.1.len(), 30);
    assert!(a.1.counts_consistent());
}

#[test]
fn invalid_environments_are_config_errors() {
    assert!(matches!(make_load_unload(1, 10), Err(Error::Config(_))));
    assert!(matches!(make_load_unload(5, 0), Err(Error::Config(_))));
    assert!(matches!(make_bandit(vec![]), Err(Error::Config(_))));
    let bad = vec![vec![RewardOutcome { value: 1.0, prob: 0.4 }]];
    assert!(matches!(make_bandit(bad), Err(Error::Config(_))));
    let mut model = make_load_unload(3, 4).unwrap().model().unwrap();
    model.start[0] += 0.5;
    assert!(make_tabular(model).is_err());
}

#[test]
fn mismatched_policy_is_rejected() {
    let mut env = make_load_unload(5, 10).unwrap();
    let spec = PolicyClassSpec::reactive(4, 2, PolicyBounds::default()).unwrap();
    let p = PolicyParams::uniform(&spec);
    assert!(matches!(sample(&mut env, &p, &mut seeded(0)), Err(Error::Config(_))));
}
