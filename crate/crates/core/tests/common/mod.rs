#![allow(dead_code)]

use lrsearch::env::{EnvModel, RewardEntry, RewardOutcome};
use lrsearch::rng::seeded;
use lrsearch::{sample, Dataset, Environment, PolicyClassSpec, PolicyParams, SampleRecord};
use rand::{Rng, RngCore};
use statrs::distribution::{ChiSquared, ContinuousCDF};

/// A random probability row with every entry at least 0.05.
pub fn random_row<R: RngCore>(len: usize, rng: &mut R) -> Vec<f64> {
    let raw: Vec<f64> = (0..len).map(|_| 0.05 + rng.random::<f64>()).collect();
    let total: f64 = raw.iter().sum();
    raw.iter().map(|x| x / total).collect()
}

/// Random fully-specified POMDP with stochastic rewards.
pub fn random_model<R: RngCore>(states: usize, observations: usize, actions: usize, horizon: usize, rng: &mut R) -> EnvModel {
    let mut transition = Vec::new();
    for _ in 0..states * actions {
        transition.extend(random_row(states, rng));
    }
    let mut observation = Vec::new();
    for _ in 0..states {
        observation.extend(random_row(observations, rng));
    }
    let reward = (0..states * actions)
        .map(|_| {
            let p: f64 = rng.random_range(0.2..0.8);
            RewardEntry::Outcomes(vec![
                RewardOutcome { value: rng.random_range(-1.0..0.0), prob: p },
                RewardOutcome { value: rng.random_range(0.0..2.0), prob: 1.0 - p },
            ])
        })
        .collect();
    let model = EnvModel {
        states,
        observations,
        actions,
        horizon,
        start: random_row(states, rng),
        transition,
        observation,
        reward,
    };
    model.validate().expect("random model is valid");
    model
}

/// Records `n` trials, each from a fresh random policy of `spec`.
pub fn random_dataset<E: Environment + ?Sized>(env: &mut E, spec: &PolicyClassSpec, n: usize, seed: u64) -> Dataset {
    let mut rng = seeded(seed);
    let mut data = Dataset::new(*spec);
    for _ in 0..n {
        let p = PolicyParams::random(spec, &mut rng);
        let (ret, h) = sample(env, &p, &mut rng).unwrap();
        data.add(SampleRecord::new(p, ret, h).unwrap()).unwrap();
    }
    data
}

/// Central finite differences of `f` over the flat parameters of `theta`,
/// without re-normalizing rows.
pub fn fd_gradient(theta: &PolicyParams, step: f64, f: impl Fn(&PolicyParams) -> f64) -> Vec<f64> {
    let base = theta.params().to_vec();
    (0..base.len())
        .map(|k| {
            let mut up = base.clone();
            up[k] += step;
            let mut down = base.clone();
            down[k] -= step;
            let up = PolicyParams::from_flat_unchecked(*theta.spec(), up).unwrap();
            let down = PolicyParams::from_flat_unchecked(*theta.spec(), down).unwrap();
            (f(&up) - f(&down)) / (2.0 * step)
        })
        .collect()
}

pub fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// `‖a - b‖ / max(‖a‖, ‖b‖)`, 0 when both vanish.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let scale = norm(a).max(norm(b));
    if scale == 0.0 {
        0.0
    } else {
        norm(&diff) / scale
    }
}

/// p-value of the chi-square homogeneity test between two count vectors.
pub fn homogeneity_p_value(a: &[u64], b: &[u64]) -> f64 {
    let na: f64 = a.iter().sum::<u64>() as f64;
    let nb: f64 = b.iter().sum::<u64>() as f64;
    let mut stat = 0.0;
    let mut cells = 0;
    for (&x, &y) in a.iter().zip(b) {
        let total = (x + y) as f64;
        if total == 0.0 {
            continue;
        }
        cells += 1;
        let ea = total * na / (na + nb);
        let eb = total * nb / (na + nb);
        stat += (x as f64 - ea).powi(2) / ea + (y as f64 - eb).powi(2) / eb;
    }
    if cells < 2 {
        return 1.0;
    }
    1.0 - ChiSquared::new((cells - 1) as f64).unwrap().cdf(stat)
}

/// One-sample Kolmogorov-Smirnov statistic against `cdf`.
pub fn ks_statistic(mut xs: Vec<f64>, cdf: impl Fn(f64) -> f64) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    xs.iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max)
}

/// WIS value of `q` minus the return of the sample with the largest weight
/// at `anchor`, recomputed from the records alone. Leaving the dominant
/// return out of the sum keeps finite differences free of cancellation when
/// one sample carries almost all the weight.
pub fn wis_value_offset(data: &Dataset, q: &PolicyParams, anchor: &PolicyParams) -> f64 {
    let log_weights = |theta: &PolicyParams| -> Vec<f64> {
        data.records()
            .iter()
            .map(|r| {
                let mix: Vec<f64> = data.records().iter().map(|s| s.policy().log_phi(r.history()).unwrap()).collect();
                theta.log_phi(r.history()).unwrap() - lrsearch::math::log_sum_exp(&mix)
            })
            .collect()
    };
    let at_anchor = log_weights(anchor);
    let d = (0..at_anchor.len()).fold(0, |best, i| if at_anchor[i] > at_anchor[best] { i } else { best });
    let lw = log_weights(q);
    let total = lrsearch::math::log_sum_exp(&lw);
    let rd = data.records()[d].ret();
    data.records()
        .iter()
        .zip(&lw)
        .enumerate()
        .filter(|(i, _)| *i != d)
        .map(|(_, (r, l))| (r.ret() - rd) * (l - total).exp())
        .sum()
}
