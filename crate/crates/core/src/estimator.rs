//! The proxy environment: archived experience answering value and gradient
//! queries for arbitrary policies.
//!
//! Samples may come from different policies. Each history `h_i` is weighted
//! against the uniform mixture of all sampling policies, so for a query `θ`
//!
//! ```text
//! w_i = Φ(h_i | θ) / Σ_j Φ(h_i | θ_j)
//! ```
//!
//! where `Φ` is the policy's own factor of the history likelihood. The
//! environment's factor is common to numerator and denominator and never
//! needs to be known. The denominators are cached in log space and updated
//! as records arrive, so a query costs O(N).

use crate::env::History;
use crate::error::{Error, Result};
use crate::math::{log_add_exp, log_sum_exp};
use crate::policy::{PolicyClassSpec, PolicyParams};

/// One archived trial: the sampling policy, its return and its history.
#[derive(Clone, Debug)]
pub struct SampleRecord {
    policy: PolicyParams,
    ret: f64,
    history: History,
    log_phi_self: f64,
    feature_index: Vec<u32>,
    feature_count: Vec<f64>,
    log_params: Vec<f64>,
}

impl SampleRecord {
    pub fn new(policy: PolicyParams, ret: f64, history: History) -> Result<Self> {
        if !ret.is_finite() {
            return Err(Error::contract(format!("non-finite return {ret}")));
        }
        let (feature_index, feature_count): (Vec<u32>, Vec<f64>) = policy
            .spec()
            .features(history.counts())?
            .into_iter()
            .map(|(i, n)| (i as u32, f64::from(n)))
            .unzip();
        let log_params = finite_logs(&policy);
        let log_phi_self = sparse_dot(&feature_index, &feature_count, &log_params);
        Ok(SampleRecord {
            log_params,
            policy,
            ret,
            history,
            log_phi_self,
            feature_index,
            feature_count,
        })
    }

    pub fn policy(&self) -> &PolicyParams {
        &self.policy
    }

    pub fn ret(&self) -> f64 {
        self.ret
    }

    pub fn history(&self) -> &History {
        &self.history
    }

    /// Cached `ln Φ(h | θ_sampling)`.
    pub fn log_phi_self(&self) -> f64 {
        self.log_phi_self
    }
}

/// Value and gradient returned by a proxy query.
#[derive(Clone, Debug, PartialEq)]
pub struct Estimate {
    pub value: f64,
    /// Over the query policy's flat parameters.
    pub gradient: Vec<f64>,
    /// `Σ w / max w`; near 1 when one sample dominates.
    pub effective_sample_size: f64,
}

/// Weights of a WIS query, scaled so the largest is 1.
#[derive(Clone, Debug)]
pub struct WisPoint {
    weights: Vec<f64>,
    total: f64,
    pub value: f64,
}

/// Append-only experience archive with cached mixture denominators.
#[derive(Clone, Debug)]
pub struct Dataset {
    spec: PolicyClassSpec,
    records: Vec<SampleRecord>,
    /// `ln Σ_j Φ(h_i | θ_j)` per record.
    mix: Vec<f64>,
    features: FeatureTable,
    returns: Vec<f64>,
    version: u64,
    verbose: bool,
}

impl Dataset {
    /// An archive that keeps only history counts.
    pub fn new(spec: PolicyClassSpec) -> Self {
        Dataset {
            spec,
            records: Vec::new(),
            mix: Vec::new(),
            features: FeatureTable::new(spec.num_params()),
            returns: Vec::new(),
            version: 0,
            verbose: false,
        }
    }

    /// An archive that also keeps full step lists.
    pub fn verbose(spec: PolicyClassSpec) -> Self {
        Dataset {
            verbose: true,
            ..Dataset::new(spec)
        }
    }

    pub fn spec(&self) -> &PolicyClassSpec {
        &self.spec
    }

    pub fn is_verbose(&self) -> bool {
        self.verbose
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> &[SampleRecord] {
        &self.records
    }

    pub fn mix_denominators(&self) -> &[f64] {
        &self.mix
    }

    /// Bumped on every mutation.
    pub fn version(&self) -> u64 {
        self.version
    }

    /// Appends a record and folds its policy into every cached denominator.
    pub fn add(&mut self, mut rec: SampleRecord) -> Result<()> {
        if rec.policy.spec() != &self.spec {
            return Err(Error::contract(format!(
                "record policy class {:?} does not match dataset class {:?}",
                rec.policy.spec(),
                self.spec
            )));
        }
        if !self.verbose {
            rec.history.strip_steps();
        }
        let n = self.records.len();
        self.features.push(&rec.feature_index, &rec.feature_count);
        for (j, m) in self.mix.iter_mut().enumerate() {
            *m = log_add_exp(*m, self.features.dot(j, &rec.log_params));
        }
        let mut terms: Vec<f64> = self
            .records
            .iter()
            .map(|r| self.features.dot(n, &r.log_params))
            .collect();
        terms.push(self.features.dot(n, &rec.log_params));
        self.mix.push(log_sum_exp(&terms));
        self.returns.push(rec.ret);
        self.records.push(rec);
        self.version += 1;
        Ok(())
    }

    /// Forgets every record.
    pub fn clear(&mut self) {
        self.records.clear();
        self.mix.clear();
        self.features.clear();
        self.returns.clear();
        self.version += 1;
    }

    /// Full O(N²) recomputation of the mixture denominators, for auditing the cache.
    pub fn recompute_mix_denominators(&self) -> Vec<f64> {
        (0..self.records.len())
            .map(|i| {
                let terms: Vec<f64> = self.records.iter().map(|s| self.features.dot(i, &s.log_params)).collect();
                log_sum_exp(&terms)
            })
            .collect()
    }

    fn check_query(&self, theta: &PolicyParams) -> Result<()> {
        if self.records.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let q = theta.spec();
        let s = &self.spec;
        if (q.kind, q.observations, q.actions, q.memory_states)
            != (s.kind, s.observations, s.actions, s.memory_states)
        {
            return Err(Error::contract(format!(
                "query class {q:?} does not match dataset class {s:?}"
            )));
        }
        Ok(())
    }

    /// `ln w_i` for every record.
    pub fn log_weights(&self, theta: &PolicyParams) -> Result<Vec<f64>> {
        self.check_query(theta)?;
        let logs = finite_logs(theta);
        let mut lw = self.features.dots(&logs);
        for (l, m) in lw.iter_mut().zip(&self.mix) {
            *l -= m;
        }
        debug_assert!(self.weights_within_ratio_bound(theta, &lw));
        Ok(lw)
    }

    /// Each weight is at most `(hi/lo)^(kT)`, `k` table factors per step,
    /// whenever the query lies inside the bounded class.
    pub fn weights_within_ratio_bound(&self, theta: &PolicyParams, lw: &[f64]) -> bool {
        let b = self.spec.bounds;
        if b.lo <= 0.0 || theta.params().iter().any(|&p| p < b.lo) {
            return true;
        }
        let hi = b.hi.max(1.0 - b.lo);
        let per_step = self.spec.factors_per_step() as f64 * (hi / b.lo).ln();
        self.records
            .iter()
            .zip(lw)
            .all(|(r, &w)| w <= per_step * r.history.len() as f64 + 1e-9)
    }

    /// Weighted importance sampling value only.
    pub fn evaluate_wis_value(&self, theta: &PolicyParams) -> Result<f64> {
        Ok(self.wis_point(theta)?.value)
    }

    /// Weighted importance sampling estimate and its gradient.
    ///
    /// `V = Σ R_i w_i / Σ w_i` and `∇V = Σ (R_i - V) w_i ∇ln Φ(h_i|θ) / Σ w_i`.
    pub fn evaluate_wis(&self, theta: &PolicyParams) -> Result<Estimate> {
        let point = self.wis_point(theta)?;
        Ok(self.wis_estimate(theta, &point))
    }

    /// WIS value at `theta`, keeping the weights for [`Self::wis_estimate`].
    pub fn wis_point(&self, theta: &PolicyParams) -> Result<WisPoint> {
        let lw = self.log_weights(theta)?;
        let (weights, total) = shifted_weights(&lw)?;
        let value = self.returns.iter().zip(&weights).map(|(r, w)| r * w).sum::<f64>() / total;
        Ok(WisPoint { weights, total, value })
    }

    /// Completes a [`WisPoint`] computed at the same `theta` with the gradient.
    pub fn wis_estimate(&self, theta: &PolicyParams, point: &WisPoint) -> Estimate {
        let WisPoint { weights, total, value } = point;
        let gradient = self.weighted_score(theta, |i| (self.returns[i] - value) * weights[i] / total);
        Estimate {
            value: *value,
            gradient,
            effective_sample_size: *total,
        }
    }

    /// Importance sampling estimate against the mixture of sampling policies.
    ///
    /// `V = Σ R_i w_i`; the estimator's `1/N` cancels the mixture's.
    pub fn evaluate_is(&self, theta: &PolicyParams) -> Result<Estimate> {
        let lw = self.log_weights(theta)?;
        let w: Vec<f64> = lw.iter().map(|l| l.exp()).collect();
        let total: f64 = w.iter().sum();
        if total == 0.0 || !total.is_finite() {
            return Err(Error::Degenerate(format!("sum of importance weights is {total}")));
        }
        let max = w.iter().copied().fold(0.0, f64::max);
        let value = self.returns.iter().zip(&w).map(|(r, w)| r * w).sum();
        let gradient = self.weighted_score(theta, |i| self.returns[i] * w[i]);
        Ok(Estimate {
            value,
            gradient,
            effective_sample_size: total / max,
        })
    }

    /// `Σ_i scale(i) ∇ln Φ(h_i | θ)`, using `∂ ln Φ / ∂θ_k = n_k / θ_k`.
    fn weighted_score(&self, theta: &PolicyParams, scale: impl Fn(usize) -> f64) -> Vec<f64> {
        let params = theta.params();
        let scales: Vec<f64> = (0..self.records.len()).map(scale).collect();
        let mut acc = vec![0.0; params.len()];
        self.features.add_scaled(&scales, &mut acc);
        for (a, p) in acc.iter_mut().zip(params) {
            if *a != 0.0 {
                *a /= p;
            }
        }
        acc
    }

    /// Mean return; an estimate of `V(θ)` only when every sample came from `θ`.
    pub fn direct_estimate(&self) -> Result<f64> {
        if self.records.is_empty() {
            return Err(Error::EmptyDataset);
        }
        Ok(self.records.iter().map(|r| r.ret).sum::<f64>() / self.records.len() as f64)
    }

    /// Index of the highest-return record, lowest index on ties.
    pub fn best_record(&self) -> Option<&SampleRecord> {
        self.records
            .iter()
            .fold(None, |best: Option<&SampleRecord>, r| match best {
                Some(b) if b.ret >= r.ret => Some(b),
                _ => Some(r),
            })
    }
}

/// `ln θ` with `ln 0` mapped to `f64::MIN`, so zero counts against zero
/// probabilities contribute 0 instead of NaN.
fn finite_logs(theta: &PolicyParams) -> Vec<f64> {
    theta.params().iter().map(|&p| if p > 0.0 { p.ln() } else { f64::MIN }).collect()
}

/// Widest class stored as dense rows.
const DENSE_WIDTH_LIMIT: usize = 256;

/// Feature counts of every record in one table: dense rows for small
/// classes, compressed sparse rows otherwise. Every likelihood the dataset
/// uses goes through this table, so cached and fresh values round alike.
#[derive(Clone, Debug)]
enum FeatureTable {
    Dense {
        width: usize,
        rows: Vec<f64>,
    },
    Sparse {
        offsets: Vec<usize>,
        index: Vec<u32>,
        count: Vec<f64>,
    },
}

impl FeatureTable {
    fn new(width: usize) -> Self {
        if width <= DENSE_WIDTH_LIMIT {
            FeatureTable::Dense {
                width,
                rows: Vec::new(),
            }
        } else {
            FeatureTable::Sparse {
                offsets: vec![0],
                index: Vec::new(),
                count: Vec::new(),
            }
        }
    }

    fn clear(&mut self) {
        match self {
            FeatureTable::Dense { rows, .. } => rows.clear(),
            FeatureTable::Sparse { offsets, index, count } => {
                offsets.truncate(1);
                index.clear();
                count.clear();
            }
        }
    }

    fn push(&mut self, idx: &[u32], cnt: &[f64]) {
        match self {
            FeatureTable::Dense { width, rows } => {
                let start = rows.len();
                rows.resize(start + *width, 0.0);
                for (&i, &c) in idx.iter().zip(cnt) {
                    rows[start + i as usize] = c;
                }
            }
            FeatureTable::Sparse { offsets, index, count } => {
                index.extend_from_slice(idx);
                count.extend_from_slice(cnt);
                offsets.push(index.len());
            }
        }
    }

    /// `ln Φ(h_i | θ)` given `logs = ln θ`.
    fn dot(&self, i: usize, logs: &[f64]) -> f64 {
        match self {
            FeatureTable::Dense { width, rows } => dense_dot(&rows[i * width..(i + 1) * width], logs),
            FeatureTable::Sparse { offsets, index, count } => {
                let r = offsets[i]..offsets[i + 1];
                sparse_dot(&index[r.clone()], &count[r], logs)
            }
        }
    }

    /// [`Self::dot`] for every row.
    fn dots(&self, logs: &[f64]) -> Vec<f64> {
        match self {
            FeatureTable::Dense { width, rows } => {
                if *width == 0 {
                    return Vec::new();
                }
                rows.chunks_exact(*width).map(|row| dense_dot(row, logs)).collect()
            }
            FeatureTable::Sparse { offsets, .. } => (0..offsets.len() - 1).map(|i| self.dot(i, logs)).collect(),
        }
    }

    /// `acc += Σ_i scale[i] · row_i`, skipping zero scales.
    fn add_scaled(&self, scale: &[f64], acc: &mut [f64]) {
        match self {
            FeatureTable::Dense { width, rows } => {
                if *width == 0 {
                    return;
                }
                for (row, &c) in rows.chunks_exact(*width).zip(scale) {
                    if c == 0.0 {
                        continue;
                    }
                    for (a, &n) in acc.iter_mut().zip(row) {
                        *a += c * n;
                    }
                }
            }
            FeatureTable::Sparse { offsets, index, count } => {
                for (span, &c) in offsets.windows(2).zip(scale) {
                    if c == 0.0 {
                        continue;
                    }
                    let r = span[0]..span[1];
                    for (&i, &n) in index[r.clone()].iter().zip(&count[r]) {
                        acc[i as usize] += c * n;
                    }
                }
            }
        }
    }
}

fn dense_dot(row: &[f64], values: &[f64]) -> f64 {
    let mut acc = [0.0f64; 4];
    let mut rc = row.chunks_exact(4);
    let mut vc = values.chunks_exact(4);
    for (r, v) in (&mut rc).zip(&mut vc) {
        for l in 0..4 {
            acc[l] += r[l] * v[l];
        }
    }
    let tail: f64 = rc.remainder().iter().zip(vc.remainder()).map(|(r, v)| r * v).sum();
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// `Σ count_k · values[index_k]` with four independent partial sums.
fn sparse_dot(index: &[u32], count: &[f64], values: &[f64]) -> f64 {
    let mut acc = [0.0f64; 4];
    let mut ic = index.chunks_exact(4);
    let mut cc = count.chunks_exact(4);
    for (i, c) in (&mut ic).zip(&mut cc) {
        for l in 0..4 {
            acc[l] += c[l] * values[i[l] as usize];
        }
    }
    let tail: f64 = ic
        .remainder()
        .iter()
        .zip(cc.remainder())
        .map(|(&i, &c)| c * values[i as usize])
        .sum();
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// `exp(lw - max lw)` and their sum.
fn shifted_weights(lw: &[f64]) -> Result<(Vec<f64>, f64)> {
    let max = lw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return Err(Error::Degenerate(format!("largest log weight is {max}")));
    }
    let w: Vec<f64> = lw.iter().map(|l| (l - max).exp()).collect();
    let total = w.iter().sum();
    Ok((w, total))
}

/// Appends `rec` to `data`.
pub fn add_data(data: &mut Dataset, rec: SampleRecord) -> Result<()> {
    data.add(rec)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{Action, Observation, Step};
    use crate::policy::PolicyBounds;

    fn spec() -> PolicyClassSpec {
        PolicyClassSpec::reactive(1, 2, PolicyBounds::default()).unwrap()
    }

    fn pol(p: f64) -> PolicyParams {
        PolicyParams::new(spec(), vec![p, 1.0 - p]).unwrap()
    }

    fn pull(a: usize, r: f64) -> History {
        History::from_steps(
            1,
            2,
            None,
            [Step {
                obs: Observation(0),
                action: Action(a),
                reward: r,
                memory: None,
            }],
        )
        .unwrap()
    }

    fn dataset(samples: &[(f64, usize, f64)]) -> Dataset {
        let mut d = Dataset::new(spec());
        for &(p, a, r) in samples {
            d.add(SampleRecord::new(pol(p), r, pull(a, r)).unwrap()).unwrap();
        }
        d
    }

    #[test]
    fn first_denominator_is_own_likelihood() {
        let d = dataset(&[(0.3, 0, 1.0)]);
        assert!((d.mix_denominators()[0] - d.records()[0].log_phi_self()).abs() < 1e-12);
    }

    #[test]
    fn identical_records_share_denominators() {
        let d = dataset(&[(0.3, 1, 2.0), (0.3, 1, 2.0)]);
        assert_eq!(d.mix_denominators()[0], d.mix_denominators()[1]);
    }

    #[test]
    fn single_record_estimates_its_return() {
        let d = dataset(&[(0.3, 0, 7.0)]);
        let e = d.evaluate_wis(&pol(0.8)).unwrap();
        assert_eq!(e.value, 7.0);
        assert!(e.gradient.iter().all(|&g| g == 0.0));
        assert_eq!(d.evaluate_is(&pol(0.3)).unwrap().value, 7.0);
    }

    #[test]
    fn on_policy_wis_is_the_mean() {
        let d = dataset(&[(0.4, 0, 1.0), (0.4, 1, 3.0), (0.4, 0, 8.0)]);
        let v = d.evaluate_wis(&pol(0.4)).unwrap().value;
        assert!((v - 4.0).abs() < 1e-12);
        assert!((d.direct_estimate().unwrap() - 4.0).abs() < 1e-12);
    }

    #[test]
    fn direct_estimate_examples() {
        assert_eq!(dataset(&[(0.5, 0, 1.0), (0.5, 1, 3.0)]).direct_estimate().unwrap(), 2.0);
        assert_eq!(dataset(&[(0.5, 0, 5.0)]).direct_estimate().unwrap(), 5.0);
        assert!(matches!(Dataset::new(spec()).direct_estimate(), Err(Error::EmptyDataset)));
    }

    #[test]
    fn is_can_exceed_max_return_but_wis_cannot() {
        let d = dataset(&[(0.1, 0, 1.0), (0.1, 0, 1.0)]);
        let q = pol(0.9);
        let is = d.evaluate_is(&q).unwrap().value;
        let wis = d.evaluate_wis(&q).unwrap().value;
        assert!(is > 1.0, "is={is}");
        assert!(wis <= 1.0);
    }

    #[test]
    fn empty_and_mismatched_queries_fail() {
        let d = Dataset::new(spec());
        assert!(matches!(d.evaluate_wis(&pol(0.5)), Err(Error::EmptyDataset)));
        let other = PolicyClassSpec::reactive(2, 2, PolicyBounds::default()).unwrap();
        let d = dataset(&[(0.5, 0, 1.0)]);
        assert!(matches!(d.evaluate_wis(&PolicyParams::uniform(&other)), Err(Error::Contract(_))));
        let bad = SampleRecord::new(PolicyParams::uniform(&other), 0.0, History::new(2, 2, None)).unwrap();
        let mut d = d;
        assert!(matches!(d.add(bad), Err(Error::Contract(_))));
    }

    #[test]
    fn incremental_denominators_match_recomputation() {
        let d = dataset(&[(0.1, 0, 1.0), (0.9, 1, 0.0), (0.5, 0, 2.0), (0.2, 1, 4.0)]);
        for (a, b) in d.mix_denominators().iter().zip(d.recompute_mix_denominators()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn best_record_prefers_lowest_index_on_ties() {
        let d = dataset(&[(0.1, 0, 2.0), (0.9, 1, 2.0), (0.5, 0, 1.0)]);
        assert_eq!(d.best_record().unwrap().policy(), &pol(0.1));
    }

    #[test]
    fn version_counts_mutations() {
        let mut d = dataset(&[(0.5, 0, 1.0), (0.5, 1, 1.0)]);
        assert_eq!(d.version(), 2);
        d.clear();
        assert_eq!(d.version(), 3);
        assert!(d.is_empty());
    }
}
