//! Arm-wise conditional-mean estimation inside a neighborhood and the
//! plug-in regime decision.
//!
//! For a query `x` with neighborhood interior `A_k`, tie set `B_k` and
//! `f = (k - |A_k|) / |B_k|`, the estimate for arm `l` is
//!
//! ```text
//!            sum_{A_k} R_i I(A_i=l)/pi_i + f * sum_{B_k} R_i I(A_i=l)/pi_i
//!   m_l(x) = -------------------------------------------------------------
//!              sum_{A_k} I(A_i=l)/pi_i   + f * sum_{B_k} I(A_i=l)/pi_i
//! ```
//!
//! with `0/0 = 0`. When `|B_k| = 1` this is the plain k-nearest-neighbor
//! inverse-probability-weighted mean.

use ndarray::{Array2, ArrayView2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{Arm, ScalingParams, TrialDataset};
use crate::error::{Error, Result};
use crate::neighbors::{
    find_neighbors, DiagonalMetric, NeighborSet, PointCloud, RankedNeighbors, SearchBackend,
    SearchIndex,
};

/// How arms with zero weight in the neighborhood take part in the argmax.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DecisionPolicy {
    /// Only arms observed in the neighborhood are eligible.
    #[default]
    Default,
    /// Unobserved arms compete with an estimate of 0.
    Literal,
}

/// Per-arm estimates and total neighborhood weights, indexed by `Arm::index`.
#[derive(Clone, Debug, PartialEq)]
pub struct ArmEstimates {
    pub values: Vec<f64>,
    pub weights: Vec<f64>,
}

impl ArmEstimates {
    pub fn n_arms(&self) -> usize {
        self.values.len()
    }
}

#[inline]
fn accumulate(data: &TrialDataset, i: usize, num: &mut [f64], den: &mut [f64]) {
    let a = data.treatments()[i].index();
    let w = 1.0 / data.propensities()[i];
    num[a] += data.outcomes()[i] * w;
    den[a] += w;
}

fn combine(
    int_num: &[f64],
    int_den: &[f64],
    bnd_num: &[f64],
    bnd_den: &[f64],
    fraction: f64,
) -> ArmEstimates {
    let mut values = Vec::with_capacity(int_num.len());
    let mut weights = Vec::with_capacity(int_num.len());
    for a in 0..int_num.len() {
        let num = int_num[a] + fraction * bnd_num[a];
        let den = int_den[a] + fraction * bnd_den[a];
        values.push(if den > 0.0 { num / den } else { 0.0 });
        weights.push(den);
    }
    ArmEstimates { values, weights }
}

/// Tie-averaged estimates for a precomputed neighbor set.
pub fn estimate_from_set(data: &TrialDataset, set: &NeighborSet, k: usize) -> ArmEstimates {
    let l = data.n_arms();
    let (mut int_num, mut int_den) = (vec![0.0; l], vec![0.0; l]);
    let (mut bnd_num, mut bnd_den) = (vec![0.0; l], vec![0.0; l]);
    for &i in &set.interior {
        accumulate(data, i, &mut int_num, &mut int_den);
    }
    for &i in &set.boundary {
        accumulate(data, i, &mut bnd_num, &mut bnd_den);
    }
    let fraction = (k - set.interior.len()) as f64 / set.boundary.len() as f64;
    combine(&int_num, &int_den, &bnd_num, &bnd_den, fraction)
}

/// Estimates for several neighborhood sizes from one ranked search.
///
/// Produces exactly the same floating-point results as
/// [`estimate_from_set`] applied to each `ranked.neighbor_set(k)`.
pub fn estimate_ranked(data: &TrialDataset, ranked: &RankedNeighbors, ks: &[usize]) -> Vec<ArmEstimates> {
    let l = data.n_arms();
    let entries = ranked.entries();
    let cuts: Vec<(usize, usize)> = ks.iter().map(|&k| ranked.cut(k)).collect();
    let mut out: Vec<Option<ArmEstimates>> = vec![None; ks.len()];

    // visit cuts in order of interior end so the running prefix is shared
    let mut order: Vec<usize> = (0..ks.len()).collect();
    order.sort_by_key(|&q| cuts[q].0);
    let (mut pre_num, mut pre_den) = (vec![0.0; l], vec![0.0; l]);
    let mut consumed = 0;
    for q in order {
        let (a_end, b_end) = cuts[q];
        while consumed < a_end {
            accumulate(data, entries[consumed].1, &mut pre_num, &mut pre_den);
            consumed += 1;
        }
        let (mut bnd_num, mut bnd_den) = (vec![0.0; l], vec![0.0; l]);
        for e in &entries[a_end..b_end] {
            accumulate(data, e.1, &mut bnd_num, &mut bnd_den);
        }
        let fraction = (ks[q] - a_end) as f64 / (b_end - a_end) as f64;
        out[q] = Some(combine(&pre_num, &pre_den, &bnd_num, &bnd_den, fraction));
    }
    out.into_iter().map(|e| e.expect("every k visited")).collect()
}

/// Estimates `m_l(x)` for every arm. `data` must already be in the
/// coordinate system of `x` (e.g. both scaled).
pub fn estimate_arms(
    data: &TrialDataset,
    metric: &DiagonalMetric,
    k: usize,
    x: &[f64],
    exclude: Option<usize>,
) -> Result<ArmEstimates> {
    let set = find_neighbors(metric, data.points(), x, k, exclude)?;
    Ok(estimate_from_set(data, &set, k))
}

/// Argmax over eligible arms; value ties go to the smallest label.
pub fn decide(estimates: &ArmEstimates, policy: DecisionPolicy) -> Result<Arm> {
    let mut best: Option<(usize, f64)> = None;
    for (a, (&v, &w)) in estimates.values.iter().zip(&estimates.weights).enumerate() {
        if policy == DecisionPolicy::Default && w <= 0.0 {
            continue;
        }
        match best {
            Some((_, bv)) if v <= bv => {}
            _ => best = Some((a, v)),
        }
    }
    best.map(|(a, _)| Arm::from_index(a)).ok_or(Error::NoEligibleArm)
}

/// Per-arm simple means over the k nearest subjects *within* each arm.
///
/// Distance ties at the k-th within-arm neighbor are averaged the same way
/// as the main estimator, so the result does not depend on row order.
pub fn baseline_arm_matching(
    data: &TrialDataset,
    metric: &DiagonalMetric,
    k: usize,
    x: &[f64],
) -> Result<Vec<f64>> {
    let counts = data.arm_counts();
    let mut means = Vec::with_capacity(data.n_arms());
    for (a, &count) in counts.iter().enumerate() {
        if count < k {
            return Err(Error::ArmTooSmall {
                arm: a + 1,
                available: count,
                k,
            });
        }
        let members: Vec<usize> = (0..data.n()).filter(|&i| data.treatments()[i].index() == a).collect();
        let sub = data.covariates().select(ndarray::Axis(0), &members);
        let sub = sub.as_standard_layout();
        let set = find_neighbors(metric, PointCloud::from_view(sub.view()), x, k, None)?;
        let outcome = |local: &usize| data.outcomes()[members[*local]];
        let interior: f64 = set.interior.iter().map(outcome).sum();
        let boundary: f64 = set.boundary.iter().map(outcome).sum();
        let fraction = (k - set.interior.len()) as f64 / set.boundary.len() as f64;
        means.push((interior + fraction * boundary) / k as f64);
    }
    Ok(means)
}

/// A fitted causal k-nearest-neighbor regime.
#[derive(Clone, Debug)]
pub struct CnnModel {
    training: TrialDataset,
    scaling: ScalingParams,
    metric: DiagonalMetric,
    k: usize,
    policy: DecisionPolicy,
    scaled: TrialDataset,
    index: SearchIndex,
}

impl CnnModel {
    /// `training` holds raw covariates; `scaling` maps them (and future
    /// queries) into the space where `metric` applies.
    pub fn new(
        training: TrialDataset,
        scaling: ScalingParams,
        metric: DiagonalMetric,
        k: usize,
        policy: DecisionPolicy,
    ) -> Result<Self> {
        if metric.p() != training.p() {
            return Err(Error::DimensionMismatch {
                expected: training.p(),
                got: metric.p(),
            });
        }
        if k == 0 {
            return Err(Error::InvalidParameter("k must be at least 1".into()));
        }
        if k > training.n() {
            return Err(Error::KTooLarge {
                k,
                available: training.n(),
            });
        }
        let scaled = training.with_covariates(scaling.apply(training.covariates())?)?;
        let index = SearchIndex::build(SearchBackend::Auto, &metric, scaled.points());
        Ok(CnnModel {
            training,
            scaling,
            metric,
            k,
            policy,
            scaled,
            index,
        })
    }

    pub fn training(&self) -> &TrialDataset {
        &self.training
    }

    pub fn scaling(&self) -> &ScalingParams {
        &self.scaling
    }

    pub fn metric(&self) -> &DiagonalMetric {
        &self.metric
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn policy(&self) -> DecisionPolicy {
        self.policy
    }

    /// Arm estimates at a raw (unscaled) covariate vector.
    pub fn estimate(&self, x_raw: &[f64]) -> Result<ArmEstimates> {
        let x = self.scaling.apply_row(x_raw)?;
        let set = self
            .index
            .neighbors(&self.metric, self.scaled.points(), &x, self.k, None)?;
        Ok(estimate_from_set(&self.scaled, &set, self.k))
    }

    pub fn predict(&self, x_raw: &[f64]) -> Result<Arm> {
        decide(&self.estimate(x_raw)?, self.policy)
    }
}

/// A decision rule: a fitted neighbor regime or a constant arm.
#[derive(Clone, Debug)]
pub enum RegimeModel {
    Cnn(Box<CnnModel>),
    Constant { arm: Arm, n_arms: usize, p: usize },
}

impl RegimeModel {
    pub fn constant(arm: Arm, n_arms: usize, p: usize) -> Result<Self> {
        if arm.label() > n_arms {
            return Err(Error::InvalidParameter(format!(
                "constant arm {arm} outside 1..={n_arms}"
            )));
        }
        Ok(RegimeModel::Constant { arm, n_arms, p })
    }

    pub fn cnn(model: CnnModel) -> Self {
        RegimeModel::Cnn(Box::new(model))
    }

    pub fn p(&self) -> usize {
        match self {
            RegimeModel::Cnn(m) => m.training.p(),
            RegimeModel::Constant { p, .. } => *p,
        }
    }

    pub fn n_arms(&self) -> usize {
        match self {
            RegimeModel::Cnn(m) => m.training.n_arms(),
            RegimeModel::Constant { n_arms, .. } => *n_arms,
        }
    }

    pub fn is_constant(&self) -> bool {
        matches!(self, RegimeModel::Constant { .. })
    }

    /// Recommended arm for one raw covariate vector.
    pub fn predict(&self, x_raw: &[f64]) -> Result<Arm> {
        if x_raw.len() != self.p() {
            return Err(Error::DimensionMismatch {
                expected: self.p(),
                got: x_raw.len(),
            });
        }
        match self {
            RegimeModel::Cnn(m) => m.predict(x_raw),
            RegimeModel::Constant { arm, .. } => Ok(*arm),
        }
    }

    /// Recommended arms for every row of `x_raw`, evaluated in parallel.
    pub fn predict_many(&self, x_raw: ArrayView2<'_, f64>) -> Result<Vec<Arm>> {
        if x_raw.ncols() != self.p() {
            return Err(Error::DimensionMismatch {
                expected: self.p(),
                got: x_raw.ncols(),
            });
        }
        let x: Array2<f64> = x_raw.as_standard_layout().into_owned();
        let rows = PointCloud::from_view(x.view());
        (0..rows.len())
            .into_par_iter()
            .map(|i| self.predict(rows.point(i)))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::scale_dataset;
    use ndarray::Array2;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn dataset(x: &[f64], p: usize, arms: &[usize], r: &[f64], pi: &[f64], l: usize) -> TrialDataset {
        let n = arms.len();
        TrialDataset::new(
            Array2::from_shape_vec((n, p), x.to_vec()).unwrap(),
            arms.iter().map(|&a| Arm::new(a)).collect(),
            r.to_vec(),
            pi.to_vec(),
            l,
        )
        .unwrap()
    }

    /// Direct evaluation of the tie-averaged formula with a full sort.
    fn literal_stone(data: &TrialDataset, metric: &DiagonalMetric, k: usize, x: &[f64]) -> Vec<f64> {
        let mut d: Vec<(f64, usize)> = (0..data.n())
            .map(|i| {
                let s: f64 = (0..data.p())
                    .map(|j| metric.sigma2()[j] * (data.row(i)[j] - x[j]).powi(2))
                    .sum();
                (s.sqrt(), i)
            })
            .collect();
        d.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        let rho = d[k - 1].0;
        let a_set: Vec<usize> = d.iter().filter(|e| e.0 < rho).map(|e| e.1).collect();
        let b_set: Vec<usize> = d.iter().filter(|e| e.0 == rho).map(|e| e.1).collect();
        let f = (k - a_set.len()) as f64 / b_set.len() as f64;
        (1..=data.n_arms())
            .map(|l| {
                let term = |i: &usize, with_r: bool| {
                    let ind = if data.treatments()[*i].label() == l { 1.0 } else { 0.0 };
                    let r = if with_r { data.outcomes()[*i] } else { 1.0 };
                    r * ind / data.propensities()[*i]
                };
                let num: f64 = a_set.iter().map(|i| term(i, true)).sum::<f64>()
                    + f * b_set.iter().map(|i| term(i, true)).sum::<f64>();
                let den: f64 = a_set.iter().map(|i| term(i, false)).sum::<f64>()
                    + f * b_set.iter().map(|i| term(i, false)).sum::<f64>();
                if den == 0.0 { 0.0 } else { num / den }
            })
            .collect()
    }

    /// Plain estimator over the first k neighbors in (distance, index) order.
    fn plain(data: &TrialDataset, metric: &DiagonalMetric, k: usize, x: &[f64]) -> ArmEstimates {
        let mut d: Vec<(f64, usize)> = (0..data.n())
            .map(|i| (metric.sq_distance(data.row(i), x), i))
            .collect();
        d.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let l = data.n_arms();
        let (mut a_num, mut a_den) = (vec![0.0; l], vec![0.0; l]);
        for e in &d[..k - 1] {
            accumulate(data, e.1, &mut a_num, &mut a_den);
        }
        let (mut b_num, mut b_den) = (vec![0.0; l], vec![0.0; l]);
        accumulate(data, d[k - 1].1, &mut b_num, &mut b_den);
        combine(&a_num, &a_den, &b_num, &b_den, 1.0)
    }

    #[test]
    fn single_subject_cancels_propensity() {
        let ds = dataset(&[0.0, 9.0], 1, &[2, 1], &[5.0, 1.0], &[0.5, 0.25], 2);
        let est = estimate_arms(&ds, &DiagonalMetric::unit(1), 1, &[0.3], None).unwrap();
        assert_eq!(est.values, vec![0.0, 5.0]);
        assert_eq!(est.weights[0], 0.0);
    }

    #[test]
    fn equal_weight_mean_without_ties() {
        // arm-1 neighbors (R, pi) = (1, .5), (3, .5); arm-2 neighbor farther out
        let ds = dataset(&[0.1, 0.2, 0.3, 5.0], 1, &[1, 1, 2, 2], &[1.0, 3.0, 7.0, 9.0], &[0.5; 4], 2);
        let est = estimate_arms(&ds, &DiagonalMetric::unit(1), 3, &[0.0], None).unwrap();
        assert_eq!(est.values[0], (2.0 + 6.0) / (2.0 + 2.0));
        assert_eq!(est.values[1], 7.0);
    }

    #[test]
    fn forced_boundary_tie_matches_literal_formula() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..50 {
            let n = 12;
            // points 0..n; two points share the 5th distance exactly
            let mut x: Vec<f64> = (0..n).map(|i| i as f64 + rng.random_range(0.0..0.4)).collect();
            x[4] = 4.5;
            x[5] = -4.5;
            let arms: Vec<usize> = (0..n).map(|_| rng.random_range(1..=2)).collect();
            let mut arms = arms;
            arms[0] = 1;
            arms[1] = 2;
            let r: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
            let pi: Vec<f64> = (0..n).map(|_| rng.random_range(0.2..1.0)).collect();
            let ds = dataset(&x, 1, &arms, &r, &pi, 2);
            let m = DiagonalMetric::unit(1);
            let set = find_neighbors(&m, ds.points(), &[0.0], 5, None).unwrap();
            assert_eq!(set.boundary.len(), 2);
            let est = estimate_arms(&ds, &m, 5, &[0.0], None).unwrap();
            let oracle = literal_stone(&ds, &m, 5, &[0.0]);
            for (a, b) in est.values.iter().zip(&oracle) {
                assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0), "{a} vs {b}");
            }
        }
    }

    #[test]
    fn decide_argmax_and_ties() {
        let e = ArmEstimates { values: vec![2.0, 1.0], weights: vec![1.0, 1.0] };
        assert_eq!(decide(&e, DecisionPolicy::Default).unwrap(), Arm::new(1));
        let e = ArmEstimates { values: vec![1.5, 1.5], weights: vec![1.0, 1.0] };
        assert_eq!(decide(&e, DecisionPolicy::Default).unwrap(), Arm::new(1));
        let e = ArmEstimates { values: vec![1.0, 3.0, 3.0], weights: vec![1.0, 1.0, 2.0] };
        assert_eq!(decide(&e, DecisionPolicy::Default).unwrap(), Arm::new(2));
    }

    #[test]
    fn zero_weight_arm_policy() {
        // arm 1 absent from the neighborhood, arm 2 observed with negative outcome
        let ds = dataset(&[0.0, 10.0], 1, &[2, 1], &[-1.0, 4.0], &[0.5, 0.5], 2);
        let est = estimate_arms(&ds, &DiagonalMetric::unit(1), 1, &[0.0], None).unwrap();
        assert_eq!(est.values, vec![0.0, -1.0]);
        assert_eq!(est.weights[0], 0.0);
        assert_eq!(decide(&est, DecisionPolicy::Default).unwrap(), Arm::new(2));
        assert_eq!(decide(&est, DecisionPolicy::Literal).unwrap(), Arm::new(1));
    }

    #[test]
    fn no_eligible_arm() {
        let e = ArmEstimates { values: vec![0.0, 0.0], weights: vec![0.0, 0.0] };
        assert!(matches!(decide(&e, DecisionPolicy::Default), Err(Error::NoEligibleArm)));
    }

    #[test]
    fn k_too_large() {
        let ds = dataset(&[0.0, 1.0], 1, &[1, 2], &[1.0, 2.0], &[0.5, 0.5], 2);
        assert!(matches!(
            estimate_arms(&ds, &DiagonalMetric::unit(1), 2, &[0.0], Some(0)),
            Err(Error::KTooLarge { k: 2, available: 1 })
        ));
    }

    fn random_dataset(rng: &mut ChaCha8Rng, n: usize, p: usize, l: usize, binary: bool) -> TrialDataset {
        let x: Vec<f64> = (0..n * p)
            .map(|_| if binary { rng.random_range(0..2) as f64 } else { rng.random_range(-1.0..1.0) })
            .collect();
        let mut arms: Vec<usize> = (0..n).map(|_| rng.random_range(1..=l)).collect();
        for (a, slot) in arms.iter_mut().take(l).enumerate() {
            *slot = a + 1;
        }
        let r: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
        let pi: Vec<f64> = (0..n).map(|_| rng.random_range(0.1..1.0)).collect();
        dataset(&x, p, &arms, &r, &pi, l)
    }

    #[test]
    fn ranked_path_is_bit_identical() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for case in 0..100 {
            let ds = random_dataset(&mut rng, 60, 3, 3, case % 2 == 0);
            let m = DiagonalMetric::unit(3);
            let q = [0.0, 1.0, 0.5];
            let ranked = crate::neighbors::rank_neighbors(&m, ds.points(), &q, 40, None).unwrap();
            let ks = [40, 1, 7, 7, 20, 3];
            let multi = estimate_ranked(&ds, &ranked, &ks);
            for (k, est) in ks.iter().zip(&multi) {
                assert_eq!(est, &estimate_arms(&ds, &m, *k, &q, None).unwrap());
            }
        }
    }

    #[test]
    fn stone_equals_plain_with_single_boundary() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut checked = 0;
        for _ in 0..200 {
            let ds = random_dataset(&mut rng, 40, 2, 2, false);
            let m = DiagonalMetric::unit(2);
            let q = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
            let k = rng.random_range(1..=40);
            let set = find_neighbors(&m, ds.points(), &q, k, None).unwrap();
            if set.boundary.len() == 1 {
                assert_eq!(estimate_from_set(&ds, &set, k), plain(&ds, &m, k, &q));
                checked += 1;
            }
        }
        assert!(checked > 150);
    }

    #[test]
    fn weights_normalize_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let ds = random_dataset(&mut rng, 80, 2, 2, false);
        let m = DiagonalMetric::unit(2);
        let set = find_neighbors(&m, ds.points(), &[0.1, 0.1], 9, None).unwrap();
        assert_eq!(set.boundary.len(), 1);
        let est = estimate_from_set(&ds, &set, 9);
        for arm in 0..2 {
            if est.weights[arm] > 0.0 {
                let total: f64 = set
                    .interior
                    .iter()
                    .chain(&set.boundary)
                    .filter(|&&i| ds.treatments()[i].index() == arm)
                    .map(|&i| (1.0 / ds.propensities()[i]) / est.weights[arm])
                    .sum();
                assert!((total - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn baseline_constant_outcomes() {
        let ds = dataset(
            &[0.0, 1.0, 2.0, 3.0, 4.0, 5.0],
            1,
            &[1, 1, 1, 2, 2, 2],
            &[3.0, 3.0, 3.0, -1.0, -1.0, -1.0],
            &[0.5; 6],
            2,
        );
        let means = baseline_arm_matching(&ds, &DiagonalMetric::unit(1), 2, &[2.5]).unwrap();
        assert_eq!(means, vec![3.0, -1.0]);
    }

    #[test]
    fn baseline_matches_causal_estimator_for_k1_shared_point() {
        // each arm's single nearest subject is also in the overall 2-neighborhood
        let ds = dataset(&[0.0, 0.1, 3.0, 4.0], 1, &[1, 2, 1, 2], &[2.0, 5.0, 7.0, 1.0], &[0.5; 4], 2);
        let m = DiagonalMetric::unit(1);
        let base = baseline_arm_matching(&ds, &m, 1, &[0.04]).unwrap();
        let causal = estimate_arms(&ds, &m, 2, &[0.04], None).unwrap();
        assert_eq!(base, causal.values);
    }

    #[test]
    fn baseline_matches_direct_formula() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for _ in 0..30 {
            let ds = random_dataset(&mut rng, 50, 2, 2, false);
            let m = DiagonalMetric::unit(2);
            let q = [0.2, -0.4];
            let k = 4;
            let got = baseline_arm_matching(&ds, &m, k, &q).unwrap();
            for l in 0..2 {
                let mut d: Vec<(f64, f64)> = (0..ds.n())
                    .filter(|&i| ds.treatments()[i].index() == l)
                    .map(|i| (((ds.row(i)[0] - q[0]).powi(2) + (ds.row(i)[1] - q[1]).powi(2)).sqrt(), ds.outcomes()[i]))
                    .collect();
                d.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
                let mean: f64 = d[..k].iter().map(|e| e.1).sum::<f64>() / k as f64;
                assert!((got[l] - mean).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn baseline_arm_too_small() {
        let ds = dataset(&[0.0, 1.0, 2.0], 1, &[1, 1, 2], &[1.0, 1.0, 1.0], &[0.5; 3], 2);
        assert!(matches!(
            baseline_arm_matching(&ds, &DiagonalMetric::unit(1), 2, &[0.0]),
            Err(Error::ArmTooSmall { arm: 2, available: 1, k: 2 })
        ));
    }

    #[test]
    fn whole_sample_neighborhood_is_constant() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let raw = random_dataset(&mut rng, 30, 2, 3, false);
        let (scaling, _) = scale_dataset(&raw).unwrap();
        let model = CnnModel::new(raw.clone(), scaling, DiagonalMetric::unit(2), 30, DecisionPolicy::Default).unwrap();
        // global IPW mean per arm
        let global: Vec<f64> = (0..3)
            .map(|l| {
                let (mut num, mut den) = (0.0, 0.0);
                for i in 0..raw.n() {
                    if raw.treatments()[i].index() == l {
                        num += raw.outcomes()[i] / raw.propensities()[i];
                        den += 1.0 / raw.propensities()[i];
                    }
                }
                num / den
            })
            .collect();
        let best = (0..3).fold(0, |b, l| if global[l] > global[b] { l } else { b });
        for _ in 0..20 {
            let x = [rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)];
            assert_eq!(model.predict(&x).unwrap(), Arm::from_index(best));
        }
    }

    #[test]
    fn constant_model_predicts_its_arm() {
        let m = RegimeModel::constant(Arm::new(2), 2, 3).unwrap();
        assert_eq!(m.predict(&[1.0, 2.0, 3.0]).unwrap(), Arm::new(2));
        assert!(matches!(m.predict(&[1.0]), Err(Error::DimensionMismatch { .. })));
        assert!(RegimeModel::constant(Arm::new(3), 2, 3).is_err());
    }

    proptest! {
        #[test]
        fn convex_hull_and_invariances(seed in 0u64..500, k in 1usize..30, shift in -5.0f64..5.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let ds = random_dataset(&mut rng, 30, 2, 2, seed % 3 == 0);
            let m = DiagonalMetric::unit(2);
            let q = [0.3, 0.7];
            let est = estimate_arms(&ds, &m, k, &q, None).unwrap();
            let set = find_neighbors(&m, ds.points(), &q, k, None).unwrap();
            for l in 0..2 {
                if est.weights[l] > 0.0 {
                    let rs: Vec<f64> = set.interior.iter().chain(&set.boundary)
                        .filter(|&&i| ds.treatments()[i].index() == l)
                        .map(|&i| ds.outcomes()[i]).collect();
                    let lo = rs.iter().cloned().fold(f64::INFINITY, f64::min);
                    let hi = rs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    prop_assert!(est.values[l] >= lo - 1e-12 && est.values[l] <= hi + 1e-12);
                }
            }
            // common propensity rescaling
            let scaled = ds.with_propensities_scaled(0.37).unwrap();
            let est2 = estimate_arms(&scaled, &m, k, &q, None).unwrap();
            for l in 0..2 {
                prop_assert!((est.values[l] - est2.values[l]).abs() <= 1e-12 * est.values[l].abs().max(1.0));
            }
            // outcome shift
            let shifted = ds.with_outcomes(ds.outcomes().iter().map(|r| r + shift).collect()).unwrap();
            let est3 = estimate_arms(&shifted, &m, k, &q, None).unwrap();
            for l in 0..2 {
                if est.weights[l] > 0.0 {
                    prop_assert!((est3.values[l] - est.values[l] - shift).abs() <= 1e-9);
                }
            }
            if est.weights.iter().all(|&w| w > 0.0) && (est.values[0] - est.values[1]).abs() > 1e-9 {
                prop_assert_eq!(decide(&est, DecisionPolicy::Default).unwrap(),
                    decide(&est3, DecisionPolicy::Default).unwrap());
            }
        }
    }
}
