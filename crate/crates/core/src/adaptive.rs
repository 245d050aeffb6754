//! Covariate importance scores and the adaptive diagonal metric.
//!
//! The importance of covariate `j` is the standardized value difference
//! `T_j` between a causal k-NN regime that sees only covariate `j` and the
//! non-informative constant regime. The adaptive metric weights covariate
//! `j` by `(T_j - delta)_+`, so covariates scoring at or below `delta` are
//! dropped.

use rayon::prelude::*;

use crate::dataset::{scale_dataset, Arm, TrialDataset};
use crate::error::{Error, Result};
use crate::estimator::{decide, estimate_ranked, CnnModel, DecisionPolicy, RegimeModel};
use crate::neighbors::{DiagonalMetric, SortedLine};
use crate::value::{compare_regimes, noninformative_arm};

/// Per-covariate scores and the metric they induce.
#[derive(Clone, Debug, PartialEq)]
pub struct ImportanceReport {
    pub t: Vec<f64>,
    pub delta: f64,
    pub sigma2: Vec<f64>,
    pub k_used: usize,
}

/// Leave-one-out univariate regime assignments `d^j_i` for each `k` in `ks`.
///
/// Returns one assignment vector per entry of `ks`.
pub fn univariate_loo_assignments(
    dataset: &TrialDataset,
    j: usize,
    ks: &[usize],
    policy: DecisionPolicy,
) -> Result<Vec<Vec<Arm>>> {
    if j >= dataset.p() {
        return Err(Error::InvalidParameter(format!(
            "covariate index {j} outside 0..{}",
            dataset.p()
        )));
    }
    let n = dataset.n();
    let k_max = ks.iter().copied().max().unwrap_or(0);
    if ks.contains(&0) || ks.is_empty() {
        return Err(Error::InvalidParameter("k must be at least 1".into()));
    }
    if k_max + 1 > n {
        return Err(Error::KTooLarge {
            k: k_max,
            available: n.saturating_sub(1),
        });
    }
    let line = SortedLine::new((0..n).map(|i| dataset.row(i)[j]));
    let mut out = vec![Vec::with_capacity(n); ks.len()];
    for i in 0..n {
        let ranked = line.rank(dataset.row(i)[j], k_max, Some(i));
        for (q, est) in estimate_ranked(dataset, &ranked, ks).iter().enumerate() {
            out[q].push(decide(est, policy)?);
        }
    }
    Ok(out)
}

/// `T_j` for every covariate and every `k` in `ks`; `result[q][j]` belongs
/// to `ks[q]`. Covariates are processed in parallel.
pub fn importance_profile(dataset: &TrialDataset, ks: &[usize]) -> Result<Vec<Vec<f64>>> {
    let d0 = vec![noninformative_arm(dataset); dataset.n()];
    let per_covariate: Vec<Vec<f64>> = (0..dataset.p())
        .into_par_iter()
        .map(|j| {
            let regimes = univariate_loo_assignments(dataset, j, ks, DecisionPolicy::Default)?;
            regimes
                .iter()
                .map(|dj| Ok(compare_regimes(dataset, dj, &d0)?.t_statistic))
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<_>>()?;
    Ok((0..ks.len())
        .map(|q| per_covariate.iter().map(|t| t[q]).collect())
        .collect())
}

/// `T_j` for a single covariate (zero-based `j`) on `dataset` as given.
pub fn covariate_importance(dataset: &TrialDataset, j: usize, k: usize) -> Result<f64> {
    let d0 = vec![noninformative_arm(dataset); dataset.n()];
    let dj = univariate_loo_assignments(dataset, j, &[k], DecisionPolicy::Default)?;
    Ok(compare_regimes(dataset, &dj[0], &d0)?.t_statistic)
}

/// Replaces `+inf` scores by the largest finite score plus one.
fn clamp_scores(t: &[f64]) -> Vec<f64> {
    let finite_max = t
        .iter()
        .copied()
        .filter(|v| v.is_finite())
        .fold(f64::NEG_INFINITY, f64::max);
    let ceiling = if finite_max.is_finite() { finite_max + 1.0 } else { 1.0 };
    t.iter()
        .map(|&v| if v == f64::INFINITY { ceiling } else { v })
        .collect()
}

/// `sigma_j^2 = (T_j - delta)_+`.
///
/// `delta = -inf` is the unit-metric sentinel (the limit in which every
/// weight is effectively equal) and returns the Euclidean metric.
pub fn build_metric(t: &[f64], delta: f64) -> DiagonalMetric {
    if delta == f64::NEG_INFINITY {
        return DiagonalMetric::unit(t.len());
    }
    let sigma2 = clamp_scores(t)
        .into_iter()
        .map(|v| (v - delta).max(0.0))
        .collect();
    DiagonalMetric::new(sigma2).expect("positive parts of finite scores are valid weights")
}

/// Importance scores on scaled covariates and the resulting metric.
pub fn importance_report(dataset: &TrialDataset, k: usize, delta: f64) -> Result<ImportanceReport> {
    let (_, scaled) = scale_dataset(dataset)?;
    let t = importance_profile(&scaled, &[k])?.remove(0);
    let sigma2 = build_metric(&t, delta).sigma2().to_vec();
    Ok(ImportanceReport {
        t,
        delta,
        sigma2,
        k_used: k,
    })
}

/// A fitted adaptive regime along with the scores that shaped it.
#[derive(Clone, Debug)]
pub struct AdaptiveFit {
    pub model: RegimeModel,
    pub importance: ImportanceReport,
}

/// Scale, score every covariate, build the metric, and fit the regime.
/// An all-zero metric yields the non-informative constant regime.
pub fn fit_adaptive(
    dataset: &TrialDataset,
    k: usize,
    delta: f64,
    policy: DecisionPolicy,
) -> Result<AdaptiveFit> {
    let (scaling, scaled) = scale_dataset(dataset)?;
    let t = importance_profile(&scaled, &[k])?.remove(0);
    let metric = build_metric(&t, delta);
    let importance = ImportanceReport {
        t,
        delta,
        sigma2: metric.sigma2().to_vec(),
        k_used: k,
    };
    let model = if metric.is_zero() {
        RegimeModel::constant(noninformative_arm(dataset), dataset.n_arms(), dataset.p())?
    } else {
        RegimeModel::cnn(CnnModel::new(dataset.clone(), scaling, metric, k, policy)?)
    };
    Ok(AdaptiveFit { model, importance })
}
