//! Inverse-probability-weighted value of a regime and the standardized
//! comparison of two regimes.

use crate::dataset::{Arm, TrialDataset};
use crate::error::{Error, Result};
use crate::estimator::RegimeModel;

/// `V(d) = sum R_i I(A_i=d_i)/pi_i / sum I(A_i=d_i)/pi_i`.
#[derive(Clone, Debug, PartialEq)]
pub struct ValueReport {
    pub value: f64,
    pub matched_weight: f64,
    pub matched_count: usize,
}

/// Standardized difference between two regimes' values.
#[derive(Clone, Debug, PartialEq)]
pub struct ComparisonReport {
    pub t_statistic: f64,
    pub variance: f64,
    /// `(V(d1), V(d0))`.
    pub values: (f64, f64),
}

fn check_len(dataset: &TrialDataset, assignments: &[Arm]) -> Result<()> {
    if assignments.len() != dataset.n() {
        return Err(Error::DimensionMismatch {
            expected: dataset.n(),
            got: assignments.len(),
        });
    }
    if let Some(a) = assignments.iter().find(|a| a.label() > dataset.n_arms()) {
        return Err(Error::InvalidParameter(format!(
            "assigned arm {a} outside 1..={}",
            dataset.n_arms()
        )));
    }
    Ok(())
}

pub fn ipw_value(dataset: &TrialDataset, assignments: &[Arm]) -> Result<ValueReport> {
    check_len(dataset, assignments)?;
    let (mut num, mut den, mut count) = (0.0, 0.0, 0usize);
    for (i, &d) in assignments.iter().enumerate() {
        if dataset.treatments()[i] == d {
            let w = 1.0 / dataset.propensities()[i];
            num += dataset.outcomes()[i] * w;
            den += w;
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::UndefinedValue);
    }
    Ok(ValueReport {
        value: num / den,
        matched_weight: den,
        matched_count: count,
    })
}

/// `Ê(R*(l))` for every arm, indexed by `Arm::index`. Requires every arm to
/// be represented, which [`TrialDataset`] guarantees.
pub fn arm_values(dataset: &TrialDataset) -> Vec<f64> {
    let l = dataset.n_arms();
    let (mut num, mut den) = (vec![0.0; l], vec![0.0; l]);
    for i in 0..dataset.n() {
        let a = dataset.treatments()[i].index();
        let w = 1.0 / dataset.propensities()[i];
        num[a] += dataset.outcomes()[i] * w;
        den[a] += w;
    }
    num.iter().zip(&den).map(|(n, d)| n / d).collect()
}

/// The arm with the largest estimated potential outcome, ties to the
/// smallest label.
pub fn noninformative_arm(dataset: &TrialDataset) -> Arm {
    let values = arm_values(dataset);
    let mut best = 0;
    for (a, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = a;
        }
    }
    Arm::from_index(best)
}

/// Constant regime sending everyone to [`noninformative_arm`].
pub fn noninformative_regime(dataset: &TrialDataset) -> RegimeModel {
    RegimeModel::Constant {
        arm: noninformative_arm(dataset),
        n_arms: dataset.n_arms(),
        p: dataset.p(),
    }
}

/// Variance estimate of `sqrt(n) (V(d1) - V(d0))`, divided by the full `n`.
pub fn value_diff_variance(dataset: &TrialDataset, d1: &[Arm], d0: &[Arm]) -> Result<f64> {
    let v1 = ipw_value(dataset, d1)?.value;
    let v0 = ipw_value(dataset, d0)?.value;
    Ok(variance_given_values(dataset, d1, d0, v1, v0))
}

fn variance_given_values(dataset: &TrialDataset, d1: &[Arm], d0: &[Arm], v1: f64, v0: f64) -> f64 {
    // the two sums are kept apart so swapping the regimes is exact
    let (mut acc1, mut acc0) = (0.0, 0.0);
    for i in 0..dataset.n() {
        let a = dataset.treatments()[i];
        let r = dataset.outcomes()[i];
        let pi = dataset.propensities()[i];
        if a == d1[i] {
            let t = (r - v1) / pi;
            acc1 += t * t;
        }
        if a == d0[i] {
            let t = (r - v0) / pi;
            acc0 += t * t;
        }
    }
    (acc1 + acc0) / dataset.n() as f64
}

/// `T = sqrt(n) (V(d1) - V(d0)) / sqrt(var)`.
///
/// A zero variance yields `T = 0` when the values agree and a signed
/// infinity otherwise.
pub fn compare_regimes(dataset: &TrialDataset, d1: &[Arm], d0: &[Arm]) -> Result<ComparisonReport> {
    let v1 = ipw_value(dataset, d1)?.value;
    let v0 = ipw_value(dataset, d0)?.value;
    let variance = variance_given_values(dataset, d1, d0, v1, v0);
    let diff = v1 - v0;
    let t_statistic = if variance > 0.0 {
        (dataset.n() as f64).sqrt() * diff / variance.sqrt()
    } else if diff == 0.0 {
        0.0
    } else {
        f64::INFINITY.copysign(diff)
    };
    Ok(ComparisonReport {
        t_statistic,
        variance,
        values: (v1, v0),
    })
}
