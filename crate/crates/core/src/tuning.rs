//! Cross-validated choice of the neighborhood size `k` and the threshold
//! `delta`, scored by the pooled held-out IPW value.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::adaptive::{build_metric, fit_adaptive, importance_profile};
use crate::dataset::{scale_dataset, Arm, TrialDataset};
use crate::error::{Error, Result};
use crate::estimator::{decide, estimate_from_set, estimate_ranked, CnnModel, DecisionPolicy, RegimeModel};
use crate::neighbors::{rank_neighbors, DiagonalMetric, PointCloud, SearchBackend, SearchIndex};
use crate::value::{ipw_value, noninformative_arm};

/// Which regime family is tuned.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    /// Unit metric; only `k` is tuned.
    Cnn,
    /// Adaptive metric; `k` and `delta` are tuned.
    Acnn,
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Method::Cnn => "cnn",
            Method::Acnn => "acnn",
        })
    }
}

pub const DEFAULT_FOLDS: usize = 10;
const MAX_DEFAULT_K: usize = 256;

/// Candidate values. `delta = -inf` stands for the unit metric.
#[derive(Clone, Debug, PartialEq)]
pub struct TuneGrid {
    pub k_values: Vec<usize>,
    pub delta_values: Vec<f64>,
    pub folds: usize,
    pub seed: u64,
}

impl TuneGrid {
    /// A grid that only varies `k`.
    pub fn cnn_only(k_values: Vec<usize>, folds: usize, seed: u64) -> Self {
        TuneGrid {
            k_values,
            delta_values: vec![f64::NEG_INFINITY],
            folds,
            seed,
        }
    }

    fn validate(&self, n: usize) -> Result<()> {
        if self.k_values.is_empty() || self.k_values.contains(&0) {
            return Err(Error::InvalidParameter("k grid must be non-empty with k >= 1".into()));
        }
        if self.delta_values.is_empty() || self.delta_values.iter().any(|d| d.is_nan() || *d == f64::INFINITY) {
            return Err(Error::InvalidParameter(
                "delta grid must be non-empty, without NaN or +inf".into(),
            ));
        }
        if self.folds < 2 || self.folds > n {
            return Err(Error::InvalidParameter(format!(
                "folds must lie in 2..={n}, got {}",
                self.folds
            )));
        }
        Ok(())
    }
}

/// Arm-stratified fold labels in `0..folds`.
///
/// Each arm's subjects are shuffled and dealt round-robin, with the dealing
/// position carried over from one arm to the next so overall fold sizes
/// also stay balanced.
pub fn make_folds(treatments: &[Arm], n_arms: usize, folds: usize, seed: u64) -> Result<Vec<usize>> {
    if folds < 2 {
        return Err(Error::InvalidParameter("at least two folds are required".into()));
    }
    let mut by_arm: Vec<Vec<usize>> = vec![Vec::new(); n_arms];
    for (i, a) in treatments.iter().enumerate() {
        if a.index() >= n_arms {
            return Err(Error::InvalidParameter(format!("arm {a} outside 1..={n_arms}")));
        }
        by_arm[a.index()].push(i);
    }
    for (a, members) in by_arm.iter().enumerate() {
        if members.len() < folds {
            return Err(Error::ArmTooSmall {
                arm: a + 1,
                available: members.len(),
                k: folds,
            });
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = vec![0; treatments.len()];
    let mut offset = 0;
    for members in &mut by_arm {
        members.shuffle(&mut rng);
        for (r, &i) in members.iter().enumerate() {
            out[i] = (offset + r) % folds;
        }
        offset += members.len();
    }
    Ok(out)
}

/// `{1, 2, 4, ...}` up to `floor(0.9 n (folds-1)/folds)` and 256, with the
/// cap itself appended.
pub fn default_k_ladder(n: usize, folds: usize) -> Vec<usize> {
    let cap = (9 * n * (folds - 1) / (10 * folds)).clamp(1, MAX_DEFAULT_K);
    let mut ks = Vec::new();
    let mut k = 1;
    while k < cap {
        ks.push(k);
        k *= 2;
    }
    ks.push(cap);
    ks
}

/// Linear-interpolation quantile of sorted finite data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Delta candidates from importance scores, in descending order: one value
/// forcing the constant regime, the quartiles of the scores, and the
/// unit-metric sentinel.
pub fn delta_ladder(t: &[f64]) -> Vec<f64> {
    let mut finite: Vec<f64> = t.iter().copied().filter(|v| v.is_finite()).collect();
    finite.sort_by(f64::total_cmp);
    let mut deltas = Vec::new();
    if !finite.is_empty() {
        let max = *finite.last().unwrap();
        let top = if t.contains(&f64::INFINITY) { max + 2.0 } else { max + 1.0 };
        deltas.push(top);
        for q in [1.0, 0.75, 0.5, 0.25, 0.0] {
            deltas.push(quantile(&finite, q));
        }
    } else {
        deltas.push(1.0);
    }
    deltas.push(f64::NEG_INFINITY);
    deltas.dedup();
    deltas
}

/// Default grid for `method`. For the adaptive method the delta ladder is
/// built from importance scores on the whole (scaled) dataset at the pilot
/// size `ceil(sqrt(n))`.
pub fn default_grid(dataset: &TrialDataset, method: Method, folds: usize, seed: u64) -> Result<TuneGrid> {
    let n = dataset.n();
    if n < 10 {
        return Err(Error::InvalidParameter(format!("default grid needs n >= 10, got {n}")));
    }
    if folds < 2 {
        return Err(Error::InvalidParameter("at least two folds are required".into()));
    }
    let k_values = default_k_ladder(n, folds);
    let delta_values = match method {
        Method::Cnn => vec![f64::NEG_INFINITY],
        Method::Acnn => {
            let pilot = ((n as f64).sqrt().ceil() as usize).min(n - 1);
            let (_, scaled) = scale_dataset(dataset)?;
            delta_ladder(&importance_profile(&scaled, &[pilot])?.remove(0))
        }
    };
    Ok(TuneGrid {
        k_values,
        delta_values,
        folds,
        seed,
    })
}

/// One grid cell's held-out performance.
#[derive(Clone, Debug, PartialEq)]
pub struct CvCell {
    pub k: usize,
    pub delta: f64,
    /// Pooled held-out value; `None` when no held-out subject matched.
    pub value: Option<f64>,
    pub fold_values: Vec<Option<f64>>,
}

impl CvCell {
    /// Value used for ranking, with undefined values at `-inf`.
    pub fn score(&self) -> f64 {
        self.value.unwrap_or(f64::NEG_INFINITY)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CvReport {
    pub method: Method,
    pub cells: Vec<CvCell>,
    pub chosen: usize,
    pub folds: Vec<usize>,
}

impl CvReport {
    pub fn chosen_cell(&self) -> &CvCell {
        &self.cells[self.chosen]
    }

    pub fn chosen_k(&self) -> usize {
        self.chosen_cell().k
    }

    pub fn chosen_delta(&self) -> f64 {
        self.chosen_cell().delta
    }

    /// Tab-separated table with one row per cell and a `chosen` flag.
    pub fn to_tsv(&self) -> String {
        let n_folds = self.cells.first().map_or(0, |c| c.fold_values.len());
        let mut s = String::from("k\tdelta\tvalue\tchosen");
        for f in 0..n_folds {
            let _ = write!(s, "\tfold_{}", f + 1);
        }
        s.push('\n');
        for (c, cell) in self.cells.iter().enumerate() {
            let _ = write!(
                s,
                "{}\t{}\t{}\t{}",
                cell.k,
                format_delta(cell.delta),
                format_opt(cell.value),
                u8::from(c == self.chosen)
            );
            for v in &cell.fold_values {
                let _ = write!(s, "\t{}", format_opt(*v));
            }
            s.push('\n');
        }
        s
    }
}

pub fn format_delta(delta: f64) -> String {
    if delta == f64::NEG_INFINITY {
        "-inf".to_string()
    } else {
        delta.to_string()
    }
}

fn format_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |v| v.to_string())
}

/// Held-out assignments for every `(k, delta)` cell of one fold, indexed
/// `[k_idx][delta_idx][held_out_position]`.
fn fold_assignments(
    train: &TrialDataset,
    held_x: &[f64],
    grid: &TuneGrid,
    method: Method,
    policy: DecisionPolicy,
) -> Result<Vec<Vec<Vec<Arm>>>> {
    let (scaling, train) = scale_dataset(train)?;
    let p = train.p();
    let held = scaling.apply(ndarray::ArrayView2::from_shape((held_x.len() / p, p), held_x).expect("row-major held-out block"))?;
    let held = held.as_slice().expect("standard layout");
    let queries = PointCloud::new(held, p);
    let n_held = queries.len();
    let ks = &grid.k_values;
    let n_k = ks.len();

    let k_max = *ks.iter().max().expect("validated non-empty");
    if k_max > train.n() {
        return Err(Error::KTooLarge {
            k: k_max,
            available: train.n(),
        });
    }

    // unit-metric assignments for every k from one ranked search per query
    let unit = DiagonalMetric::unit(p);
    let mut unit_assign = vec![Vec::with_capacity(n_held); n_k];
    for q in 0..n_held {
        let ranked = rank_neighbors(&unit, train.points(), queries.point(q), k_max, None)?;
        for (kq, est) in estimate_ranked(&train, &ranked, ks).iter().enumerate() {
            unit_assign[kq].push(decide(est, policy)?);
        }
    }
    if method == Method::Cnn {
        return Ok(unit_assign
            .into_iter()
            .map(|a| vec![a; grid.delta_values.len()])
            .collect());
    }

    let constant = vec![noninformative_arm(&train); n_held];
    let profile = importance_profile(&train, ks)?;
    let mut out = Vec::with_capacity(n_k);
    for (kq, &k) in ks.iter().enumerate() {
        let mut per_delta: Vec<Vec<Arm>> = Vec::with_capacity(grid.delta_values.len());
        let mut seen: Vec<(DiagonalMetric, usize)> = Vec::new();
        for &delta in &grid.delta_values {
            if delta == f64::NEG_INFINITY {
                per_delta.push(unit_assign[kq].clone());
                continue;
            }
            let metric = build_metric(&profile[kq], delta);
            if let Some((_, idx)) = seen.iter().find(|(m, _)| *m == metric) {
                per_delta.push(per_delta[*idx].clone());
                continue;
            }
            let assign = if metric.is_zero() {
                constant.clone()
            } else {
                let index = SearchIndex::build(SearchBackend::Auto, &metric, train.points());
                (0..n_held)
                    .map(|q| {
                        let set = index.neighbors(&metric, train.points(), queries.point(q), k, None)?;
                        decide(&estimate_from_set(&train, &set, k), policy)
                    })
                    .collect::<Result<Vec<Arm>>>()?
            };
            seen.push((metric, per_delta.len()));
            per_delta.push(assign);
        }
        out.push(per_delta);
    }
    Ok(out)
}

fn value_or_none(dataset: &TrialDataset, assignments: &[Arm]) -> Result<Option<f64>> {
    match ipw_value(dataset, assignments) {
        Ok(r) => Ok(Some(r.value)),
        Err(Error::UndefinedValue) => Ok(None),
        Err(e) => Err(e),
    }
}

/// Cross-validates every grid cell. For the unit-metric method the delta
/// grid is ignored and replaced by the sentinel.
pub fn cross_validate(
    dataset: &TrialDataset,
    grid: &TuneGrid,
    method: Method,
    policy: DecisionPolicy,
) -> Result<CvReport> {
    let grid = match method {
        Method::Cnn => TuneGrid::cnn_only(grid.k_values.clone(), grid.folds, grid.seed),
        Method::Acnn => grid.clone(),
    };
    grid.validate(dataset.n())?;
    let folds = make_folds(dataset.treatments(), dataset.n_arms(), grid.folds, grid.seed)?;
    let members: Vec<Vec<usize>> = (0..grid.folds)
        .map(|f| (0..dataset.n()).filter(|&i| folds[i] == f).collect())
        .collect();

    let per_fold: Vec<Vec<Vec<Vec<Arm>>>> = members
        .par_iter()
        .map(|held| {
            let train_idx: Vec<usize> = (0..dataset.n()).filter(|i| held.binary_search(i).is_err()).collect();
            let train = dataset.subset(&train_idx)?;
            let mut held_x = Vec::with_capacity(held.len() * dataset.p());
            for &i in held {
                held_x.extend_from_slice(dataset.row(i));
            }
            fold_assignments(&train, &held_x, &grid, method, policy)
        })
        .collect::<Result<_>>()?;

    let fold_sets: Vec<TrialDataset> = members
        .iter()
        .map(|m| dataset.subset(m))
        .collect::<Result<_>>()?;
    let mut cells = Vec::with_capacity(grid.k_values.len() * grid.delta_values.len());
    for (kq, &k) in grid.k_values.iter().enumerate() {
        for (dq, &delta) in grid.delta_values.iter().enumerate() {
            let mut pooled = vec![Arm::new(1); dataset.n()];
            let mut fold_values = Vec::with_capacity(grid.folds);
            for (f, held) in members.iter().enumerate() {
                let assign = &per_fold[f][kq][dq];
                for (pos, &i) in held.iter().enumerate() {
                    pooled[i] = assign[pos];
                }
                fold_values.push(fold_value(&fold_sets[f], assign)?);
            }
            cells.push(CvCell {
                k,
                delta,
                value: value_or_none(dataset, &pooled)?,
                fold_values,
            });
        }
    }
    let chosen = choose(&cells).ok_or(Error::TuningFailed)?;
    Ok(CvReport {
        method,
        cells,
        chosen,
        folds,
    })
}

fn fold_value(held: &TrialDataset, assign: &[Arm]) -> Result<Option<f64>> {
    value_or_none(held, assign)
}

/// Index of the best defined cell: highest value, then larger delta, then
/// smaller k.
fn choose(cells: &[CvCell]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (c, cell) in cells.iter().enumerate() {
        if cell.value.is_none() {
            continue;
        }
        best = match best {
            None => Some(c),
            Some(b) => {
                let cur = &cells[b];
                let better = cell
                    .score()
                    .total_cmp(&cur.score())
                    .then(cell.delta.total_cmp(&cur.delta))
                    .then(cur.k.cmp(&cell.k))
                    .is_gt();
                Some(if better { c } else { b })
            }
        };
    }
    best
}

/// Fits the final regime on the whole dataset at the chosen cell.
pub fn fit_chosen(
    dataset: &TrialDataset,
    method: Method,
    k: usize,
    delta: f64,
    policy: DecisionPolicy,
) -> Result<(RegimeModel, Option<crate::adaptive::ImportanceReport>)> {
    match method {
        Method::Cnn => {
            let (scaling, _) = scale_dataset(dataset)?;
            let model = CnnModel::new(dataset.clone(), scaling, DiagonalMetric::unit(dataset.p()), k, policy)?;
            Ok((RegimeModel::cnn(model), None))
        }
        Method::Acnn => {
            let fit = fit_adaptive(dataset, k, delta, policy)?;
            Ok((fit.model, Some(fit.importance)))
        }
    }
}

/// Cross-validates, then refits on the whole dataset at the chosen cell.
pub fn tune_and_fit(
    dataset: &TrialDataset,
    grid: &TuneGrid,
    method: Method,
    policy: DecisionPolicy,
) -> Result<(CvReport, RegimeModel, Option<crate::adaptive::ImportanceReport>)> {
    let report = cross_validate(dataset, grid, method, policy)?;
    let (model, importance) = fit_chosen(dataset, method, report.chosen_k(), report.chosen_delta(), policy)?;
    Ok((report, model, importance))
}
