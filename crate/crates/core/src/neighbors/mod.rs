//! Diagonal-metric distances and exact k-nearest-neighbor retrieval with
//! explicit tie sets.
//!
//! All comparisons are made on weighted squared distances
//! `sum_j s_j (x_j - y_j)^2`, accumulated in ascending covariate order and
//! skipping covariates with zero weight. Every backend uses this exact
//! expression, so the interior/boundary split is reproducible bit for bit
//! across backends.

mod kdtree;
mod line;

use std::cmp::Ordering;

use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use kdtree::KdTree;
pub use line::SortedLine;

/// Diagonal metric `d(x, y) = {(x - y)^T diag(sigma2) (x - y)}^{1/2}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiagonalMetric {
    sigma2: Vec<f64>,
}

impl DiagonalMetric {
    pub fn new(sigma2: Vec<f64>) -> Result<Self> {
        if let Some(j) = sigma2.iter().position(|s| !s.is_finite() || *s < 0.0) {
            return Err(Error::InvalidParameter(format!(
                "metric weight {} for covariate {} must be finite and non-negative",
                sigma2[j],
                j + 1
            )));
        }
        Ok(DiagonalMetric { sigma2 })
    }

    /// Plain Euclidean metric.
    pub fn unit(p: usize) -> Self {
        DiagonalMetric { sigma2: vec![1.0; p] }
    }

    /// Unit weight on covariate `j`, zero elsewhere.
    pub fn single(p: usize, j: usize) -> Self {
        let mut sigma2 = vec![0.0; p];
        sigma2[j] = 1.0;
        DiagonalMetric { sigma2 }
    }

    pub fn sigma2(&self) -> &[f64] {
        &self.sigma2
    }

    pub fn p(&self) -> usize {
        self.sigma2.len()
    }

    /// Covariates with positive weight.
    pub fn active_dims(&self) -> Vec<usize> {
        (0..self.p()).filter(|&j| self.sigma2[j] > 0.0).collect()
    }

    pub fn is_zero(&self) -> bool {
        self.sigma2.iter().all(|&s| s == 0.0)
    }

    /// Every weight multiplied by `c`.
    pub fn scaled(&self, c: f64) -> Result<Self> {
        DiagonalMetric::new(self.sigma2.iter().map(|s| s * c).collect())
    }

    /// Weighted squared distance. Callers guarantee matching lengths.
    #[inline]
    pub fn sq_distance(&self, x: &[f64], y: &[f64]) -> f64 {
        debug_assert_eq!(x.len(), self.p());
        debug_assert_eq!(y.len(), self.p());
        let mut acc = 0.0;
        for ((&s, &a), &b) in self.sigma2.iter().zip(x).zip(y) {
            if s != 0.0 {
                let d = a - b;
                acc += s * (d * d);
            }
        }
        acc
    }

    pub fn distance(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        for len in [x.len(), y.len()] {
            if len != self.p() {
                return Err(Error::DimensionMismatch {
                    expected: self.p(),
                    got: len,
                });
            }
        }
        Ok(self.sq_distance(x, y).sqrt())
    }
}

/// Row-major borrowed point matrix.
#[derive(Clone, Copy, Debug)]
pub struct PointCloud<'a> {
    data: &'a [f64],
    p: usize,
}

impl<'a> PointCloud<'a> {
    pub fn new(data: &'a [f64], p: usize) -> Self {
        assert!(p > 0 && data.len().is_multiple_of(p), "data length must be a multiple of p");
        PointCloud { data, p }
    }

    /// Panics unless the view is in standard (row-major, contiguous) layout.
    pub fn from_view(view: ArrayView2<'a, f64>) -> Self {
        let p = view.ncols();
        let data = view.to_slice().expect("point matrix must be row-major contiguous");
        PointCloud { data, p }
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.p
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn p(&self) -> usize {
        self.p
    }

    #[inline]
    pub fn point(&self, i: usize) -> &'a [f64] {
        &self.data[i * self.p..(i + 1) * self.p]
    }
}

/// Neighborhood of a query: strict interior `A_k`, the tie set `B_k` at the
/// k-th distance, and that distance.
///
/// `interior` is ordered by (distance, index); `boundary` by index.
#[derive(Clone, Debug, PartialEq)]
pub struct NeighborSet {
    pub interior: Vec<usize>,
    pub boundary: Vec<usize>,
    pub radius: f64,
    pub radius_sq: f64,
}

#[inline]
pub(crate) fn by_distance_then_index(a: &(f64, usize), b: &(f64, usize)) -> Ordering {
    a.0.total_cmp(&b.0).then(a.1.cmp(&b.1))
}

/// Search strategy. All backends return identical sets.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum SearchBackend {
    /// Linear scan with partial selection.
    Naive,
    /// k-d tree over the metric's active covariates.
    KdTree,
    /// k-d tree for large, low-dimensional problems, scan otherwise.
    #[default]
    Auto,
}

const KD_MIN_POINTS: usize = 256;
const KD_MAX_ACTIVE_DIMS: usize = 8;
/// Under `Auto`, the tree only answers queries with `k <= n / 16`.
const KD_MAX_K_FRACTION: usize = 16;

impl SearchBackend {
    fn use_tree(self, n: usize, active: usize) -> bool {
        match self {
            SearchBackend::Naive => false,
            SearchBackend::KdTree => active > 0,
            SearchBackend::Auto => {
                n >= KD_MIN_POINTS && active > 0 && active <= KD_MAX_ACTIVE_DIMS
            }
        }
    }
}

fn check_query(metric: &DiagonalMetric, points: &PointCloud<'_>, query: &[f64]) -> Result<()> {
    if points.p() != metric.p() {
        return Err(Error::DimensionMismatch {
            expected: metric.p(),
            got: points.p(),
        });
    }
    if query.len() != metric.p() {
        return Err(Error::DimensionMismatch {
            expected: metric.p(),
            got: query.len(),
        });
    }
    Ok(())
}

fn effective_n(n: usize, exclude: Option<usize>) -> usize {
    match exclude {
        Some(i) if i < n => n - 1,
        _ => n,
    }
}

fn check_k(k: usize, n: usize, exclude: Option<usize>) -> Result<()> {
    let available = effective_n(n, exclude);
    if k == 0 {
        return Err(Error::InvalidParameter("k must be at least 1".into()));
    }
    if k > available {
        return Err(Error::KTooLarge { k, available });
    }
    Ok(())
}

/// Splits candidates (all with `d2 <= radius_sq`) into a canonical set.
fn assemble(mut within: Vec<(f64, usize)>, radius_sq: f64) -> NeighborSet {
    within.sort_unstable_by(by_distance_then_index);
    let cut = within.partition_point(|e| e.0 < radius_sq);
    NeighborSet {
        interior: within[..cut].iter().map(|e| e.1).collect(),
        boundary: within[cut..].iter().map(|e| e.1).collect(),
        radius: radius_sq.sqrt(),
        radius_sq,
    }
}

/// All non-excluded points with their weighted squared distance to `query`.
fn scan(
    metric: &DiagonalMetric,
    points: &PointCloud<'_>,
    query: &[f64],
    exclude: Option<usize>,
) -> Vec<(f64, usize)> {
    (0..points.len())
        .filter(|&i| Some(i) != exclude)
        .map(|i| (metric.sq_distance(points.point(i), query), i))
        .collect()
}

/// Keeps the entries at or inside the `rank`-th smallest distance and
/// returns that distance.
fn truncate_at_rank(cand: &mut Vec<(f64, usize)>, rank: usize) -> f64 {
    let (_, kth, _) = cand.select_nth_unstable_by(rank - 1, by_distance_then_index);
    let radius_sq = kth.0;
    cand.retain(|e| e.0 <= radius_sq);
    radius_sq
}

/// Exact neighbor set of `query` among `points`, optionally leaving out one
/// point (leave-one-out evaluation).
pub fn find_neighbors(
    metric: &DiagonalMetric,
    points: PointCloud<'_>,
    query: &[f64],
    k: usize,
    exclude: Option<usize>,
) -> Result<NeighborSet> {
    find_neighbors_with(SearchBackend::Auto, metric, points, query, k, exclude)
}

pub fn find_neighbors_with(
    backend: SearchBackend,
    metric: &DiagonalMetric,
    points: PointCloud<'_>,
    query: &[f64],
    k: usize,
    exclude: Option<usize>,
) -> Result<NeighborSet> {
    check_query(metric, &points, query)?;
    check_k(k, points.len(), exclude)?;
    // building a tree for a single query never pays off, so Auto scans here
    if backend == SearchBackend::KdTree && backend.use_tree(points.len(), metric.active_dims().len()) {
        let tree = KdTree::build(metric, points);
        return Ok(tree.neighbors(query, k, exclude));
    }
    Ok(naive_neighbors(metric, points, query, k, exclude))
}

fn naive_neighbors(
    metric: &DiagonalMetric,
    points: PointCloud<'_>,
    query: &[f64],
    k: usize,
    exclude: Option<usize>,
) -> NeighborSet {
    let mut cand = scan(metric, &points, query, exclude);
    let radius_sq = truncate_at_rank(&mut cand, k);
    assemble(cand, radius_sq)
}

/// A reusable search structure bound to one metric and point set.
#[derive(Clone, Debug)]
pub enum SearchIndex {
    Naive,
    /// With `auto` set, large neighborhoods fall back to a scan.
    Tree { tree: KdTree, auto: bool },
}

impl SearchIndex {
    pub fn build(backend: SearchBackend, metric: &DiagonalMetric, points: PointCloud<'_>) -> Self {
        if backend.use_tree(points.len(), metric.active_dims().len()) {
            SearchIndex::Tree {
                tree: KdTree::build(metric, points),
                auto: backend == SearchBackend::Auto,
            }
        } else {
            SearchIndex::Naive
        }
    }

    /// `metric` and `points` must be the ones the index was built with.
    pub fn neighbors(
        &self,
        metric: &DiagonalMetric,
        points: PointCloud<'_>,
        query: &[f64],
        k: usize,
        exclude: Option<usize>,
    ) -> Result<NeighborSet> {
        check_query(metric, &points, query)?;
        check_k(k, points.len(), exclude)?;
        Ok(match self {
            SearchIndex::Naive => naive_neighbors(metric, points, query, k, exclude),
            SearchIndex::Tree { auto: true, .. } if k * KD_MAX_K_FRACTION > points.len() => {
                naive_neighbors(metric, points, query, k, exclude)
            }
            SearchIndex::Tree { tree, .. } => tree.neighbors(query, k, exclude),
        })
    }
}

/// Neighbors in (distance, index) order, complete through the tie group
/// that contains rank `k_max`. Supports evaluating every `k <= k_max` from
/// a single search.
#[derive(Clone, Debug, PartialEq)]
pub struct RankedNeighbors {
    entries: Vec<(f64, usize)>,
    /// Start offset of each tie group, plus a final sentinel at `entries.len()`.
    group_starts: Vec<usize>,
    k_max: usize,
}

impl RankedNeighbors {
    pub(crate) fn from_sorted(entries: Vec<(f64, usize)>, k_max: usize) -> Self {
        debug_assert!(entries.len() >= k_max);
        let mut group_starts = Vec::new();
        for (pos, e) in entries.iter().enumerate() {
            if pos == 0 || e.0 != entries[pos - 1].0 {
                group_starts.push(pos);
            }
        }
        group_starts.push(entries.len());
        RankedNeighbors {
            entries,
            group_starts,
            k_max,
        }
    }

    pub fn k_max(&self) -> usize {
        self.k_max
    }

    /// `(index, squared distance)` in canonical order.
    pub fn entries(&self) -> &[(f64, usize)] {
        &self.entries
    }

    /// Offsets `(interior_end, boundary_end)` into `entries` for a given k:
    /// `entries[..interior_end]` is `A_k`, `entries[interior_end..boundary_end]`
    /// is `B_k`.
    pub fn cut(&self, k: usize) -> (usize, usize) {
        assert!(k >= 1 && k <= self.k_max, "k outside 1..=k_max");
        // group containing position k - 1
        let g = self.group_starts.partition_point(|&s| s < k) - 1;
        (self.group_starts[g], self.group_starts[g + 1])
    }

    pub fn neighbor_set(&self, k: usize) -> NeighborSet {
        let (a, b) = self.cut(k);
        let radius_sq = self.entries[a].0;
        NeighborSet {
            interior: self.entries[..a].iter().map(|e| e.1).collect(),
            boundary: self.entries[a..b].iter().map(|e| e.1).collect(),
            radius: radius_sq.sqrt(),
            radius_sq,
        }
    }
}

/// Ranked neighbors by linear scan.
pub fn rank_neighbors(
    metric: &DiagonalMetric,
    points: PointCloud<'_>,
    query: &[f64],
    k_max: usize,
    exclude: Option<usize>,
) -> Result<RankedNeighbors> {
    check_query(metric, &points, query)?;
    check_k(k_max, points.len(), exclude)?;
    let mut cand = scan(metric, &points, query, exclude);
    truncate_at_rank(&mut cand, k_max);
    cand.sort_unstable_by(by_distance_then_index);
    Ok(RankedNeighbors::from_sorted(cand, k_max))
}
