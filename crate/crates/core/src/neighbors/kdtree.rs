use std::collections::BinaryHeap;

use super::{assemble, DiagonalMetric, NeighborSet, PointCloud};

const LEAF_SIZE: usize = 16;

#[derive(Clone, Debug)]
struct Node {
    /// Tight bounding box over the node's points, in active coordinates.
    lo: Vec<f64>,
    hi: Vec<f64>,
    start: usize,
    end: usize,
    children: Option<(usize, usize)>,
}

/// k-d tree over the covariates a metric actually uses.
///
/// Pruning uses the weighted box gap, accumulated with the same expression
/// and order as [`DiagonalMetric::sq_distance`]. Rounding is monotone, so the
/// bound never exceeds the computed distance of a point inside the box and
/// pruning cannot drop a true neighbor or tie.
#[derive(Clone, Debug)]
pub struct KdTree {
    active: Vec<usize>,
    weights: Vec<f64>,
    m: usize,
    /// Active coordinates in tree order, row-major.
    coords: Vec<f64>,
    /// Original point index for each tree slot.
    ids: Vec<usize>,
    nodes: Vec<Node>,
}

#[derive(PartialEq)]
struct HeapItem(f64);

impl Eq for HeapItem {}

impl PartialOrd for HeapItem {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for HeapItem {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.0.total_cmp(&other.0)
    }
}

impl KdTree {
    pub fn build(metric: &DiagonalMetric, points: PointCloud<'_>) -> KdTree {
        let dims = metric.active_dims();
        let m = dims.len();
        let weights: Vec<f64> = dims.iter().map(|&j| metric.sigma2()[j]).collect();
        let n = points.len();
        let mut projected = Vec::with_capacity(n * m);
        for i in 0..n {
            let x = points.point(i);
            projected.extend(dims.iter().map(|&j| x[j]));
        }
        let mut ids: Vec<usize> = (0..n).collect();
        let mut nodes = Vec::new();
        if n > 0 && m > 0 {
            build_node(&projected, m, &mut ids, 0, n, &mut nodes);
        }
        let mut coords = Vec::with_capacity(n * m);
        for &i in &ids {
            coords.extend_from_slice(&projected[i * m..(i + 1) * m]);
        }
        KdTree {
            active: dims,
            weights,
            m,
            coords,
            ids,
            nodes,
        }
    }

    #[inline]
    fn point_sq(&self, slot: usize, q: &[f64]) -> f64 {
        let x = &self.coords[slot * self.m..(slot + 1) * self.m];
        let mut acc = 0.0;
        for ((&w, &a), &b) in self.weights.iter().zip(x).zip(q) {
            let d = a - b;
            acc += w * (d * d);
        }
        acc
    }

    #[inline]
    fn box_sq(&self, node: &Node, q: &[f64]) -> f64 {
        let mut acc = 0.0;
        for (j, (&w, &b)) in self.weights.iter().zip(q).enumerate() {
            let d = if b < node.lo[j] {
                node.lo[j] - b
            } else if b > node.hi[j] {
                b - node.hi[j]
            } else {
                0.0
            };
            acc += w * (d * d);
        }
        acc
    }

    /// Same contract as [`super::find_neighbors`]; `k` must already be
    /// validated against the effective sample size.
    pub fn neighbors(&self, query: &[f64], k: usize, exclude: Option<usize>) -> NeighborSet {
        let dims_q = self.project_query(query);
        let radius_sq = self.kth_distance(&dims_q, k, exclude);
        let mut within = Vec::new();
        self.collect_within(0, &dims_q, radius_sq, exclude, &mut within);
        assemble(within, radius_sq)
    }

    fn project_query(&self, query: &[f64]) -> Vec<f64> {
        self.active.iter().map(|&j| query[j]).collect()
    }

    fn kth_distance(&self, q: &[f64], k: usize, exclude: Option<usize>) -> f64 {
        let mut heap: BinaryHeap<HeapItem> = BinaryHeap::with_capacity(k + 1);
        let mut stack = vec![0usize];
        while let Some(idx) = stack.pop() {
            let node = &self.nodes[idx];
            if heap.len() == k && self.box_sq(node, q) >= heap.peek().unwrap().0 {
                continue;
            }
            match node.children {
                None => {
                    for slot in node.start..node.end {
                        if Some(self.ids[slot]) == exclude {
                            continue;
                        }
                        let d2 = self.point_sq(slot, q);
                        if heap.len() < k {
                            heap.push(HeapItem(d2));
                        } else if d2 < heap.peek().unwrap().0 {
                            heap.pop();
                            heap.push(HeapItem(d2));
                        }
                    }
                }
                Some((left, right)) => {
                    // visit the nearer child first
                    let dl = self.box_sq(&self.nodes[left], q);
                    let dr = self.box_sq(&self.nodes[right], q);
                    if dl <= dr {
                        stack.push(right);
                        stack.push(left);
                    } else {
                        stack.push(left);
                        stack.push(right);
                    }
                }
            }
        }
        heap.peek().map(|h| h.0).unwrap_or(0.0)
    }

    fn collect_within(
        &self,
        idx: usize,
        q: &[f64],
        radius_sq: f64,
        exclude: Option<usize>,
        out: &mut Vec<(f64, usize)>,
    ) {
        let node = &self.nodes[idx];
        if self.box_sq(node, q) > radius_sq {
            return;
        }
        match node.children {
            None => {
                for slot in node.start..node.end {
                    let id = self.ids[slot];
                    if Some(id) == exclude {
                        continue;
                    }
                    let d2 = self.point_sq(slot, q);
                    if d2 <= radius_sq {
                        out.push((d2, id));
                    }
                }
            }
            Some((left, right)) => {
                self.collect_within(left, q, radius_sq, exclude, out);
                self.collect_within(right, q, radius_sq, exclude, out);
            }
        }
    }
}

fn bounds(projected: &[f64], m: usize, ids: &[usize]) -> (Vec<f64>, Vec<f64>) {
    let mut lo = vec![f64::INFINITY; m];
    let mut hi = vec![f64::NEG_INFINITY; m];
    for &i in ids {
        for j in 0..m {
            let v = projected[i * m + j];
            lo[j] = lo[j].min(v);
            hi[j] = hi[j].max(v);
        }
    }
    (lo, hi)
}

fn build_node(
    projected: &[f64],
    m: usize,
    ids: &mut [usize],
    start: usize,
    end: usize,
    nodes: &mut Vec<Node>,
) -> usize {
    let (lo, hi) = bounds(projected, m, &ids[start..end]);
    let me = nodes.len();
    nodes.push(Node {
        lo: lo.clone(),
        hi: hi.clone(),
        start,
        end,
        children: None,
    });
    if end - start <= LEAF_SIZE {
        return me;
    }
    // split on the widest coordinate at the median
    let axis = (0..m)
        .max_by(|&a, &b| (hi[a] - lo[a]).total_cmp(&(hi[b] - lo[b])))
        .unwrap_or(0);
    if hi[axis] <= lo[axis] {
        // all points coincide in the active coordinates
        return me;
    }
    let mid = (end - start) / 2;
    ids[start..end].select_nth_unstable_by(mid, |&a, &b| {
        projected[a * m + axis].total_cmp(&projected[b * m + axis])
    });
    let split = start + mid;
    let left = build_node(projected, m, ids, start, split, nodes);
    let right = build_node(projected, m, ids, split, end, nodes);
    nodes[me].children = Some((left, right));
    me
}
