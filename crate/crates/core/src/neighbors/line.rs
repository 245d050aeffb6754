use super::RankedNeighbors;

/// One covariate sorted once, answering ranked univariate queries by
/// walking outward from the query position.
///
/// A query costs `O(log n + k_max + ties)` rather than a full scan. The
/// squared distance is `(x - q)^2`, bit-identical to the unit-weight
/// single-covariate [`super::DiagonalMetric`], so results coincide with
/// [`super::rank_neighbors`] under that metric.
#[derive(Clone, Debug)]
pub struct SortedLine {
    /// (value, original index), ascending by value then index.
    sorted: Vec<(f64, usize)>,
}

impl SortedLine {
    pub fn new(values: impl IntoIterator<Item = f64>) -> Self {
        let mut sorted: Vec<(f64, usize)> = values.into_iter().enumerate().map(|(i, v)| (v, i)).collect();
        sorted.sort_unstable_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        SortedLine { sorted }
    }

    pub fn len(&self) -> usize {
        self.sorted.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sorted.is_empty()
    }

    /// Ranked neighbors of `q`. `k_max` must not exceed the number of
    /// non-excluded points.
    pub fn rank(&self, q: f64, k_max: usize, exclude: Option<usize>) -> RankedNeighbors {
        let sq = |v: f64| {
            let d = v - q;
            d * d
        };
        let split = self.sorted.partition_point(|e| e.0 < q);
        // left walks down from split - 1, right walks up from split
        let mut left = split;
        let mut right = split;
        let n = self.sorted.len();
        let mut entries: Vec<(f64, usize)> = Vec::with_capacity(k_max + 8);
        let mut group: Vec<(f64, usize)> = Vec::new();
        loop {
            while left > 0 && Some(self.sorted[left - 1].1) == exclude {
                left -= 1;
            }
            while right < n && Some(self.sorted[right].1) == exclude {
                right += 1;
            }
            if entries.len() >= k_max {
                break;
            }
            let dl = (left > 0).then(|| sq(self.sorted[left - 1].0));
            let dr = (right < n).then(|| sq(self.sorted[right].0));
            let d = match (dl, dr) {
                (Some(a), Some(b)) => a.min(b),
                (Some(a), None) => a,
                (None, Some(b)) => b,
                (None, None) => break,
            };
            group.clear();
            while left > 0 {
                let (v, i) = self.sorted[left - 1];
                if Some(i) == exclude {
                    left -= 1;
                    continue;
                }
                if sq(v) != d {
                    break;
                }
                group.push((d, i));
                left -= 1;
            }
            while right < n {
                let (v, i) = self.sorted[right];
                if Some(i) == exclude {
                    right += 1;
                    continue;
                }
                if sq(v) != d {
                    break;
                }
                group.push((d, i));
                right += 1;
            }
            group.sort_unstable_by_key(|e| e.1);
            entries.extend_from_slice(&group);
        }
        RankedNeighbors::from_sorted(entries, k_max)
    }
}

#[cfg(test)]
mod tests {
    use super::super::{rank_neighbors, DiagonalMetric, PointCloud};
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn agrees_with_scan_under_single_covariate_metric() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for case in 0..300 {
            let n = rng.random_range(2..150);
            let p = 3;
            let data: Vec<f64> = (0..n * p)
                .map(|_| {
                    if case % 3 == 0 {
                        rng.random_range(0..2) as f64
                    } else if case % 3 == 1 {
                        (rng.random_range(-4..=4) as f64) * 0.25
                    } else {
                        rng.random_range(-1.0..1.0)
                    }
                })
                .collect();
            let pts = PointCloud::new(&data, p);
            let j = rng.random_range(0..p);
            let line = SortedLine::new((0..n).map(|i| data[i * p + j]));
            let metric = DiagonalMetric::single(p, j);
            let exclude = if rng.random_bool(0.7) { Some(rng.random_range(0..n)) } else { None };
            let avail = if exclude.is_some() { n - 1 } else { n };
            let k_max = rng.random_range(1..=avail);
            let q = if rng.random_bool(0.5) {
                data[rng.random_range(0..n) * p + j]
            } else {
                rng.random_range(-1.5..1.5)
            };
            let mut query = vec![0.0; p];
            query[j] = q;
            let expected = rank_neighbors(&metric, pts, &query, k_max, exclude).unwrap();
            assert_eq!(line.rank(q, k_max, exclude), expected, "case {case}");
        }
    }
}
