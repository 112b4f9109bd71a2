//! Exact k-nearest-neighbour search.

use super::LabeledMatrix;

pub(crate) fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// The `k` rows of `candidates` nearest to row `query`, excluding `query`
/// itself, ordered by distance with ties broken by lower row index.
pub fn nearest(data: &LabeledMatrix, query: usize, candidates: &[usize], k: usize) -> Vec<usize> {
    let q = data.row(query);
    // (distance, index), kept sorted ascending; insertion is O(k) per candidate
    let mut best: Vec<(f64, usize)> = Vec::with_capacity(k + 1);
    for &c in candidates {
        if c == query {
            continue;
        }
        offer(&mut best, k, squared_distance(q, data.row(c)), c);
    }
    best.into_iter().map(|(_, i)| i).collect()
}

fn offer(best: &mut Vec<(f64, usize)>, k: usize, d: f64, c: usize) {
    if best.len() == k {
        let (worst_d, worst_i) = best[k - 1];
        if d > worst_d || (d == worst_d && c > worst_i) {
            return;
        }
    }
    let at = best.partition_point(|&(bd, bi)| bd < d || (bd == d && bi < c));
    best.insert(at, (d, c));
    best.truncate(k);
}

/// Candidates sorted along their widest coordinate. A query scans outward
/// from its own position and stops on a side once that coordinate's squared
/// gap alone exceeds the current k-th distance, which can only under-estimate
/// the full distance. Results equal [`nearest`] exactly, ties included.
pub struct NeighborIndex<'a> {
    data: &'a LabeledMatrix,
    axis: usize,
    order: Vec<usize>,
    keys: Vec<f64>,
}

impl<'a> NeighborIndex<'a> {
    pub fn new(data: &'a LabeledMatrix, candidates: &[usize]) -> Self {
        let dim = data.dim();
        let n = candidates.len().max(1) as f64;
        let axis = (0..dim)
            .map(|a| {
                let mean = candidates.iter().map(|&c| data.row(c)[a]).sum::<f64>() / n;
                let var = candidates.iter().map(|&c| (data.row(c)[a] - mean).powi(2)).sum::<f64>();
                (a, var)
            })
            .max_by(|x, y| x.1.total_cmp(&y.1).then(y.0.cmp(&x.0)))
            .map_or(0, |(a, _)| a);
        let mut order = candidates.to_vec();
        order.sort_by(|&x, &y| data.row(x)[axis].total_cmp(&data.row(y)[axis]).then(x.cmp(&y)));
        let keys = order.iter().map(|&c| data.row(c)[axis]).collect();
        NeighborIndex { data, axis, order, keys }
    }

    pub fn nearest(&self, query: usize, k: usize) -> Vec<usize> {
        let q = self.data.row(query);
        let qa = q[self.axis];
        let gap = |key: f64| (qa - key) * (qa - key);
        let start = self.keys.partition_point(|&v| v < qa);
        let (mut lo, mut hi) = (start, start);
        let mut best: Vec<(f64, usize)> = Vec::with_capacity(k + 1);
        loop {
            let bound = if best.len() == k { best[k - 1].0 } else { f64::INFINITY };
            let left = (lo > 0).then(|| gap(self.keys[lo - 1])).filter(|&g| g <= bound);
            let right = (hi < self.order.len()).then(|| gap(self.keys[hi])).filter(|&g| g <= bound);
            let c = match (left, right) {
                (None, None) => break,
                (Some(l), Some(r)) if l <= r => {
                    lo -= 1;
                    self.order[lo]
                }
                (Some(_), None) => {
                    lo -= 1;
                    self.order[lo]
                }
                _ => {
                    hi += 1;
                    self.order[hi - 1]
                }
            };
            if c != query {
                offer(&mut best, k, squared_distance(q, self.data.row(c)), c);
            }
        }
        best.into_iter().map(|(_, i)| i).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::taxonomy::EmotionLabel;

    #[test]
    fn ties_break_by_index_and_self_is_excluded() {
        let mut m = LabeledMatrix::new(1);
        for (i, x) in [0.0, 1.0, -1.0, 1.0, 5.0].into_iter().enumerate() {
            m.push(format!("{i}"), EmotionLabel::Sad, &[x]);
        }
        let all: Vec<usize> = (0..5).collect();
        assert_eq!(nearest(&m, 0, &all, 3), vec![1, 2, 3]);
        assert_eq!(nearest(&m, 1, &all, 2), vec![3, 0]);
        assert_eq!(nearest(&m, 4, &all, 10), vec![1, 3, 0, 2]);
        let index = NeighborIndex::new(&m, &all);
        for q in 0..5 {
            for k in 1..6 {
                assert_eq!(index.nearest(q, k), nearest(&m, q, &all, k));
            }
        }
    }

    proptest::proptest! {
        #[test]
        fn index_matches_brute_force(
            rows in proptest::collection::vec(proptest::collection::vec(-3i8..3, 3), 2..40),
            k in 1usize..8,
            skip in 0usize..4,
        ) {
            // small integer grids force many exact distance ties
            let mut m = LabeledMatrix::new(3);
            for (i, r) in rows.iter().enumerate() {
                m.push(format!("{i}"), EmotionLabel::Sad, &r.iter().map(|&v| f64::from(v)).collect::<Vec<_>>());
            }
            let candidates: Vec<usize> = (0..rows.len()).filter(|i| i % 4 != skip).collect();
            let index = NeighborIndex::new(&m, &candidates);
            for q in 0..rows.len() {
                proptest::prop_assert_eq!(index.nearest(q, k), nearest(&m, q, &candidates, k));
            }
        }
    }
}
