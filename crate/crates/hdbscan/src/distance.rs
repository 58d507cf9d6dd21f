use rayon::prelude::*;

use crate::Points;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MstEdge {
    pub a: usize,
    pub b: usize,
    pub weight: f64,
}

pub(crate) fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Distance from each point to its `min_samples`-th nearest neighbour, the
/// point itself counting as the first.
pub fn core_distances(points: Points<'_>, min_samples: usize) -> Vec<f64> {
    let n = points.len();
    let k = min_samples.clamp(1, n);
    (0..n)
        .into_par_iter()
        .map_init(
            || Vec::with_capacity(n),
            |row: &mut Vec<f64>, i| {
                row.clear();
                row.extend((0..n).map(|j| if i == j { 0.0 } else { points.distance(i, j) }));
                let (_, kth, _) = row.select_nth_unstable_by(k - 1, f64::total_cmp);
                *kth
            },
        )
        .collect()
}

/// Prim's algorithm on the dense mutual reachability graph
/// `max(core[i], core[j], d(i, j))`, without materialising the matrix.
///
/// Edges come out in discovery order as `(previously added vertex, new
/// vertex)`. Along a Prim ordering the largest edge weight between two
/// vertices equals their single-linkage distance, so these edges yield the
/// same dendrogram as the true tree edges. Ties pick the lowest vertex index.
pub fn mutual_reachability_mst(points: Points<'_>, core: &[f64]) -> Vec<MstEdge> {
    let n = points.len();
    let mut in_tree = vec![false; n];
    let mut best = vec![f64::INFINITY; n];
    let mut edges = Vec::with_capacity(n.saturating_sub(1));
    let mut current = 0usize;
    for _ in 1..n {
        in_tree[current] = true;
        let mut next = usize::MAX;
        let mut next_dist = f64::INFINITY;
        for j in 0..n {
            if in_tree[j] {
                continue;
            }
            let d = points
                .distance(current, j)
                .max(core[current])
                .max(core[j]);
            if d < best[j] {
                best[j] = d;
            }
            if best[j] < next_dist || next == usize::MAX {
                next_dist = best[j];
                next = j;
            }
        }
        edges.push(MstEdge {
            a: current,
            b: next,
            weight: next_dist,
        });
        current = next;
    }
    edges
}
