use std::collections::{BTreeMap, BTreeSet, VecDeque};

use crate::{ClusterParams, ClusterResult, LinkageNode, NOISE};

/// Edge of the condensed tree. Ids below `n_points` are points, ids from
/// `n_points` upward are clusters (`n_points` is the root).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CondensedEdge {
    pub parent: usize,
    pub child: usize,
    /// `1 / distance` at which the child left the parent.
    pub lambda: f64,
    pub size: usize,
}

#[derive(Debug, Clone)]
pub struct CondensedTree {
    pub n_points: usize,
    pub edges: Vec<CondensedEdge>,
}

fn lambda_of(distance: f64) -> f64 {
    if distance > 0.0 {
        1.0 / distance
    } else {
        f64::INFINITY
    }
}

/// Breadth-first listing of dendrogram nodes below `from`, left before right.
fn linkage_bfs(n: usize, linkage: &[LinkageNode], from: usize) -> Vec<usize> {
    let mut out = Vec::new();
    let mut queue = VecDeque::from([from]);
    while let Some(node) = queue.pop_front() {
        out.push(node);
        if node >= n {
            let merge = &linkage[node - n];
            queue.push_back(merge.left);
            queue.push_back(merge.right);
        }
    }
    out
}

impl CondensedTree {
    pub fn from_linkage(n: usize, linkage: &[LinkageNode], min_cluster_size: usize) -> Self {
        let mut edges = Vec::new();
        if n < 2 || linkage.is_empty() {
            return Self { n_points: n, edges };
        }
        let root = 2 * n - 2;
        let mut relabel = vec![0usize; 2 * n - 1];
        let mut ignore = vec![false; 2 * n - 1];
        relabel[root] = n;
        let mut next_label = n + 1;
        let size_of = |id: usize| if id >= n { linkage[id - n].size } else { 1 };

        for node in linkage_bfs(n, linkage, root) {
            if ignore[node] || node < n {
                continue;
            }
            let merge = linkage[node - n];
            let lambda = lambda_of(merge.distance);
            let (left, right) = (merge.left, merge.right);
            let (left_count, right_count) = (size_of(left), size_of(right));
            let parent = relabel[node];

            let mut fall_out = |sub_root: usize, edges: &mut Vec<CondensedEdge>| {
                for sub in linkage_bfs(n, linkage, sub_root) {
                    if sub < n {
                        edges.push(CondensedEdge {
                            parent,
                            child: sub,
                            lambda,
                            size: 1,
                        });
                    }
                    ignore[sub] = true;
                }
            };

            match (left_count >= min_cluster_size, right_count >= min_cluster_size) {
                (true, true) => {
                    for (child, count) in [(left, left_count), (right, right_count)] {
                        relabel[child] = next_label;
                        edges.push(CondensedEdge {
                            parent,
                            child: next_label,
                            lambda,
                            size: count,
                        });
                        next_label += 1;
                    }
                }
                (false, false) => {
                    fall_out(left, &mut edges);
                    fall_out(right, &mut edges);
                }
                (false, true) => {
                    relabel[right] = parent;
                    fall_out(left, &mut edges);
                }
                (true, false) => {
                    relabel[left] = parent;
                    fall_out(right, &mut edges);
                }
            }
        }
        Self { n_points: n, edges }
    }

    pub fn root(&self) -> usize {
        self.n_points
    }

    /// Cluster-to-cluster edges only.
    fn cluster_edges(&self) -> impl Iterator<Item = &CondensedEdge> {
        self.edges.iter().filter(|e| e.size > 1)
    }

    fn max_cluster_id(&self) -> usize {
        self.edges
            .iter()
            .map(|e| e.parent)
            .max()
            .unwrap_or(self.n_points)
    }

    /// Excess-of-Mass stability of every cluster id.
    pub fn stabilities(&self) -> BTreeMap<usize, f64> {
        let root = self.root();
        let mut births: BTreeMap<usize, f64> = BTreeMap::new();
        births.insert(root, 0.0);
        for e in self.cluster_edges() {
            births.insert(e.child, e.lambda);
        }
        let mut stability: BTreeMap<usize, f64> = (root..=self.max_cluster_id()).map(|c| (c, 0.0)).collect();
        for e in &self.edges {
            let birth = births.get(&e.parent).copied().unwrap_or(0.0);
            *stability.entry(e.parent).or_insert(0.0) += (e.lambda - birth) * e.size as f64;
        }
        stability
    }

    fn cluster_children(&self) -> BTreeMap<usize, Vec<usize>> {
        let mut children: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for e in self.cluster_edges() {
            children.entry(e.parent).or_default().push(e.child);
        }
        children
    }

    fn birth_lambda(&self, cluster: usize) -> Option<f64> {
        self.cluster_edges()
            .find(|e| e.child == cluster)
            .map(|e| e.lambda)
    }

    fn parent_of(&self, cluster: usize) -> Option<usize> {
        self.cluster_edges()
            .find(|e| e.child == cluster)
            .map(|e| e.parent)
    }

    fn descendants(children: &BTreeMap<usize, Vec<usize>>, from: usize) -> Vec<usize> {
        let mut out = Vec::new();
        let mut queue = VecDeque::from([from]);
        while let Some(c) = queue.pop_front() {
            out.push(c);
            if let Some(kids) = children.get(&c) {
                queue.extend(kids.iter().copied());
            }
        }
        out
    }

    /// Climb from `leaf` to the first ancestor born at a distance above `epsilon`.
    fn traverse_upwards(&self, epsilon: f64, leaf: usize, allow_single_cluster: bool) -> usize {
        let root = self.root();
        let parent = match self.parent_of(leaf) {
            Some(p) => p,
            None => return leaf,
        };
        if parent == root {
            return if allow_single_cluster { parent } else { leaf };
        }
        let parent_eps = 1.0 / self.birth_lambda(parent).unwrap_or(0.0);
        if parent_eps > epsilon {
            parent
        } else {
            self.traverse_upwards(epsilon, parent, allow_single_cluster)
        }
    }

    fn epsilon_search(
        &self,
        selected: &BTreeSet<usize>,
        epsilon: f64,
        allow_single_cluster: bool,
        children: &BTreeMap<usize, Vec<usize>>,
    ) -> BTreeSet<usize> {
        let mut chosen = BTreeSet::new();
        let mut processed = BTreeSet::new();
        for &leaf in selected {
            let eps = 1.0 / self.birth_lambda(leaf).unwrap_or(0.0);
            if eps < epsilon {
                if !processed.contains(&leaf) {
                    let up = self.traverse_upwards(epsilon, leaf, allow_single_cluster);
                    chosen.insert(up);
                    for sub in Self::descendants(children, up) {
                        if sub != up {
                            processed.insert(sub);
                        }
                    }
                }
            } else {
                chosen.insert(leaf);
            }
        }
        chosen
    }

    /// Excess-of-Mass selection (plus epsilon merging) and point labelling.
    pub fn extract(&self, params: &ClusterParams) -> ClusterResult {
        let n = self.n_points;
        let root = self.root();
        let mut stability = self.stabilities();
        let children = self.cluster_children();

        let mut candidates: Vec<usize> = stability.keys().copied().collect();
        candidates.sort_unstable_by(|a, b| b.cmp(a));
        if !params.allow_single_cluster {
            candidates.retain(|&c| c != root);
        }
        let mut is_cluster: BTreeMap<usize, bool> = candidates.iter().map(|&c| (c, true)).collect();
        for &node in &candidates {
            let subtree: f64 = children
                .get(&node)
                .map(|kids| kids.iter().map(|k| stability[k]).sum())
                .unwrap_or(0.0);
            if subtree > stability[&node] {
                is_cluster.insert(node, false);
                stability.insert(node, subtree);
            } else {
                for sub in Self::descendants(&children, node) {
                    if sub != node {
                        is_cluster.insert(sub, false);
                    }
                }
            }
        }

        let mut selected: BTreeSet<usize> = is_cluster
            .iter()
            .filter(|(_, &v)| v)
            .map(|(&c, _)| c)
            .collect();
        let epsilon = params.cluster_selection_epsilon;
        if epsilon != 0.0 && !self.cluster_edges().collect::<Vec<_>>().is_empty() {
            selected = if selected.len() == 1 && selected.contains(&root) {
                if params.allow_single_cluster {
                    selected
                } else {
                    BTreeSet::new()
                }
            } else {
                self.epsilon_search(&selected, epsilon, params.allow_single_cluster, &children)
            };
        }

        // labels follow ascending cluster id
        let label_of: BTreeMap<usize, i32> = selected
            .iter()
            .enumerate()
            .map(|(i, &c)| (c, i as i32))
            .collect();

        let mut parent_of = vec![usize::MAX; self.max_cluster_id().max(n) + 1];
        let mut point_lambda = vec![0.0; n];
        for e in &self.edges {
            parent_of[e.child] = e.parent;
            if e.child < n {
                point_lambda[e.child] = e.lambda;
            }
        }

        let mut labels = vec![NOISE; n];
        for (p, label) in labels.iter_mut().enumerate() {
            let mut node = parent_of[p];
            while node != usize::MAX && node != root && !selected.contains(&node) {
                node = parent_of[node];
            }
            if node == usize::MAX {
                continue;
            }
            if node != root {
                *label = label_of[&node];
            } else if selected.len() == 1 && selected.contains(&root) {
                let keep = if epsilon != 0.0 {
                    point_lambda[p] >= 1.0 / epsilon
                } else {
                    let max_lambda = self
                        .edges
                        .iter()
                        .filter(|e| e.parent == root)
                        .map(|e| e.lambda)
                        .fold(f64::NEG_INFINITY, f64::max);
                    point_lambda[p] >= max_lambda
                };
                if keep {
                    *label = label_of[&root];
                }
            }
        }

        let stabilities = selected.iter().map(|c| stability[c]).collect();
        ClusterResult {
            labels,
            n_clusters: selected.len(),
            stabilities,
        }
    }
}
