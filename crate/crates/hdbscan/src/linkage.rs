use crate::MstEdge;

/// One merge of the single linkage dendrogram. Node ids below `n` are
/// points; merge `i` creates node `n + i`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkageNode {
    pub left: usize,
    pub right: usize,
    pub distance: f64,
    pub size: usize,
}

struct UnionFind {
    parent: Vec<usize>,
    size: Vec<usize>,
    next: usize,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        Self {
            parent: (0..2 * n - 1).collect(),
            size: (0..2 * n - 1).map(|i| usize::from(i < n)).collect(),
            next: n,
        }
    }

    fn find(&mut self, mut x: usize) -> usize {
        let mut root = x;
        while self.parent[root] != root {
            root = self.parent[root];
        }
        while self.parent[x] != root {
            let up = self.parent[x];
            self.parent[x] = root;
            x = up;
        }
        root
    }

    fn union(&mut self, a: usize, b: usize) -> usize {
        let id = self.next;
        self.parent[a] = id;
        self.parent[b] = id;
        self.size[id] = self.size[a] + self.size[b];
        self.next += 1;
        id
    }
}

/// Build the dendrogram from MST edges already sorted by ascending weight.
pub fn single_linkage(n: usize, sorted_edges: &[MstEdge]) -> Vec<LinkageNode> {
    if n < 2 {
        return Vec::new();
    }
    let mut uf = UnionFind::new(n);
    sorted_edges
        .iter()
        .map(|e| {
            let left = uf.find(e.a);
            let right = uf.find(e.b);
            let id = uf.union(left, right);
            LinkageNode {
                left,
                right,
                distance: e.weight,
                size: uf.size[id],
            }
        })
        .collect()
}
