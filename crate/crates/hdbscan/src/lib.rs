//! Exact HDBSCAN over dense feature vectors.
//!
//! The pipeline is the textbook one: core distances, the mutual reachability
//! graph, its minimum spanning tree (Prim, dense), the single linkage tree,
//! the condensed tree and Excess-of-Mass cluster selection with an optional
//! `cluster_selection_epsilon`. All distances are accumulated in `f64` and
//! every tie is broken by the lowest point index so results are reproducible.

mod condense;
mod distance;
mod linkage;

pub use condense::{CondensedEdge, CondensedTree};
pub use distance::{core_distances, mutual_reachability_mst, MstEdge};
pub use linkage::{single_linkage, LinkageNode};

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum HdbscanError {
    #[error("cannot cluster an empty point set")]
    Empty,
    #[error("data length {len} is not a multiple of dimension {dim}")]
    Shape { len: usize, dim: usize },
    #[error("point {index} has a non-finite coordinate")]
    NonFinite { index: usize },
    #[error("min_cluster_size must be at least 2, got {0}")]
    MinClusterSize(usize),
    #[error("cluster_selection_epsilon must be finite and >= 0, got {0}")]
    Epsilon(f64),
}

/// Label used for points that belong to no cluster.
pub const NOISE: i32 = -1;

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterParams {
    pub min_cluster_size: usize,
    /// Neighbourhood size for core distances, counting the point itself.
    /// Defaults to `min_cluster_size`.
    pub min_samples: Option<usize>,
    pub cluster_selection_epsilon: f64,
    pub allow_single_cluster: bool,
}

impl Default for ClusterParams {
    fn default() -> Self {
        Self {
            min_cluster_size: 40,
            min_samples: None,
            cluster_selection_epsilon: 0.1,
            allow_single_cluster: false,
        }
    }
}

impl ClusterParams {
    pub fn min_samples(&self) -> usize {
        self.min_samples.unwrap_or(self.min_cluster_size)
    }

    fn validate(&self) -> Result<(), HdbscanError> {
        if self.min_cluster_size < 2 {
            return Err(HdbscanError::MinClusterSize(self.min_cluster_size));
        }
        let eps = self.cluster_selection_epsilon;
        if !eps.is_finite() || eps < 0.0 {
            return Err(HdbscanError::Epsilon(eps));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterResult {
    /// One label per input point, `NOISE` for unclustered points.
    pub labels: Vec<i32>,
    pub n_clusters: usize,
    /// Excess-of-Mass stability of each selected cluster, indexed by label.
    pub stabilities: Vec<f64>,
}

impl ClusterResult {
    pub fn noise_count(&self) -> usize {
        self.labels.iter().filter(|&&l| l == NOISE).count()
    }

    pub fn cluster_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.n_clusters];
        for &l in &self.labels {
            if l >= 0 {
                sizes[l as usize] += 1;
            }
        }
        sizes
    }
}

/// Row-major view over `n` points of dimension `dim`.
#[derive(Debug, Clone, Copy)]
pub struct Points<'a> {
    data: &'a [f64],
    dim: usize,
}

impl<'a> Points<'a> {
    pub fn new(data: &'a [f64], dim: usize) -> Result<Self, HdbscanError> {
        if dim == 0 || data.len() % dim != 0 {
            return Err(HdbscanError::Shape {
                len: data.len(),
                dim,
            });
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(HdbscanError::NonFinite { index: pos / dim });
        }
        Ok(Self { data, dim })
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, i: usize) -> &'a [f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn distance(&self, i: usize, j: usize) -> f64 {
        distance::euclidean(self.row(i), self.row(j))
    }
}

/// Cluster `points` and label every point.
pub fn cluster(points: Points<'_>, params: &ClusterParams) -> Result<ClusterResult, HdbscanError> {
    params.validate()?;
    let n = points.len();
    if n == 0 {
        return Err(HdbscanError::Empty);
    }
    if n < params.min_cluster_size || n == 1 {
        return Ok(ClusterResult {
            labels: vec![NOISE; n],
            n_clusters: 0,
            stabilities: Vec::new(),
        });
    }
    let core = core_distances(points, params.min_samples());
    let mut mst = mutual_reachability_mst(points, &core);
    // stable: equal weights keep Prim's discovery order
    mst.sort_by(|a, b| a.weight.total_cmp(&b.weight));
    let linkage = single_linkage(n, &mst);
    let condensed = CondensedTree::from_linkage(n, &linkage, params.min_cluster_size);
    Ok(condensed.extract(params))
}

/// Convenience wrapper for callers holding one `Vec<f64>` per point.
pub fn cluster_rows(rows: &[Vec<f64>], params: &ClusterParams) -> Result<ClusterResult, HdbscanError> {
    if rows.is_empty() {
        return Err(HdbscanError::Empty);
    }
    let dim = rows[0].len();
    let mut flat = Vec::with_capacity(rows.len() * dim);
    for r in rows {
        if r.len() != dim {
            return Err(HdbscanError::Shape {
                len: r.len(),
                dim,
            });
        }
        flat.extend_from_slice(r);
    }
    cluster(Points::new(&flat, dim)?, params)
}
