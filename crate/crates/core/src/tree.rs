//! Hierarchy-of-groups tree and its JSON + binary sidecar export.
//!
//! Sidecar layout: `"GFTP" | u32 version | u32 n_points | u32 n_indices |
//! n_points * 3 f32 positions | n_indices u32 point indices`. Each node's
//! sorted index list is the slice `point_idx_ref.offset .. + len`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

const SIDECAR_MAGIC: &[u8; 4] = b"GFTP";
pub const TREE_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum TreeError {
    #[error("io error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("bad tree json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("corrupt tree: {0}")]
    Corrupt(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TreeNode {
    pub id: usize,
    pub parent: Option<usize>,
    pub children: Vec<usize>,
    /// Sorted point indices.
    pub points: Vec<u32>,
    /// Scale at which this node was produced by a split (roots: the start scale).
    pub split_scale: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct GroupTree {
    pub nodes: Vec<TreeNode>,
    pub roots: Vec<usize>,
}

impl GroupTree {
    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn depth(&self, id: usize) -> usize {
        let mut d = 0;
        let mut n = id;
        while let Some(p) = self.nodes[n].parent {
            d += 1;
            n = p;
        }
        d
    }

    pub fn max_depth(&self) -> usize {
        (0..self.nodes.len()).map(|i| self.depth(i)).max().unwrap_or(0)
    }

    pub fn leaves(&self) -> impl Iterator<Item = &TreeNode> {
        self.nodes.iter().filter(|n| n.children.is_empty())
    }

    /// Check the structural invariants; returns a description of the first violation.
    pub fn check(&self) -> Result<(), String> {
        for n in &self.nodes {
            if n.children.len() == 1 {
                return Err(format!("node {} has exactly one child", n.id));
            }
            let mut seen: Vec<u32> = Vec::new();
            for &c in &n.children {
                let child = &self.nodes[c];
                if child.parent != Some(n.id) {
                    return Err(format!("node {c} does not point back to {}", n.id));
                }
                if !(child.split_scale < n.split_scale) {
                    return Err(format!("node {c} split_scale does not decrease"));
                }
                if child.points.iter().any(|p| n.points.binary_search(p).is_err()) {
                    return Err(format!("node {c} is not a subset of {}", n.id));
                }
                seen.extend(&child.points);
            }
            let total = seen.len();
            seen.sort_unstable();
            seen.dedup();
            if seen.len() != total {
                return Err(format!("children of {} overlap", n.id));
            }
        }
        Ok(())
    }

    /// Collapse nodes with a single child into that child.
    pub fn prune_chains(&mut self) {
        loop {
            let Some(mid) = self.nodes.iter().position(|n| n.children.len() == 1) else {
                break;
            };
            let child = self.nodes[mid].children[0];
            let grandkids = std::mem::take(&mut self.nodes[child].children);
            for &g in &grandkids {
                self.nodes[g].parent = Some(mid);
            }
            self.nodes[mid].children = grandkids;
            // orphan the removed child and renumber
            self.nodes[child].parent = None;
            self.remove(child);
        }
    }

    fn remove(&mut self, victim: usize) {
        self.nodes.remove(victim);
        self.roots.retain(|&r| r != victim);
        let fix = |i: usize| if i > victim { i - 1 } else { i };
        for (i, n) in self.nodes.iter_mut().enumerate() {
            n.id = i;
            n.parent = n.parent.map(fix);
            n.children.iter_mut().for_each(|c| *c = fix(*c));
        }
        self.roots.iter_mut().for_each(|r| *r = fix(*r));
    }

    pub fn to_json_and_sidecar(&self, positions: &[[f32; 3]]) -> (TreeJson, Vec<u8>) {
        let mut indices: Vec<u32> = Vec::new();
        let mut nodes = Vec::with_capacity(self.nodes.len());
        for n in &self.nodes {
            let offset = indices.len();
            indices.extend(&n.points);
            let (centroid, bbox) = summarize(&n.points, positions);
            nodes.push(NodeJson {
                id: n.id,
                parent: n.parent,
                children: n.children.clone(),
                split_scale: n.split_scale,
                count: n.points.len(),
                centroid,
                bbox,
                point_idx_ref: IdxRef {
                    offset,
                    len: n.points.len(),
                },
            });
        }
        let mut side = Vec::with_capacity(16 + positions.len() * 12 + indices.len() * 4);
        side.extend_from_slice(SIDECAR_MAGIC);
        for v in [TREE_VERSION, positions.len() as u32, indices.len() as u32] {
            side.extend_from_slice(&v.to_le_bytes());
        }
        for p in positions {
            for c in p {
                side.extend_from_slice(&c.to_le_bytes());
            }
        }
        for i in &indices {
            side.extend_from_slice(&i.to_le_bytes());
        }
        (
            TreeJson {
                version: TREE_VERSION,
                roots: self.roots.clone(),
                nodes,
            },
            side,
        )
    }

    pub fn from_json_and_sidecar(json: &TreeJson, sidecar: &[u8]) -> Result<(Self, Vec<[f32; 3]>), TreeError> {
        let bad = |m: &str| TreeError::Corrupt(m.into());
        if sidecar.len() < 16 || &sidecar[..4] != SIDECAR_MAGIC {
            return Err(bad("sidecar has bad magic"));
        }
        let word = |at: usize| u32::from_le_bytes([sidecar[at], sidecar[at + 1], sidecar[at + 2], sidecar[at + 3]]);
        if word(4) != TREE_VERSION || json.version != TREE_VERSION {
            return Err(bad("unsupported tree version"));
        }
        let (n_points, n_idx) = (word(8) as usize, word(12) as usize);
        if sidecar.len() != 16 + n_points * 12 + n_idx * 4 {
            return Err(bad("sidecar length does not match its header"));
        }
        let f = |at: usize| f32::from_le_bytes([sidecar[at], sidecar[at + 1], sidecar[at + 2], sidecar[at + 3]]);
        let positions: Vec<[f32; 3]> = (0..n_points)
            .map(|i| {
                let at = 16 + i * 12;
                [f(at), f(at + 4), f(at + 8)]
            })
            .collect();
        let idx_base = 16 + n_points * 12;
        let mut nodes = Vec::with_capacity(json.nodes.len());
        for (i, n) in json.nodes.iter().enumerate() {
            if n.id != i || n.point_idx_ref.offset + n.point_idx_ref.len > n_idx {
                return Err(bad("node ids or index ranges are inconsistent"));
            }
            let points: Vec<u32> = (0..n.point_idx_ref.len)
                .map(|k| word(idx_base + (n.point_idx_ref.offset + k) * 4))
                .collect();
            if points.iter().any(|&p| p as usize >= n_points) {
                return Err(bad("point index out of range"));
            }
            nodes.push(TreeNode {
                id: n.id,
                parent: n.parent,
                children: n.children.clone(),
                points,
                split_scale: n.split_scale,
            });
        }
        Ok((
            Self {
                nodes,
                roots: json.roots.clone(),
            },
            positions,
        ))
    }

    pub fn write(&self, positions: &[[f32; 3]], json_path: &Path, sidecar_path: &Path) -> Result<(), TreeError> {
        let (json, side) = self.to_json_and_sidecar(positions);
        fs::write(json_path, serde_json::to_vec_pretty(&json)?).map_err(|e| io_err(json_path, e))?;
        fs::write(sidecar_path, side).map_err(|e| io_err(sidecar_path, e))
    }

    pub fn read(json_path: &Path, sidecar_path: &Path) -> Result<(Self, Vec<[f32; 3]>), TreeError> {
        let json: TreeJson = serde_json::from_slice(&fs::read(json_path).map_err(|e| io_err(json_path, e))?)?;
        let side = fs::read(sidecar_path).map_err(|e| io_err(sidecar_path, e))?;
        Self::from_json_and_sidecar(&json, &side)
    }
}

fn io_err(path: &Path, source: std::io::Error) -> TreeError {
    TreeError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn summarize(points: &[u32], positions: &[[f32; 3]]) -> ([f64; 3], [[f64; 3]; 2]) {
    let mut c = [0.0; 3];
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for &p in points {
        for a in 0..3 {
            let v = positions[p as usize][a] as f64;
            c[a] += v;
            lo[a] = lo[a].min(v);
            hi[a] = hi[a].max(v);
        }
    }
    let n = points.len().max(1) as f64;
    ([c[0] / n, c[1] / n, c[2] / n], [lo, hi])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdxRef {
    pub offset: usize,
    pub len: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeJson {
    pub id: usize,
    pub parent: Option<usize>,
    pub children: Vec<usize>,
    pub split_scale: f64,
    pub count: usize,
    pub centroid: [f64; 3],
    pub bbox: [[f64; 3]; 2],
    pub point_idx_ref: IdxRef,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeJson {
    pub version: u32,
    pub roots: Vec<usize>,
    pub nodes: Vec<NodeJson>,
}
