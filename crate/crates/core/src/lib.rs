//! Scale-conditioned 3D affinity fields distilled from inconsistent 2D masks,
//! and hierarchical decomposition of a point set into nested groups.

pub mod geometry;
pub mod synth;
pub mod dataset;
pub mod scale;
pub mod field;
pub mod train;
pub mod tree;
pub mod decompose;
pub mod eval;
