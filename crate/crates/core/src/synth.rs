//! Synthetic hierarchical scenes with posed cameras, splatted depth and
//! deliberately view-inconsistent multi-level masks.
//!
//! Groups nest as spheres: every group at level `k` is a ball of radius
//! `spread[k]` placed inside its parent's ball, and leaf groups are point
//! shells on their ball's surface. Views render points as depth-tested discs,
//! then emit one mask per visible ground-truth group subject to random
//! dropping, sibling merging and half-plane splitting.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{self, camera_extent, Camera, DepthMap, Vec3};

#[derive(Debug, Error, PartialEq)]
pub enum SynthError {
    #[error("a hierarchy needs at least 2 levels, got {0}")]
    TooFewLevels(usize),
    #[error("branching has {branching} levels but spread has {spread}")]
    LevelMismatch { branching: usize, spread: usize },
    #[error("level {level} has zero groups per parent")]
    EmptyLevel { level: usize },
    #[error("spread must strictly decrease with depth: level {level} has {child} >= parent {parent}")]
    SpreadOrder { level: usize, child: f64, parent: f64 },
    #[error("could not fit {count} groups of radius {radius} inside radius {parent} at level {level}")]
    NoRoom {
        level: usize,
        count: usize,
        radius: f64,
        parent: f64,
    },
    #[error("camera {0} sees no points")]
    EmptyView(usize),
    #[error("camera index {index} out of range ({count} cameras)")]
    BadCamera { index: usize, count: usize },
    #[error("invalid configuration: {0}")]
    Config(String),
}

/// Shape of the group hierarchy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HierSpec {
    /// Groups per parent at each level; level 0 counts the top-level groups.
    pub branching: Vec<usize>,
    /// Radius of a group's ball at each level (world units).
    pub spread: Vec<f64>,
    pub points_per_leaf: usize,
    /// Top-level groups are placed inside a ball of this radius at the origin.
    pub layout_radius: f64,
    /// Minimum clearance between sibling balls, as a multiple of their radii.
    pub separation: f64,
    /// Each group is shrunk by a factor `1 - size_jitter * u`, `u ~ U[0, 1)`,
    /// which also applies to everything nested inside it.
    pub size_jitter: f64,
    pub seed: u64,
}

impl Default for HierSpec {
    fn default() -> Self {
        Self {
            branching: vec![4, 3, 3],
            spread: vec![0.3, 0.1, 0.035],
            points_per_leaf: 170,
            layout_radius: 0.9,
            separation: 0.25,
            size_jitter: 0.0,
            seed: 0,
        }
    }
}

impl HierSpec {
    pub fn levels(&self) -> usize {
        self.branching.len()
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let levels = self.branching.len();
        if levels < 2 {
            return Err(SynthError::TooFewLevels(levels));
        }
        if self.spread.len() != levels {
            return Err(SynthError::LevelMismatch {
                branching: levels,
                spread: self.spread.len(),
            });
        }
        if let Some(level) = self.branching.iter().position(|&b| b == 0) {
            return Err(SynthError::EmptyLevel { level });
        }
        let mut parent = self.layout_radius;
        for (level, &child) in self.spread.iter().enumerate() {
            if !(child > 0.0 && child < parent) {
                return Err(SynthError::SpreadOrder { level, child, parent });
            }
            parent = child;
        }
        if self.points_per_leaf == 0 {
            return Err(SynthError::Config("points_per_leaf must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.size_jitter) {
            return Err(SynthError::Config("size_jitter must be in [0, 1)".into()));
        }
        if !(self.separation >= 0.0) {
            return Err(SynthError::Config("separation must be non-negative".into()));
        }
        Ok(())
    }
}

/// Cameras on a ring of elevations around the origin, all looking at it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CameraRig {
    pub n_views: usize,
    pub width: u32,
    pub height: u32,
    pub fov_deg: f64,
    pub distance: f64,
    pub min_elevation_deg: f64,
    pub max_elevation_deg: f64,
}

impl Default for CameraRig {
    fn default() -> Self {
        Self {
            n_views: 20,
            width: 320,
            height: 320,
            fov_deg: 55.0,
            distance: 2.2,
            min_elevation_deg: -60.0,
            max_elevation_deg: 60.0,
        }
    }
}

impl CameraRig {
    pub fn cameras(&self) -> Vec<Camera> {
        let f = 0.5 * self.width as f64 / (0.5 * self.fov_deg.to_radians()).tan();
        let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
        (0..self.n_views)
            .map(|i| {
                let t = if self.n_views > 1 {
                    i as f64 / (self.n_views - 1) as f64
                } else {
                    0.5
                };
                let elev = (self.min_elevation_deg + t * (self.max_elevation_deg - self.min_elevation_deg)).to_radians();
                let azim = i as f64 * golden;
                let eye = [
                    self.distance * elev.cos() * azim.cos(),
                    self.distance * elev.cos() * azim.sin(),
                    self.distance * elev.sin(),
                ];
                Camera::look_at(eye, [0.0; 3], [0.0, 0.0, 1.0], f, f, self.width, self.height)
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticScene {
    pub spec: HierSpec,
    pub points: Vec<Vec3>,
    /// `labels[level][point]`: group id of the point at that level. Ids are
    /// unique within a level.
    pub labels: Vec<Vec<u32>>,
    /// `parents[level][group]`: parent group id at `level - 1` (empty for level 0).
    pub parents: Vec<Vec<u32>>,
    /// `centers[level][group]`: centre of the group's ball.
    pub centers: Vec<Vec<Vec3>>,
    /// `radii[level][group]`: radius of the group's ball.
    pub radii: Vec<Vec<f64>>,
    pub cameras: Vec<Camera>,
    pub camera_extent: f64,
}

impl SyntheticScene {
    pub fn levels(&self) -> usize {
        self.labels.len()
    }

    pub fn group_count(&self, level: usize) -> usize {
        self.centers[level].len()
    }

    /// Sorted point indices of `group` at `level`.
    pub fn group_members(&self, level: usize, group: u32) -> Vec<u32> {
        self.labels[level]
            .iter()
            .enumerate()
            .filter(|(_, &g)| g == group)
            .map(|(i, _)| i as u32)
            .collect()
    }
}

fn random_in_ball(rng: &mut impl Rng, radius: f64) -> Vec3 {
    loop {
        let p = [
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
        ];
        if geometry::dot(p, p) <= 1.0 {
            return geometry::scale(p, radius);
        }
    }
}

fn random_on_sphere(rng: &mut impl Rng) -> Vec3 {
    let z: f64 = rng.gen_range(-1.0..1.0);
    let phi: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
    let r = (1.0 - z * z).sqrt();
    [r * phi.cos(), r * phi.sin(), z]
}

/// Rejection-sample centres for balls of the given radii inside a ball of
/// `parent_radius` at `parent`; balls `i` and `j` end up at least
/// `(r_i + r_j) * (1 + separation)` apart.
fn place_children(
    rng: &mut impl Rng,
    parent: Vec3,
    parent_radius: f64,
    radii: &[f64],
    separation: f64,
) -> Option<Vec<Vec3>> {
    const RESTARTS: usize = 200;
    const ATTEMPTS: usize = 2_000;
    'restart: for _ in 0..RESTARTS {
        let mut placed: Vec<Vec3> = Vec::with_capacity(radii.len());
        for &r in radii {
            let found = (0..ATTEMPTS).find_map(|_| {
                let c = geometry::add(parent, random_in_ball(rng, parent_radius - r));
                placed
                    .iter()
                    .zip(radii)
                    .all(|(p, &rp)| geometry::distance(*p, c) >= (r + rp) * (1.0 + separation))
                    .then_some(c)
            });
            match found {
                Some(c) => placed.push(c),
                None => continue 'restart,
            }
        }
        return Some(placed);
    }
    None
}

/// Build the scene: nested group placement, leaf point shells and cameras.
pub fn generate_scene(spec: &HierSpec, rig: &CameraRig) -> Result<SyntheticScene, SynthError> {
    spec.validate()?;
    if rig.n_views == 0 || rig.width == 0 || rig.height == 0 {
        return Err(SynthError::Config("camera rig needs at least one non-empty view".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let levels = spec.levels();

    let mut centers: Vec<Vec<Vec3>> = Vec::with_capacity(levels);
    let mut radii: Vec<Vec<f64>> = Vec::with_capacity(levels);
    let mut parents: Vec<Vec<u32>> = Vec::with_capacity(levels);
    let mut parent_centers = vec![[0.0; 3]];
    let mut parent_radii = vec![spec.layout_radius];
    let mut parent_factors = vec![1.0];
    for level in 0..levels {
        let spread = spec.spread[level];
        let count = spec.branching[level];
        let mut level_centers = Vec::new();
        let mut level_radii = Vec::new();
        let mut level_parents = Vec::new();
        let mut level_factors = Vec::new();
        for (pi, (&pc, &pr)) in parent_centers.iter().zip(&parent_radii).enumerate() {
            let factors: Vec<f64> = (0..count)
                .map(|_| parent_factors[pi] * (1.0 - spec.size_jitter * rng.gen::<f64>()))
                .collect();
            let sizes: Vec<f64> = factors.iter().map(|f| spread * f).collect();
            let placed = place_children(&mut rng, pc, pr, &sizes, spec.separation).ok_or(SynthError::NoRoom {
                level,
                count,
                radius: spread,
                parent: pr,
            })?;
            level_parents.extend(std::iter::repeat(pi as u32).take(placed.len()));
            level_centers.extend(placed);
            level_radii.extend(sizes);
            level_factors.extend(factors);
        }
        if level == 0 {
            level_parents.clear();
        }
        parent_centers = level_centers.clone();
        parent_radii = level_radii.clone();
        parent_factors = level_factors;
        centers.push(level_centers);
        radii.push(level_radii);
        parents.push(level_parents);
    }

    let leaf_level = levels - 1;
    let n_leaves = centers[leaf_level].len();
    let mut points = Vec::with_capacity(n_leaves * spec.points_per_leaf);
    let mut labels = vec![Vec::with_capacity(points.capacity()); levels];
    for leaf in 0..n_leaves {
        let c = centers[leaf_level][leaf];
        let r = radii[leaf_level][leaf];
        for _ in 0..spec.points_per_leaf {
            points.push(geometry::add(c, geometry::scale(random_on_sphere(&mut rng), r)));
            let mut g = leaf as u32;
            for level in (0..levels).rev() {
                labels[level].push(g);
                if level > 0 {
                    g = parents[level][g as usize];
                }
            }
        }
    }

    let cameras = rig.cameras();
    for (i, cam) in cameras.iter().enumerate() {
        if !points.iter().any(|p| cam.pixel_of(*p).is_some()) {
            return Err(SynthError::EmptyView(i));
        }
    }
    let camera_extent = camera_extent(&cameras);
    Ok(SyntheticScene {
        spec: spec.clone(),
        points,
        labels,
        parents,
        centers,
        radii,
        cameras,
        camera_extent,
    })
}

/// How ground-truth group masks are degraded per view.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LevelMix {
    /// Probability that a visible group emits no mask in this view.
    pub drop_prob: f64,
    /// Probability that a mask is merged with its next visible sibling.
    pub merge_prob: f64,
    /// Probability that a mask is cut by a random line through its centroid.
    pub corruption_rate: f64,
    /// Masks smaller than this many pixels are not emitted.
    pub min_mask_area: usize,
    /// Disc radius used to splat points (pixels).
    pub splat_radius: u32,
}

impl Default for LevelMix {
    fn default() -> Self {
        Self {
            drop_prob: 0.3,
            merge_prob: 0.1,
            corruption_rate: 0.1,
            min_mask_area: 8,
            splat_radius: 2,
        }
    }
}

impl LevelMix {
    /// Every visible group, exactly projected.
    pub fn exact() -> Self {
        Self {
            drop_prob: 0.0,
            merge_prob: 0.0,
            corruption_rate: 0.0,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskKind {
    Exact,
    Merged,
    Split,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthMask {
    /// Sorted pixel indices (row-major).
    pub pixels: Vec<u32>,
    pub level: usize,
    /// Ground-truth groups the mask was built from (two for merges).
    pub groups: Vec<u32>,
    pub kind: MaskKind,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RenderedView {
    pub depth: DepthMap,
    /// Index of the point visible at each pixel, `u32::MAX` where empty.
    pub owner: Vec<u32>,
    pub masks: Vec<SynthMask>,
}

pub const NO_POINT: u32 = u32::MAX;

/// Depth-tested disc splatting. Nearest point wins; equal depths keep the
/// lower point index.
pub fn splat(points: &[Vec3], cam: &Camera, radius: u32) -> (DepthMap, Vec<u32>) {
    let (w, h) = (cam.width as i64, cam.height as i64);
    let mut zbuf = vec![f64::INFINITY; (w * h) as usize];
    let mut owner = vec![NO_POINT; (w * h) as usize];
    let r = radius as i64;
    for (i, p) in points.iter().enumerate() {
        let Some(pr) = cam.project(*p) else { continue };
        let (cx, cy) = (pr.u.floor() as i64, pr.v.floor() as i64);
        for dy in -r..=r {
            for dx in -r..=r {
                if dx * dx + dy * dy > r * r {
                    continue;
                }
                let (x, y) = (cx + dx, cy + dy);
                if x < 0 || y < 0 || x >= w || y >= h {
                    continue;
                }
                let idx = (y * w + x) as usize;
                if pr.depth < zbuf[idx] {
                    zbuf[idx] = pr.depth;
                    owner[idx] = i as u32;
                }
            }
        }
    }
    let depth = DepthMap {
        width: cam.width,
        height: cam.height,
        data: zbuf.iter().map(|&z| z as f32).collect(),
    };
    (depth, owner)
}

/// Keep the pixels on one side of a random line through the mask centroid.
fn split_mask(rng: &mut impl Rng, pixels: &[u32], width: u32) -> Vec<u32> {
    let n = pixels.len() as f64;
    let (mut mx, mut my) = (0.0, 0.0);
    for &p in pixels {
        mx += (p % width) as f64;
        my += (p / width) as f64;
    }
    let (mx, my) = (mx / n, my / n);
    let theta: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
    let (nx, ny) = (theta.cos(), theta.sin());
    pixels
        .iter()
        .copied()
        .filter(|&p| ((p % width) as f64 - mx) * nx + ((p / width) as f64 - my) * ny >= 0.0)
        .collect()
}

/// Render one view. The RNG stream is derived from the scene seed and the
/// camera index, so views are independent and reproducible.
pub fn render_view(scene: &SyntheticScene, cam_idx: usize, mix: &LevelMix) -> Result<RenderedView, SynthError> {
    let cam = scene.cameras.get(cam_idx).ok_or(SynthError::BadCamera {
        index: cam_idx,
        count: scene.cameras.len(),
    })?;
    let (depth, owner) = splat(&scene.points, cam, mix.splat_radius);
    if owner.iter().all(|&o| o == NO_POINT) {
        return Err(SynthError::EmptyView(cam_idx));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(scene.spec.seed);
    rng.set_stream(cam_idx as u64 + 1);

    let mut masks = Vec::new();
    for level in 0..scene.levels() {
        let n_groups = scene.group_count(level);
        let mut group_pixels: Vec<Vec<u32>> = vec![Vec::new(); n_groups];
        for (px, &o) in owner.iter().enumerate() {
            if o != NO_POINT {
                group_pixels[scene.labels[level][o as usize] as usize].push(px as u32);
            }
        }
        let visible: Vec<u32> = (0..n_groups as u32)
            .filter(|&g| group_pixels[g as usize].len() >= mix.min_mask_area)
            .filter(|_| !rng.gen_bool(mix.drop_prob))
            .collect();

        let sibling_key = |g: u32| if level == 0 { 0 } else { scene.parents[level][g as usize] };
        let mut consumed = vec![false; n_groups];
        for (i, &g) in visible.iter().enumerate() {
            if consumed[g as usize] {
                continue;
            }
            consumed[g as usize] = true;
            let mut groups = vec![g];
            let mut pixels = group_pixels[g as usize].clone();
            let mut kind = MaskKind::Exact;
            if rng.gen_bool(mix.merge_prob) {
                let partner = visible[i + 1..]
                    .iter()
                    .copied()
                    .find(|&o| !consumed[o as usize] && sibling_key(o) == sibling_key(g));
                if let Some(o) = partner {
                    consumed[o as usize] = true;
                    groups.push(o);
                    pixels.extend_from_slice(&group_pixels[o as usize]);
                    pixels.sort_unstable();
                    kind = MaskKind::Merged;
                }
            }
            if rng.gen_bool(mix.corruption_rate) {
                pixels = split_mask(&mut rng, &pixels, cam.width);
                kind = MaskKind::Split;
            }
            if pixels.len() >= mix.min_mask_area.max(1) {
                masks.push(SynthMask {
                    pixels,
                    level,
                    groups,
                    kind,
                });
            }
        }
    }
    Ok(RenderedView { depth, owner, masks })
}
