//! On-disk dataset format and its in-memory form.
//!
//! ```text
//! manifest.json
//! points.bin            optional, little-endian f32 xyz triplets
//! gt_labels.bin         optional, u32 levels, u32 n, then levels*n u32
//! views/<i>/depth.f32   width*height little-endian f32, +inf where empty
//! views/<i>/masks.bin   "GFMK", u32 version, width, height, channels,
//!                       then channels*height*width little-endian u16
//! views/<i>/masks.json  {"masks": [{mask_id, pixel_area, scale3d, channel}]}
//! ```
//!
//! Masks may overlap, so they are packed greedily into as many u16 label
//! channels as needed; within a channel a value `k > 0` marks membership in
//! mask `k` and 0 means no mask.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{Camera, CameraError, DepthMap};
use crate::synth::{render_view, LevelMix, SynthError, SyntheticScene, NO_POINT};

pub const FORMAT_VERSION: u32 = 1;
const MASK_MAGIC: &[u8; 4] = b"GFMK";

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("dataset must contain >= 1 view")]
    NoViews,
    #[error("{cameras} cameras but {views} views")]
    CountMismatch { cameras: usize, views: usize },
    #[error("missing file {}", .0.display())]
    Missing(PathBuf),
    #[error("io error on {}: {source}", path.display())]
    Io { path: PathBuf, source: io::Error },
    #[error("bad json in {}: {source}", path.display())]
    Json { path: PathBuf, source: serde_json::Error },
    #[error("unsupported format version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },
    #[error("corrupt file {}: {reason}", path.display())]
    Corrupt { path: PathBuf, reason: String },
    #[error("view {view}: {reason}")]
    InvalidView { view: usize, reason: String },
    #[error("camera {index}: {source}")]
    Camera { index: usize, source: CameraError },
    #[error(transparent)]
    Synth(#[from] SynthError),
}

type Result<T> = std::result::Result<T, DatasetError>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaskRecord {
    /// 1-based id, unique within its view.
    pub mask_id: u32,
    pub pixel_area: u32,
    /// Physical scale in world units, `None` until assigned.
    pub scale3d: Option<f64>,
}

/// Per-pixel mask membership in CSR form. Entries are indices into the view's
/// mask list, sorted by ascending pixel area (ties by mask index).
#[derive(Debug, Clone, PartialEq)]
pub struct Membership {
    offsets: Vec<u32>,
    entries: Vec<u32>,
}

impl Membership {
    fn build(n_pixels: usize, masks: &[MaskRecord], mask_pixels: &[Vec<u32>]) -> Self {
        let mut order: Vec<usize> = (0..masks.len()).collect();
        order.sort_by_key(|&m| (masks[m].pixel_area, m));
        let mut counts = vec![0u32; n_pixels + 1];
        for pixels in mask_pixels {
            for &p in pixels {
                counts[p as usize + 1] += 1;
            }
        }
        for i in 1..counts.len() {
            counts[i] += counts[i - 1];
        }
        let offsets = counts;
        let mut fill = offsets.clone();
        let mut entries = vec![0u32; *offsets.last().unwrap() as usize];
        for m in order {
            for &p in &mask_pixels[m] {
                let slot = &mut fill[p as usize];
                entries[*slot as usize] = m as u32;
                *slot += 1;
            }
        }
        Self { offsets, entries }
    }

    pub fn of(&self, pixel: usize) -> &[u32] {
        &self.entries[self.offsets[pixel] as usize..self.offsets[pixel + 1] as usize]
    }

    pub fn n_pixels(&self) -> usize {
        self.offsets.len() - 1
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct View {
    pub camera: Camera,
    pub depth: DepthMap,
    pub masks: Vec<MaskRecord>,
    /// Sorted pixel indices of each mask, parallel to `masks`.
    pub mask_pixels: Vec<Vec<u32>>,
    pub membership: Membership,
}

impl View {
    /// Validates the view and materializes per-pixel membership. Mask ids and
    /// areas are taken from the pixel lists.
    pub fn new(camera: Camera, depth: DepthMap, mut mask_pixels: Vec<Vec<u32>>, scales: Vec<Option<f64>>) -> Result<Self> {
        let n = camera.pixel_count();
        let invalid = |reason: String| DatasetError::InvalidView { view: usize::MAX, reason };
        if depth.width != camera.width || depth.height != camera.height || depth.data.len() != n {
            return Err(invalid(format!(
                "depth is {}x{} ({} values) but camera is {}x{}",
                depth.width,
                depth.height,
                depth.data.len(),
                camera.width,
                camera.height
            )));
        }
        if scales.len() != mask_pixels.len() {
            return Err(invalid(format!("{} scales for {} masks", scales.len(), mask_pixels.len())));
        }
        if mask_pixels.len() > u16::MAX as usize {
            return Err(invalid(format!("{} masks exceed the u16 label range", mask_pixels.len())));
        }
        let mut masks = Vec::with_capacity(mask_pixels.len());
        for (i, pixels) in mask_pixels.iter_mut().enumerate() {
            pixels.sort_unstable();
            pixels.dedup();
            if pixels.is_empty() {
                return Err(invalid(format!("mask {} is empty", i + 1)));
            }
            if *pixels.last().unwrap() as usize >= n {
                return Err(invalid(format!("mask {} has a pixel outside the image", i + 1)));
            }
            masks.push(MaskRecord {
                mask_id: i as u32 + 1,
                pixel_area: pixels.len() as u32,
                scale3d: scales[i],
            });
        }
        let membership = Membership::build(n, &masks, &mask_pixels);
        Ok(Self {
            camera,
            depth,
            masks,
            mask_pixels,
            membership,
        })
    }

    /// Greedy first-fit packing of masks into non-overlapping channels.
    pub fn channel_assignment(&self) -> (Vec<u32>, usize) {
        let n = self.camera.pixel_count();
        let mut occupied: Vec<Vec<bool>> = Vec::new();
        let mut channel_of = Vec::with_capacity(self.masks.len());
        for pixels in &self.mask_pixels {
            let c = occupied
                .iter()
                .position(|occ| pixels.iter().all(|&p| !occ[p as usize]))
                .unwrap_or_else(|| {
                    occupied.push(vec![false; n]);
                    occupied.len() - 1
                });
            for &p in pixels {
                occupied[c][p as usize] = true;
            }
            channel_of.push(c as u32);
        }
        (channel_of, occupied.len())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub views: Vec<View>,
    pub world_unit: String,
    pub camera_extent: f64,
    pub points: Option<Vec<[f32; 3]>>,
    /// `gt_labels[level][point]`, present only for synthetic data.
    pub gt_labels: Option<Vec<Vec<u32>>>,
}

impl Dataset {
    pub fn validate(&self) -> Result<()> {
        if self.views.is_empty() {
            return Err(DatasetError::NoViews);
        }
        for (i, v) in self.views.iter().enumerate() {
            v.camera.validate().map_err(|source| DatasetError::Camera { index: i, source })?;
        }
        if !(self.camera_extent > 0.0 && self.camera_extent.is_finite()) {
            return Err(DatasetError::InvalidView {
                view: 0,
                reason: format!("camera_extent must be positive, got {}", self.camera_extent),
            });
        }
        if let (Some(points), Some(labels)) = (&self.points, &self.gt_labels) {
            if labels.iter().any(|l| l.len() != points.len()) {
                return Err(DatasetError::InvalidView {
                    view: 0,
                    reason: "ground-truth labels do not cover every point".into(),
                });
            }
        }
        Ok(())
    }

    pub fn mask_count(&self) -> usize {
        self.views.iter().map(|v| v.masks.len()).sum()
    }

    /// Every assigned mask scale, in view then mask order.
    pub fn all_scales(&self) -> Vec<f64> {
        self.views
            .iter()
            .flat_map(|v| v.masks.iter().filter_map(|m| m.scale3d))
            .collect()
    }

    /// Render every view of a synthetic scene into a dataset.
    /// Render every camera of `scene`. Only points that own a pixel in at
    /// least one view are exported, since nothing else could be reconstructed.
    pub fn from_scene(scene: &SyntheticScene, mix: &LevelMix) -> Result<Self> {
        let mut views = Vec::with_capacity(scene.cameras.len());
        let mut seen = vec![false; scene.points.len()];
        for (i, cam) in scene.cameras.iter().enumerate() {
            let rendered = render_view(scene, i, mix)?;
            for &o in &rendered.owner {
                if o != NO_POINT {
                    seen[o as usize] = true;
                }
            }
            let pixels: Vec<Vec<u32>> = rendered.masks.into_iter().map(|m| m.pixels).collect();
            let scales = vec![None; pixels.len()];
            views.push(View::new(cam.clone(), rendered.depth, pixels, scales).map_err(|e| at_view(e, i))?);
        }
        let keep: Vec<usize> = (0..seen.len()).filter(|&i| seen[i]).collect();
        let ds = Self {
            views,
            world_unit: "synthetic unit".into(),
            camera_extent: scene.camera_extent,
            points: Some(
                keep.iter()
                    .map(|&i| scene.points[i].map(|c| c as f32))
                    .collect(),
            ),
            gt_labels: Some(
                scene
                    .labels
                    .iter()
                    .map(|level| keep.iter().map(|&i| level[i]).collect())
                    .collect(),
            ),
        };
        ds.validate()?;
        Ok(ds)
    }

    /// Point positions in f64, as used by decomposition.
    pub fn points_f64(&self) -> Option<Vec<[f64; 3]>> {
        self.points
            .as_ref()
            .map(|ps| ps.iter().map(|p| [p[0] as f64, p[1] as f64, p[2] as f64]).collect())
    }
}

fn at_view(e: DatasetError, view: usize) -> DatasetError {
    match e {
        DatasetError::InvalidView { reason, .. } => DatasetError::InvalidView { view, reason },
        other => other,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViewPaths {
    pub depth_path: String,
    pub masklabel_path: String,
    pub mask_meta_path: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub version: u32,
    pub cameras: Vec<Camera>,
    pub views: Vec<ViewPaths>,
    pub world_unit: String,
    pub camera_extent: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub points_path: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gt_labels_path: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct MaskMetaEntry {
    mask_id: u32,
    pixel_area: u32,
    scale3d: Option<f64>,
    channel: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct MaskMeta {
    masks: Vec<MaskMetaEntry>,
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> DatasetError + '_ {
    move |source| {
        if source.kind() == io::ErrorKind::NotFound {
            DatasetError::Missing(path.to_path_buf())
        } else {
            DatasetError::Io {
                path: path.to_path_buf(),
                source,
            }
        }
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    let mut f = io::BufWriter::new(fs::File::create(path).map_err(io_err(path))?);
    f.write_all(bytes).map_err(io_err(path))?;
    f.flush().map_err(io_err(path))
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(io_err(path))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|source| DatasetError::Json {
        path: path.to_path_buf(),
        source,
    })?;
    write_file(path, text.as_bytes())
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let bytes = read_file(path)?;
    serde_json::from_slice(&bytes).map_err(|source| DatasetError::Json {
        path: path.to_path_buf(),
        source,
    })
}

fn corrupt(path: &Path, reason: impl Into<String>) -> DatasetError {
    DatasetError::Corrupt {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

pub fn f32s_to_bytes(values: &[f32]) -> Vec<u8> {
    values.iter().flat_map(|v| v.to_le_bytes()).collect()
}

pub fn bytes_to_f32s(bytes: &[u8]) -> Option<Vec<f32>> {
    (bytes.len() % 4 == 0).then(|| {
        bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect()
    })
}

fn u32_at(bytes: &[u8], offset: usize) -> Option<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
}

fn encode_masks(view: &View, channel_of: &[u32], channels: usize) -> Vec<u8> {
    let n = view.camera.pixel_count();
    let mut planes = vec![0u16; channels * n];
    for (m, pixels) in view.mask_pixels.iter().enumerate() {
        let base = channel_of[m] as usize * n;
        for &p in pixels {
            planes[base + p as usize] = view.masks[m].mask_id as u16;
        }
    }
    let mut out = Vec::with_capacity(20 + planes.len() * 2);
    out.extend_from_slice(MASK_MAGIC);
    for v in [FORMAT_VERSION, view.camera.width, view.camera.height, channels as u32] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.extend(planes.iter().flat_map(|v| v.to_le_bytes()));
    out
}

/// Decode label channels into per-mask pixel lists, indexed by `mask_id - 1`.
fn decode_masks(path: &Path, bytes: &[u8], width: u32, height: u32, n_masks: usize) -> Result<(Vec<Vec<u32>>, Vec<u32>)> {
    if bytes.len() < 20 || &bytes[..4] != MASK_MAGIC {
        return Err(corrupt(path, "bad magic"));
    }
    let version = u32_at(bytes, 4).unwrap();
    if version != FORMAT_VERSION {
        return Err(DatasetError::Version {
            found: version,
            expected: FORMAT_VERSION,
        });
    }
    let (w, h, channels) = (u32_at(bytes, 8).unwrap(), u32_at(bytes, 12).unwrap(), u32_at(bytes, 16).unwrap() as usize);
    if (w, h) != (width, height) {
        return Err(corrupt(path, format!("label maps are {w}x{h}, camera is {width}x{height}")));
    }
    let n = w as usize * h as usize;
    if bytes.len() != 20 + channels * n * 2 {
        return Err(corrupt(path, format!("expected {} bytes, found {}", 20 + channels * n * 2, bytes.len())));
    }
    let mut pixels = vec![Vec::new(); n_masks];
    let mut channel_of = vec![u32::MAX; n_masks];
    for c in 0..channels {
        for p in 0..n {
            let at = 20 + (c * n + p) * 2;
            let id = u16::from_le_bytes([bytes[at], bytes[at + 1]]) as usize;
            if id == 0 {
                continue;
            }
            if id > n_masks {
                return Err(corrupt(path, format!("label {id} has no metadata entry")));
            }
            if channel_of[id - 1] != c as u32 && channel_of[id - 1] != u32::MAX {
                return Err(corrupt(path, format!("mask {id} spans several channels")));
            }
            channel_of[id - 1] = c as u32;
            pixels[id - 1].push(p as u32);
        }
    }
    Ok((pixels, channel_of))
}

fn encode_labels(labels: &[Vec<u32>]) -> Vec<u8> {
    let n = labels.first().map_or(0, Vec::len);
    let mut out = Vec::with_capacity(8 + labels.len() * n * 4);
    out.extend_from_slice(&(labels.len() as u32).to_le_bytes());
    out.extend_from_slice(&(n as u32).to_le_bytes());
    for level in labels {
        out.extend(level.iter().flat_map(|v| v.to_le_bytes()));
    }
    out
}

fn decode_labels(path: &Path, bytes: &[u8]) -> Result<Vec<Vec<u32>>> {
    let (levels, n) = match (u32_at(bytes, 0), u32_at(bytes, 4)) {
        (Some(l), Some(n)) => (l as usize, n as usize),
        _ => return Err(corrupt(path, "truncated header")),
    };
    if bytes.len() != 8 + levels * n * 4 {
        return Err(corrupt(path, "length does not match header"));
    }
    Ok((0..levels)
        .map(|l| (0..n).map(|i| u32_at(bytes, 8 + (l * n + i) * 4).unwrap()).collect())
        .collect())
}

/// Write `dataset` under `dir`, creating it if needed.
pub fn write_dataset(dataset: &Dataset, dir: &Path) -> Result<DatasetManifest> {
    dataset.validate()?;
    let mut paths = Vec::with_capacity(dataset.views.len());
    for (i, view) in dataset.views.iter().enumerate() {
        let vp = ViewPaths {
            depth_path: format!("views/{i}/depth.f32"),
            masklabel_path: format!("views/{i}/masks.bin"),
            mask_meta_path: format!("views/{i}/masks.json"),
        };
        write_file(&dir.join(&vp.depth_path), &f32s_to_bytes(&view.depth.data))?;
        let (channel_of, channels) = view.channel_assignment();
        write_file(&dir.join(&vp.masklabel_path), &encode_masks(view, &channel_of, channels))?;
        let meta = MaskMeta {
            masks: view
                .masks
                .iter()
                .zip(&channel_of)
                .map(|(m, &channel)| MaskMetaEntry {
                    mask_id: m.mask_id,
                    pixel_area: m.pixel_area,
                    scale3d: m.scale3d,
                    channel,
                })
                .collect(),
        };
        write_json(&dir.join(&vp.mask_meta_path), &meta)?;
        paths.push(vp);
    }
    let points_path = dataset.points.as_ref().map(|_| "points.bin".to_string());
    if let Some(points) = &dataset.points {
        let flat: Vec<f32> = points.iter().flatten().copied().collect();
        write_file(&dir.join("points.bin"), &f32s_to_bytes(&flat))?;
    }
    let gt_labels_path = dataset.gt_labels.as_ref().map(|_| "gt_labels.bin".to_string());
    if let Some(labels) = &dataset.gt_labels {
        write_file(&dir.join("gt_labels.bin"), &encode_labels(labels))?;
    }
    let manifest = DatasetManifest {
        version: FORMAT_VERSION,
        cameras: dataset.views.iter().map(|v| v.camera.clone()).collect(),
        views: paths,
        world_unit: dataset.world_unit.clone(),
        camera_extent: dataset.camera_extent,
        points_path,
        gt_labels_path,
    };
    write_json(&dir.join("manifest.json"), &manifest)?;
    Ok(manifest)
}

/// Rewrite only the mask metadata files, e.g. after scale assignment.
pub fn write_mask_meta(dataset: &Dataset, dir: &Path) -> Result<()> {
    let manifest: DatasetManifest = read_json(&dir.join("manifest.json"))?;
    if manifest.views.len() != dataset.views.len() {
        return Err(DatasetError::CountMismatch {
            cameras: manifest.views.len(),
            views: dataset.views.len(),
        });
    }
    for (view, vp) in dataset.views.iter().zip(&manifest.views) {
        let (channel_of, _) = view.channel_assignment();
        let meta = MaskMeta {
            masks: view
                .masks
                .iter()
                .zip(&channel_of)
                .map(|(m, &channel)| MaskMetaEntry {
                    mask_id: m.mask_id,
                    pixel_area: m.pixel_area,
                    scale3d: m.scale3d,
                    channel,
                })
                .collect(),
        };
        write_json(&dir.join(&vp.mask_meta_path), &meta)?;
    }
    Ok(())
}

pub fn read_manifest(dir: &Path) -> Result<DatasetManifest> {
    let manifest: DatasetManifest = read_json(&dir.join("manifest.json"))?;
    if manifest.version != FORMAT_VERSION {
        return Err(DatasetError::Version {
            found: manifest.version,
            expected: FORMAT_VERSION,
        });
    }
    Ok(manifest)
}

pub fn read_dataset(dir: &Path) -> Result<Dataset> {
    let manifest = read_manifest(dir)?;
    if manifest.views.is_empty() {
        return Err(DatasetError::NoViews);
    }
    if manifest.cameras.len() != manifest.views.len() {
        return Err(DatasetError::CountMismatch {
            cameras: manifest.cameras.len(),
            views: manifest.views.len(),
        });
    }
    let mut views = Vec::with_capacity(manifest.views.len());
    for (i, (cam, vp)) in manifest.cameras.iter().zip(&manifest.views).enumerate() {
        cam.validate().map_err(|source| DatasetError::Camera { index: i, source })?;
        let depth_path = dir.join(&vp.depth_path);
        let depth = bytes_to_f32s(&read_file(&depth_path)?)
            .filter(|d| d.len() == cam.pixel_count())
            .ok_or_else(|| corrupt(&depth_path, format!("expected {} f32 values", cam.pixel_count())))?;

        let meta_path = dir.join(&vp.mask_meta_path);
        let meta: MaskMeta = read_json(&meta_path)?;
        for (k, m) in meta.masks.iter().enumerate() {
            if m.mask_id as usize != k + 1 {
                return Err(corrupt(&meta_path, format!("mask ids must be 1..=K in order, found {} at {}", m.mask_id, k)));
            }
            if m.scale3d.is_some_and(|s| !(s >= 0.0 && s <= 2.0 * manifest.camera_extent)) {
                return Err(corrupt(&meta_path, format!("mask {} has out-of-range scale3d", m.mask_id)));
            }
        }
        let label_path = dir.join(&vp.masklabel_path);
        let (pixels, channel_of) = decode_masks(&label_path, &read_file(&label_path)?, cam.width, cam.height, meta.masks.len())?;
        for (m, (px, &c)) in meta.masks.iter().zip(pixels.iter().zip(&channel_of)) {
            if px.len() != m.pixel_area as usize || c != m.channel {
                return Err(corrupt(&label_path, format!("mask {} disagrees with its metadata", m.mask_id)));
            }
        }
        let scales = meta.masks.iter().map(|m| m.scale3d).collect();
        let depth = DepthMap {
            width: cam.width,
            height: cam.height,
            data: depth,
        };
        views.push(View::new(cam.clone(), depth, pixels, scales).map_err(|e| at_view(e, i))?);
    }
    let points = match &manifest.points_path {
        Some(p) => {
            let path = dir.join(p);
            let flat = bytes_to_f32s(&read_file(&path)?)
                .filter(|f| f.len() % 3 == 0)
                .ok_or_else(|| corrupt(&path, "not a list of f32 triplets"))?;
            Some(flat.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect())
        }
        None => None,
    };
    let gt_labels = match &manifest.gt_labels_path {
        Some(p) => {
            let path = dir.join(p);
            Some(decode_labels(&path, &read_file(&path)?)?)
        }
        None => None,
    };
    let ds = Dataset {
        views,
        world_unit: manifest.world_unit,
        camera_extent: manifest.camera_extent,
        points,
        gt_labels,
    };
    ds.validate()?;
    Ok(ds)
}
