//! Tile geometry: 50×50 annotation boxes become 224×224 tiles.
//!
//! Per annotation and replica: center the tile on the box, intersect the
//! `±max_shift` window with the shifts that keep the tile inside the slide,
//! sample a shift uniformly from that interval, then prune hard-negative tiles
//! that intersect any positive box on the same slide.

use crate::ingest::{AnnotationRecord, Manifest, SlideInfo};
use crate::types::{Label, PixelBox};
use image::RgbImage;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::{HashMap, VecDeque};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TileError {
    #[error("invalid shift bounds: {0}")]
    InvalidBounds(String),
    #[error("slide {slide_id} is {width}×{height}, smaller than the {tile_side} px tile")]
    SlideTooSmall {
        slide_id: String,
        width: u32,
        height: u32,
        tile_side: i64,
    },
    #[error("empty shift interval [{lo}, {hi}]")]
    EmptyInterval { lo: i64, hi: i64 },
    #[error("annotation {annotation_id}: no shift within ±{max_shift} px keeps the tile inside slide {slide_id} (x [{x_lo}, {x_hi}], y [{y_lo}, {y_hi}])")]
    NoFeasibleShift {
        annotation_id: String,
        slide_id: String,
        max_shift: i64,
        x_lo: i64,
        x_hi: i64,
        y_lo: i64,
        y_hi: i64,
    },
    #[error("replicas must be at least 1")]
    NoReplicas,
    #[error("annotation {0} references a slide missing from the manifest")]
    UnknownSlide(String),
    #[error("slide {slide_id}, tile at ({x}, {y}): {message}")]
    Pixels {
        slide_id: String,
        x: i64,
        y: i64,
        message: String,
    },
    #[error("tile file {path}: {message}")]
    TileFile { path: PathBuf, message: String },
}

/// Tile geometry parameters; defaults are ±80 px shifts, 224 px tiles, 50 px boxes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShiftBounds {
    pub max_shift_px: i64,
    pub tile_side_px: i64,
    pub box_side_px: i64,
}

impl Default for ShiftBounds {
    fn default() -> Self {
        Self {
            max_shift_px: 80,
            tile_side_px: 224,
            box_side_px: 50,
        }
    }
}

impl ShiftBounds {
    /// The box must stay inside the tile for every shift in the window:
    /// `max_shift + box_side/2 <= tile_side/2`.
    pub fn validate(&self) -> Result<(), TileError> {
        if self.tile_side_px <= 0 || self.box_side_px <= 0 || self.max_shift_px < 0 {
            return Err(TileError::InvalidBounds(format!("{self:?}")));
        }
        if self.max_shift_px + self.box_side_px / 2 > self.tile_side_px / 2 {
            return Err(TileError::InvalidBounds(format!(
                "shift {} + half box {} exceeds half tile {}",
                self.max_shift_px,
                self.box_side_px / 2,
                self.tile_side_px / 2
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TileRole {
    Train,
    Eval,
}

impl TileRole {
    pub fn default_replicas(self) -> u32 {
        match self {
            TileRole::Train => 10,
            TileRole::Eval => 1,
        }
    }
}

/// How the per-replica shift is chosen.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShiftMode {
    /// Uniform over the feasible interval.
    #[default]
    Random,
    /// The feasible shift closest to zero (centered unless near an edge).
    Centered,
}

/// What a hard-negative tile is tested against when pruning.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OverlapTarget {
    /// The positive annotation's own 50×50 box.
    #[default]
    PositiveBox,
    /// The unshifted tile-sized square centered on the positive box.
    PositiveTile,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TileSpec {
    pub annotation_id: String,
    pub slide_id: String,
    pub tile_origin: (i64, i64),
    pub tile_side_px: i64,
    pub applied_shift: (i64, i64),
    pub label: Label,
    pub replica_index: u32,
    pub rng_seed: u64,
    pub source_box: PixelBox,
}

impl TileSpec {
    pub fn rect(&self) -> PixelBox {
        PixelBox::square(self.tile_origin, self.tile_side_px)
    }

    /// `<annotation_id>_<replica>`, also the crop file stem.
    pub fn tile_id(&self) -> String {
        format!("{}_{}", self.annotation_id, self.replica_index)
    }
}

/// Inclusive integer interval.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ShiftInterval {
    pub lo: i64,
    pub hi: i64,
}

impl ShiftInterval {
    pub fn is_empty(&self) -> bool {
        self.lo > self.hi
    }

    /// The member closest to zero.
    pub fn closest_to_zero(&self) -> i64 {
        0.clamp(self.lo, self.hi)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FeasibleShifts {
    pub x: ShiftInterval,
    pub y: ShiftInterval,
}

/// Top-left corner of the tile centered (floor-rounded) on `bbox`. May be negative.
pub fn expand_box(bbox: &PixelBox, tile_side: i64) -> (i64, i64) {
    let (cx, cy) = bbox.center();
    (cx - tile_side / 2, cy - tile_side / 2)
}

fn axis_interval(origin: i64, extent: i64, bounds: &ShiftBounds) -> ShiftInterval {
    ShiftInterval {
        lo: (-bounds.max_shift_px).max(-origin),
        hi: bounds.max_shift_px.min(extent - bounds.tile_side_px - origin),
    }
}

/// Per-axis shifts inside the `±max_shift` window that keep the tile inside the slide.
///
/// Either interval can still be empty when the box sits closer to the slide
/// edge than `tile_side/2 - box_side/2 - max_shift` pixels; callers decide what
/// to do with such annotations.
pub fn feasible_shift_interval(
    origin: (i64, i64),
    slide: &SlideInfo,
    bounds: &ShiftBounds,
) -> Result<FeasibleShifts, TileError> {
    let (w, h) = (i64::from(slide.width_px), i64::from(slide.height_px));
    if w < bounds.tile_side_px || h < bounds.tile_side_px {
        return Err(TileError::SlideTooSmall {
            slide_id: slide.slide_id.clone(),
            width: slide.width_px,
            height: slide.height_px,
            tile_side: bounds.tile_side_px,
        });
    }
    Ok(FeasibleShifts {
        x: axis_interval(origin.0, w, bounds),
        y: axis_interval(origin.1, h, bounds),
    })
}

/// Counter-style key derivation: the shift stream for one tile depends only on
/// `(global_seed, annotation_id, replica_index)`.
pub fn shift_seed(global_seed: u64, annotation_id: &str, replica_index: u32) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(global_seed.to_le_bytes());
    hasher.update((annotation_id.len() as u64).to_le_bytes());
    hasher.update(annotation_id.as_bytes());
    hasher.update(replica_index.to_le_bytes());
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}

/// Uniform integer shift over both inclusive intervals; `dx` is drawn first.
pub fn sample_shift(x: ShiftInterval, y: ShiftInterval, seed: u64) -> Result<(i64, i64), TileError> {
    for iv in [x, y] {
        if iv.is_empty() {
            return Err(TileError::EmptyInterval { lo: iv.lo, hi: iv.hi });
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dx = rng.random_range(x.lo..=x.hi);
    let dy = rng.random_range(y.lo..=y.hi);
    Ok((dx, dy))
}

/// Split `tiles` into (kept, pruned). A hard-negative tile is pruned iff its
/// rectangle intersects a positive annotation box on the same slide. Mitotic
/// tiles are always kept. Relative order is preserved in both outputs.
pub fn prune_overlapping_negatives(
    tiles: Vec<TileSpec>,
    positives: &[AnnotationRecord],
) -> (Vec<TileSpec>, Vec<TileSpec>) {
    prune_with_target(tiles, positives, OverlapTarget::PositiveBox, 224)
}

pub fn prune_with_target(
    tiles: Vec<TileSpec>,
    positives: &[AnnotationRecord],
    target: OverlapTarget,
    tile_side: i64,
) -> (Vec<TileSpec>, Vec<TileSpec>) {
    let mut by_slide: HashMap<&str, Vec<PixelBox>> = HashMap::new();
    for p in positives.iter().filter(|p| p.label == Label::Mitotic) {
        let rect = match target {
            OverlapTarget::PositiveBox => p.bbox,
            OverlapTarget::PositiveTile => PixelBox::square(expand_box(&p.bbox, tile_side), tile_side),
        };
        by_slide.entry(p.slide_id.as_str()).or_default().push(rect);
    }
    let mut kept = Vec::with_capacity(tiles.len());
    let mut pruned = Vec::new();
    for tile in tiles {
        let overlaps = tile.label == Label::HardNegative
            && by_slide.get(tile.slide_id.as_str()).is_some_and(|boxes| {
                let rect = tile.rect();
                boxes.iter().any(|b| rect.intersects(b))
            });
        if overlaps {
            pruned.push(tile);
        } else {
            kept.push(tile);
        }
    }
    (kept, pruned)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TileOptions {
    pub role: TileRole,
    pub replicas: u32,
    pub bounds: ShiftBounds,
    pub global_seed: u64,
    pub shift_mode: ShiftMode,
    pub overlap_target: OverlapTarget,
}

impl TileOptions {
    pub fn new(role: TileRole, global_seed: u64) -> Self {
        Self {
            role,
            replicas: role.default_replicas(),
            bounds: ShiftBounds::default(),
            global_seed,
            shift_mode: ShiftMode::Random,
            overlap_target: OverlapTarget::PositiveBox,
        }
    }
}

/// An annotation that produced no tiles because no admissible shift exists.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkippedAnnotation {
    pub annotation_id: String,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TileSet {
    pub tiles: Vec<TileSpec>,
    pub pruned: Vec<TileSpec>,
    pub skipped: Vec<SkippedAnnotation>,
}

/// Tiles for every annotation with the role's default replica count.
pub fn generate_tiles(
    manifest: &Manifest,
    role: TileRole,
    replicas: u32,
    bounds: ShiftBounds,
    global_seed: u64,
) -> Result<TileSet, TileError> {
    let options = TileOptions {
        replicas,
        bounds,
        ..TileOptions::new(role, global_seed)
    };
    generate_tiles_with(manifest, &options)
}

/// Expand, sample and prune for every annotation. Work is spread over the rayon
/// pool per annotation; output order follows the manifest's canonical order and
/// does not depend on the number of worker threads.
pub fn generate_tiles_with(manifest: &Manifest, options: &TileOptions) -> Result<TileSet, TileError> {
    if options.replicas == 0 {
        return Err(TileError::NoReplicas);
    }
    options.bounds.validate()?;
    let per_annotation: Vec<Result<Vec<TileSpec>, TileError>> = manifest
        .annotations()
        .par_iter()
        .map(|ann| tiles_for_annotation(manifest, ann, options))
        .collect();

    let mut tiles = Vec::with_capacity(manifest.annotations().len() * options.replicas as usize);
    let mut skipped = Vec::new();
    for (ann, result) in manifest.annotations().iter().zip(per_annotation) {
        match result {
            Ok(t) => tiles.extend(t),
            Err(e @ TileError::NoFeasibleShift { .. }) => skipped.push(SkippedAnnotation {
                annotation_id: ann.annotation_id.clone(),
                reason: e.to_string(),
            }),
            Err(e) => return Err(e),
        }
    }
    let positives: Vec<AnnotationRecord> = manifest
        .annotations()
        .iter()
        .filter(|a| a.label == Label::Mitotic)
        .cloned()
        .collect();
    let (tiles, pruned) = prune_with_target(tiles, &positives, options.overlap_target, options.bounds.tile_side_px);
    Ok(TileSet { tiles, pruned, skipped })
}

fn tiles_for_annotation(
    manifest: &Manifest,
    ann: &AnnotationRecord,
    options: &TileOptions,
) -> Result<Vec<TileSpec>, TileError> {
    let slide = manifest
        .slide(&ann.slide_id)
        .ok_or_else(|| TileError::UnknownSlide(ann.annotation_id.clone()))?;
    let bounds = &options.bounds;
    let origin = expand_box(&ann.bbox, bounds.tile_side_px);
    let feasible = feasible_shift_interval(origin, slide, bounds)?;
    if feasible.x.is_empty() || feasible.y.is_empty() {
        return Err(TileError::NoFeasibleShift {
            annotation_id: ann.annotation_id.clone(),
            slide_id: slide.slide_id.clone(),
            max_shift: bounds.max_shift_px,
            x_lo: feasible.x.lo,
            x_hi: feasible.x.hi,
            y_lo: feasible.y.lo,
            y_hi: feasible.y.hi,
        });
    }
    (0..options.replicas)
        .map(|replica| {
            let seed = shift_seed(options.global_seed, &ann.annotation_id, replica);
            let shift = match options.shift_mode {
                ShiftMode::Random => sample_shift(feasible.x, feasible.y, seed)?,
                ShiftMode::Centered => (feasible.x.closest_to_zero(), feasible.y.closest_to_zero()),
            };
            Ok(TileSpec {
                annotation_id: ann.annotation_id.clone(),
                slide_id: ann.slide_id.clone(),
                tile_origin: (origin.0 + shift.0, origin.1 + shift.1),
                tile_side_px: bounds.tile_side_px,
                applied_shift: shift,
                label: ann.label,
                replica_index: replica,
                rng_seed: seed,
                source_box: ann.bbox,
            })
        })
        .collect()
}

/// Images by slide id, plus insertion order for eviction.
type CacheState = (HashMap<String, Arc<RgbImage>>, VecDeque<String>);

/// Decoded slide images, bounded to `capacity` entries with oldest-first eviction.
pub struct SlideImageCache {
    capacity: usize,
    inner: Mutex<CacheState>,
}

impl SlideImageCache {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity: capacity.max(1),
            inner: Mutex::new((HashMap::new(), VecDeque::new())),
        }
    }

    pub fn get(&self, slide: &SlideInfo) -> Result<Arc<RgbImage>, TileError> {
        if let Some(img) = self.inner.lock().expect("cache lock").0.get(&slide.slide_id) {
            return Ok(Arc::clone(img));
        }
        let img = Arc::new(load_slide(slide)?);
        let mut guard = self.inner.lock().expect("cache lock");
        let (map, order) = &mut *guard;
        if !map.contains_key(&slide.slide_id) {
            while map.len() >= self.capacity {
                match order.pop_front() {
                    Some(old) => {
                        map.remove(&old);
                    }
                    None => break,
                }
            }
            map.insert(slide.slide_id.clone(), Arc::clone(&img));
            order.push_back(slide.slide_id.clone());
        }
        Ok(img)
    }
}

fn load_slide(slide: &SlideInfo) -> Result<RgbImage, TileError> {
    let img = image::open(&slide.image_path).map_err(|e| TileError::Pixels {
        slide_id: slide.slide_id.clone(),
        x: 0,
        y: 0,
        message: format!("cannot decode {}: {e}", slide.image_path.display()),
    })?;
    Ok(img.to_rgb8())
}

/// Exact crop of `spec` from an already-decoded slide image; no resampling.
pub fn crop_tile(spec: &TileSpec, slide_id: &str, img: &RgbImage) -> Result<RgbImage, TileError> {
    let (x, y) = spec.tile_origin;
    let side = spec.tile_side_px;
    if x < 0 || y < 0 || x + side > i64::from(img.width()) || y + side > i64::from(img.height()) {
        return Err(TileError::Pixels {
            slide_id: slide_id.to_string(),
            x,
            y,
            message: format!("tile of side {side} exceeds the {}×{} image", img.width(), img.height()),
        });
    }
    let (x, y, side) = (x as u32, y as u32, side as u32);
    let mut out = RgbImage::new(side, side);
    let stride = img.width() as usize * 3;
    let src = img.as_raw();
    let dst_stride = side as usize * 3;
    let dst: &mut [u8] = &mut out;
    for row in 0..side as usize {
        let start = (y as usize + row) * stride + x as usize * 3;
        dst[row * dst_stride..(row + 1) * dst_stride].copy_from_slice(&src[start..start + dst_stride]);
    }
    Ok(out)
}

/// Read the pixels of one tile, decoding the slide image from disk.
pub fn read_tile_pixels(spec: &TileSpec, slide: &SlideInfo) -> Result<RgbImage, TileError> {
    let img = load_slide(slide).map_err(|e| match e {
        TileError::Pixels { slide_id, message, .. } => TileError::Pixels {
            slide_id,
            x: spec.tile_origin.0,
            y: spec.tile_origin.1,
            message,
        },
        other => other,
    })?;
    crop_tile(spec, &slide.slide_id, &img)
}

/// Same as [`read_tile_pixels`] but reuses decoded slides across calls.
pub fn read_tile_pixels_cached(
    spec: &TileSpec,
    slide: &SlideInfo,
    cache: &SlideImageCache,
) -> Result<RgbImage, TileError> {
    let img = cache.get(slide).map_err(|e| match e {
        TileError::Pixels { slide_id, message, .. } => TileError::Pixels {
            slide_id,
            x: spec.tile_origin.0,
            y: spec.tile_origin.1,
            message,
        },
        other => other,
    })?;
    crop_tile(spec, &slide.slide_id, &img)
}

/// Write crops as `<annotation_id>_<replica>.png` into `dir`.
pub fn materialize_crops(
    tiles: &[TileSpec],
    manifest: &Manifest,
    dir: &Path,
    cache: &SlideImageCache,
) -> Result<usize, TileError> {
    fs::create_dir_all(dir).map_err(|e| TileError::TileFile {
        path: dir.to_path_buf(),
        message: e.to_string(),
    })?;
    tiles
        .par_iter()
        .map(|t| {
            let slide = manifest
                .slide(&t.slide_id)
                .ok_or_else(|| TileError::UnknownSlide(t.annotation_id.clone()))?;
            let crop = read_tile_pixels_cached(t, slide, cache)?;
            let path = dir.join(format!("{}.png", t.tile_id()));
            crop.save(&path).map_err(|e| TileError::TileFile {
                path,
                message: e.to_string(),
            })
        })
        .collect::<Result<Vec<()>, _>>()
        .map(|v| v.len())
}

pub fn tiles_to_ndjson(tiles: &[TileSpec]) -> String {
    tiles
        .iter()
        .map(|t| serde_json::to_string(t).expect("serializable") + "\n")
        .collect()
}

pub fn write_tiles(tiles: &[TileSpec], path: &Path) -> Result<(), TileError> {
    fs::write(path, tiles_to_ndjson(tiles)).map_err(|e| TileError::TileFile {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

pub fn read_tiles(path: &Path) -> Result<Vec<TileSpec>, TileError> {
    let text = fs::read_to_string(path).map_err(|e| TileError::TileFile {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| TileError::TileFile {
                path: path.to_path_buf(),
                message: format!("line {}: {e}", i + 1),
            })
        })
        .collect()
}
