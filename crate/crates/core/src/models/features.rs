//! Hand-built, translation-tolerant tile descriptors that stand in for a vision
//! encoder's input at desk scale.

use crate::objectives::{render_single_stain, stain_separate_rgb, StainMatrix, RUIFROK_EOSIN};
use image::RgbImage;
use serde::{Deserialize, Serialize};

pub const FEATURE_DIM: usize = 27;
/// Side of the pooled hematoxylin grid regressed by the stain pretext task.
pub const STAIN_GRID: u32 = 4;
const STRIDE: u32 = 2;
const GRAY_BINS: usize = 8;

fn gray(p: &image::Rgb<u8>) -> f64 {
    (0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64) / 255.0
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    if v.is_empty() {
        return (0.0, 0.0);
    }
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n;
    (m, var.sqrt())
}

/// Feature vector of length [`FEATURE_DIM`].
///
/// Colour moments, gray-level histogram and moments, stain concentration statistics and
/// the shape of the darkest blob (its size, spread and whether its centroid is
/// itself dark, which separates filled figures from rings).
pub fn extract_features(tile: &RgbImage) -> Vec<f64> {
    let (w, h) = tile.dimensions();
    let mut grays = Vec::new();
    let mut chans = [Vec::new(), Vec::new(), Vec::new()];
    let mut coords = Vec::new();
    for y in (0..h).step_by(STRIDE as usize) {
        for x in (0..w).step_by(STRIDE as usize) {
            let p = tile.get_pixel(x, y);
            grays.push(gray(p));
            for c in 0..3 {
                chans[c].push(p[c] as f64 / 255.0);
            }
            coords.push((x as f64, y as f64));
        }
    }
    let mut f = Vec::with_capacity(FEATURE_DIM);
    for c in &chans {
        let (m, s) = mean_std(c);
        f.push(m);
        f.push(s);
    }
    let mut hist = [0.0; GRAY_BINS];
    for g in &grays {
        hist[((g * GRAY_BINS as f64) as usize).min(GRAY_BINS - 1)] += 1.0;
    }
    f.extend(hist.iter().map(|c| c / grays.len().max(1) as f64));
    let (gm, gsd) = mean_std(&grays);
    f.extend([gm, gsd]);

    let (hmap, emap) = stain_separate_rgb(tile, &StainMatrix::ruifrok());
    let sub = |m: &crate::objectives::ConcentrationMap| -> Vec<f64> {
        let mut v = Vec::new();
        for y in (0..h).step_by(STRIDE as usize) {
            for x in (0..w).step_by(STRIDE as usize) {
                v.push(m.get(x, y) as f64);
            }
        }
        v
    };
    let hv = sub(&hmap);
    let (hm, hs) = mean_std(&hv);
    let mut sorted = hv.clone();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let q = |p: f64| {
        sorted
            .get(((sorted.len() as f64 - 1.0) * p) as usize)
            .copied()
            .unwrap_or(0.0)
    };
    f.extend([hm, hs, q(0.9), q(0.99)]);
    let (em, es) = mean_std(&sub(&emap));
    f.extend([em, es]);

    // Dark blob: pixels well below the tile's median gray.
    let mut gs = grays.clone();
    gs.sort_by(|a, b| a.total_cmp(b));
    let median = gs.get(gs.len() / 2).copied().unwrap_or(0.0);
    let thresh = median * 0.6;
    let dark: Vec<(f64, f64)> = grays
        .iter()
        .zip(&coords)
        .filter(|(g, _)| **g < thresh)
        .map(|(_, c)| *c)
        .collect();
    let frac_dark = dark.len() as f64 / grays.len().max(1) as f64;
    let (r_mean, r_std, core_dark) = if dark.is_empty() {
        (0.0, 0.0, 0.0)
    } else {
        let n = dark.len() as f64;
        let cx = dark.iter().map(|c| c.0).sum::<f64>() / n;
        let cy = dark.iter().map(|c| c.1).sum::<f64>() / n;
        let radii: Vec<f64> = dark
            .iter()
            .map(|(x, y)| ((x - cx).powi(2) + (y - cy).powi(2)).sqrt())
            .collect();
        let (rm, rs) = mean_std(&radii);
        // Darkness in a small disc around the centroid, relative to the median.
        let mut acc = 0.0;
        let mut cnt = 0.0;
        for (g, (x, y)) in grays.iter().zip(&coords) {
            if ((x - cx).powi(2) + (y - cy).powi(2)).sqrt() <= 4.0 {
                acc += g;
                cnt += 1.0;
            }
        }
        let core = if cnt > 0.0 && median > 0.0 {
            1.0 - (acc / cnt) / median
        } else {
            0.0
        };
        (rm / w as f64, rs / w as f64, core)
    };
    f.extend([frac_dark, r_mean, r_std, core_dark, frac_dark.sqrt() / (r_mean + 1e-3)]);
    debug_assert_eq!(f.len(), FEATURE_DIM);
    f
}

/// Input and target for the hematoxylin-from-eosin regression: features of the
/// tile re-rendered from its eosin channel alone, and the pooled H map.
pub fn stain_pretext_example(tile: &RgbImage) -> (Vec<f64>, Vec<f64>) {
    let (h, e) = stain_separate_rgb(tile, &StainMatrix::ruifrok());
    let e_only = render_single_stain(&e, RUIFROK_EOSIN);
    (extract_features(&e_only), h.pooled(STAIN_GRID))
}

/// Per-dimension affine normalization fitted on training inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    pub fn identity(dim: usize) -> Self {
        Self {
            mean: vec![0.0; dim],
            std: vec![1.0; dim],
        }
    }

    pub fn fit(rows: &[Vec<f64>]) -> Self {
        let dim = rows.first().map_or(0, Vec::len);
        let mut mean = vec![0.0; dim];
        let mut std = vec![0.0; dim];
        for k in 0..dim {
            let (m, s) = mean_std(&rows.iter().map(|r| r[k]).collect::<Vec<_>>());
            mean[k] = m;
            std[k] = if s > 1e-12 { s } else { 1.0 };
        }
        Self { mean, std }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(&self.mean)
            .zip(&self.std)
            .map(|((v, m), s)| (v - m) / s)
            .collect()
    }
}
