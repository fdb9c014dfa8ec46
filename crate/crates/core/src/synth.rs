//! Synthetic slides with annotated figures, for running the whole pipeline
//! without the real dataset.
//!
//! Figures sit on a grid with 220 px pitch and at least 112 px from the slide
//! edge. At that pitch no shifted 224 px tile around one figure can touch the
//! box of another, so nothing is ever pruned and every tile shows exactly one
//! figure. Mitotic figures are filled dark disks; hard negatives are rings
//! whose hole shrinks to nothing as separability goes to zero.

use image::{Rgb, RgbImage};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::fs;
use std::path::{Path, PathBuf};
use thiserror::Error;

pub const GRID_PITCH_PX: u32 = 220;
pub const EDGE_MARGIN_PX: u32 = 112;
const BOX_HALF: u32 = 25;
const MAX_RING_HOLE: f64 = 7.0;

pub const ANNOTATIONS_FILE: &str = "annotations.json";
pub const METADATA_FILE: &str = "metadata.json";
pub const SLIDES_DIR: &str = "slides";

/// (species, tumor type) pairs and scanners the generator draws from.
pub const TUMOR_VOCABULARY: [(&str, &str); 7] = [
    ("human", "breast carcinoma"),
    ("canine", "lung carcinoma"),
    ("canine", "lymphoma"),
    ("canine", "cutaneous mast cell tumor"),
    ("human", "neuroendocrine tumor"),
    ("canine", "soft tissue sarcoma"),
    ("human", "melanoma"),
];
pub const SCANNER_VOCABULARY: [&str; 4] = ["Hamamatsu XR", "Hamamatsu S360", "Aperio ScanScope CS2", "Leica GT450"];

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("{requested} annotations do not fit on a {width}×{height} slide ({slots} grid slots)")]
    DoesNotFit {
        requested: usize,
        slots: usize,
        width: u32,
        height: u32,
    },
    #[error("invalid synthetic spec: {0}")]
    Invalid(String),
    #[error("{path}: {message}")]
    Io { path: PathBuf, message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub n_patients: usize,
    pub slides_per_patient: usize,
    pub annotations_per_slide: usize,
    pub slide_width: u32,
    pub slide_height: u32,
    /// 1 renders negatives as clear rings, 0 makes them indistinguishable from positives.
    pub separability: f64,
    pub positive_fraction: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            n_patients: 10,
            slides_per_patient: 1,
            annotations_per_slide: 36,
            slide_width: 1544,
            slide_height: 1544,
            separability: 1.0,
            positive_fraction: 0.5,
            seed: 7,
        }
    }
}

fn grid_axis(extent: u32) -> Vec<u32> {
    (0..)
        .map(|i| EDGE_MARGIN_PX + i * GRID_PITCH_PX)
        .take_while(|c| c + EDGE_MARGIN_PX <= extent)
        .collect()
}

impl SyntheticSpec {
    /// Figure centers available on one slide.
    pub fn slots(&self) -> Vec<(u32, u32)> {
        let xs = grid_axis(self.slide_width);
        let ys = grid_axis(self.slide_height);
        ys.iter().flat_map(|&y| xs.iter().map(move |&x| (x, y))).collect()
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        if self.n_patients == 0 || self.slides_per_patient == 0 {
            return Err(SynthError::Invalid("need at least one patient and one slide".into()));
        }
        if !(0.0..=1.0).contains(&self.separability) || !(0.0..=1.0).contains(&self.positive_fraction) {
            return Err(SynthError::Invalid(format!(
                "separability {} and positive fraction {} must lie in [0, 1]",
                self.separability, self.positive_fraction
            )));
        }
        let slots = self.slots().len();
        if self.annotations_per_slide > slots {
            return Err(SynthError::DoesNotFit {
                requested: self.annotations_per_slide,
                slots,
                width: self.slide_width,
                height: self.slide_height,
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SyntheticSlide {
    pub slide_id: String,
    pub patient_id: String,
    pub file_name: String,
    pub species: String,
    pub tumor_type: String,
    pub scanner: String,
    /// `(annotation_id, center, is_mitotic)`.
    pub figures: Vec<(String, (u32, u32), bool)>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CorpusSummary {
    pub annotations_path: PathBuf,
    pub metadata_path: PathBuf,
    pub slides: Vec<SyntheticSlide>,
}

impl CorpusSummary {
    pub fn count(&self, mitotic: bool) -> usize {
        self.slides
            .iter()
            .flat_map(|s| &s.figures)
            .filter(|f| f.2 == mitotic)
            .count()
    }
}

fn stream(seed: u64, tag: &str) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(tag.as_bytes());
    let d = h.finalize();
    ChaCha8Rng::from_seed(d.into())
}

/// Slide layout and metadata without pixels.
pub fn plan_corpus(spec: &SyntheticSpec) -> Result<Vec<SyntheticSlide>, SynthError> {
    spec.validate()?;
    let slots = spec.slots();
    let mut out = Vec::new();
    for p in 0..spec.n_patients {
        let patient_id = format!("patient_{p:03}");
        let mut prng = stream(spec.seed, &patient_id);
        let (species, tumor) = TUMOR_VOCABULARY[prng.random_range(0..TUMOR_VOCABULARY.len())];
        let scanner = SCANNER_VOCABULARY[prng.random_range(0..SCANNER_VOCABULARY.len())];
        for s in 0..spec.slides_per_patient {
            let slide_id = format!("slide_{:03}", p * spec.slides_per_patient + s);
            let mut rng = stream(spec.seed, &format!("layout/{slide_id}"));
            let mut cells = slots.clone();
            cells.shuffle(&mut rng);
            cells.truncate(spec.annotations_per_slide);
            cells.sort_unstable_by_key(|&(x, y)| (y, x));
            let n_pos = (spec.positive_fraction * spec.annotations_per_slide as f64).round() as usize;
            let mut labels: Vec<bool> = (0..spec.annotations_per_slide).map(|i| i < n_pos).collect();
            labels.shuffle(&mut rng);
            let figures = cells
                .into_iter()
                .zip(labels)
                .enumerate()
                .map(|(i, (c, m))| (format!("{slide_id}_a{i:03}"), c, m))
                .collect();
            out.push(SyntheticSlide {
                file_name: format!("{SLIDES_DIR}/{slide_id}.png"),
                slide_id,
                patient_id: patient_id.clone(),
                species: species.to_string(),
                tumor_type: tumor.to_string(),
                scanner: scanner.to_string(),
                figures,
            });
        }
    }
    Ok(out)
}

fn scanner_tint(scanner: &str) -> [f64; 3] {
    match SCANNER_VOCABULARY.iter().position(|s| *s == scanner) {
        Some(0) => [1.0, 0.98, 1.0],
        Some(1) => [0.98, 0.97, 1.02],
        Some(2) => [1.02, 0.99, 0.97],
        _ => [0.99, 1.01, 1.0],
    }
}

fn paint_disc(img: &mut RgbImage, c: (f64, f64), r_out: f64, r_in: f64, color: [f64; 3], rng: &mut ChaCha8Rng) {
    let (w, h) = img.dimensions();
    let x0 = (c.0 - r_out).floor().max(0.0) as u32;
    let y0 = (c.1 - r_out).floor().max(0.0) as u32;
    let x1 = ((c.0 + r_out).ceil() as u32).min(w - 1);
    let y1 = ((c.1 + r_out).ceil() as u32).min(h - 1);
    for y in y0..=y1 {
        for x in x0..=x1 {
            let d = ((x as f64 - c.0).powi(2) + (y as f64 - c.1).powi(2)).sqrt();
            if d <= r_out && d >= r_in {
                let px: [u8; 3] =
                    std::array::from_fn(|k| (color[k] + rng.random_range(-6.0..6.0)).clamp(0.0, 255.0) as u8);
                img.put_pixel(x, y, Rgb(px));
            }
        }
    }
}

/// Render one slide. Pixel content depends only on the spec seed and slide id.
pub fn render_slide(spec: &SyntheticSpec, slide: &SyntheticSlide) -> RgbImage {
    let mut rng = stream(spec.seed, &format!("pixels/{}", slide.slide_id));
    let tint = scanner_tint(&slide.scanner);
    let base = [236.0, 190.0, 214.0];
    let mut img = RgbImage::from_fn(spec.slide_width, spec.slide_height, |_, _| {
        let n: f64 = rng.random_range(-8.0..8.0);
        Rgb(std::array::from_fn(|k| {
            ((base[k] + n) * tint[k]).clamp(0.0, 255.0) as u8
        }))
    });
    // Pale background nuclei, kept away from the figures.
    let n_nuclei = (spec.slide_width as usize * spec.slide_height as usize) / 6000;
    for _ in 0..n_nuclei {
        let c = (
            rng.random_range(0.0..spec.slide_width as f64),
            rng.random_range(0.0..spec.slide_height as f64),
        );
        let near = slide
            .figures
            .iter()
            .any(|(_, f, _)| (c.0 - f.0 as f64).abs() < 40.0 && (c.1 - f.1 as f64).abs() < 40.0);
        if near {
            continue;
        }
        let r = rng.random_range(3.0..6.0);
        paint_disc(
            &mut img,
            c,
            r,
            0.0,
            [178.0 * tint[0], 140.0 * tint[1], 196.0 * tint[2]],
            &mut rng,
        );
    }
    for (_, (x, y), mitotic) in &slide.figures {
        let c = (*x as f64 + 0.5, *y as f64 + 0.5);
        let r_out = rng.random_range(10.0..13.0);
        let shade = rng.random_range(-10.0..10.0);
        let color = [
            (62.0 + shade) * tint[0],
            (32.0 + shade) * tint[1],
            (112.0 + shade) * tint[2],
        ];
        let hole = if *mitotic {
            0.0
        } else {
            MAX_RING_HOLE * spec.separability
        };
        paint_disc(&mut img, c, r_out, hole, color, &mut rng);
    }
    img
}

fn write_file(path: &Path, body: &[u8]) -> Result<(), SynthError> {
    fs::write(path, body).map_err(|e| SynthError::Io {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

/// Write `slides/*.png`, `annotations.json` and `metadata.json` into `dir`.
pub fn generate_synthetic_corpus(spec: &SyntheticSpec, dir: &Path) -> Result<CorpusSummary, SynthError> {
    let slides = plan_corpus(spec)?;
    let slide_dir = dir.join(SLIDES_DIR);
    fs::create_dir_all(&slide_dir).map_err(|e| SynthError::Io {
        path: slide_dir.clone(),
        message: e.to_string(),
    })?;
    use rayon::prelude::*;
    slides.par_iter().try_for_each(|s| {
        let path = dir.join(&s.file_name);
        render_slide(spec, s).save(&path).map_err(|e| SynthError::Io {
            path,
            message: e.to_string(),
        })
    })?;

    let images: Vec<serde_json::Value> = slides
        .iter()
        .map(|s| {
            serde_json::json!({
                "id": s.slide_id,
                "width": spec.slide_width,
                "height": spec.slide_height,
                "file_name": s.file_name,
            })
        })
        .collect();
    let annotations: Vec<serde_json::Value> = slides
        .iter()
        .flat_map(|s| {
            s.figures.iter().map(move |(id, (x, y), m)| {
                serde_json::json!({
                    "id": id,
                    "image_id": s.slide_id,
                    "bbox": [x - BOX_HALF, y - BOX_HALF, x + BOX_HALF, y + BOX_HALF],
                    "category_id": if *m { 1 } else { 2 },
                })
            })
        })
        .collect();
    let metadata: serde_json::Map<String, serde_json::Value> = slides
        .iter()
        .map(|s| {
            (
                s.slide_id.clone(),
                serde_json::json!({
                    "tumor_type": s.tumor_type,
                    "species": s.species,
                    "scanner": s.scanner,
                    "patient_id": s.patient_id,
                }),
            )
        })
        .collect();
    let annotations_path = dir.join(ANNOTATIONS_FILE);
    let metadata_path = dir.join(METADATA_FILE);
    let doc = serde_json::json!({ "images": images, "annotations": annotations });
    write_file(
        &annotations_path,
        (serde_json::to_string_pretty(&doc).expect("json") + "\n").as_bytes(),
    )?;
    write_file(
        &metadata_path,
        (serde_json::to_string_pretty(&metadata).expect("json") + "\n").as_bytes(),
    )?;
    Ok(CorpusSummary {
        annotations_path,
        metadata_path,
        slides,
    })
}
