//! Annotation ingest: COCO-like annotation documents plus case metadata become a
//! validated canonical [`Manifest`].
//!
//! The canonical manifest is newline-delimited JSON, one record per line:
//! a provenance header, then every slide, then every annotation, each block in
//! canonical id order. Downstream stages read only this file.

use crate::types::{Label, PixelBox, SlideMetadata};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use thiserror::Error;

/// Side length every annotation box must have.
pub const ANNOTATION_BOX_SIDE_PX: i64 = 50;
/// Slides smaller than this on either axis cannot yield a tile.
pub const MIN_SLIDE_SIDE_PX: u32 = 224;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed annotation document: {0}")]
    AnnotationFormat(String),
    #[error("malformed metadata document: {0}")]
    MetadataFormat(String),
    #[error("manifest {path}, line {line}: {message}")]
    ManifestFormat {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("invalid manifest: {0}")]
    InvalidManifest(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlideInfo {
    pub slide_id: String,
    pub patient_id: String,
    pub width_px: u32,
    pub height_px: u32,
    pub image_path: PathBuf,
    pub tumor_type: String,
    pub species: String,
    pub scanner: String,
}

impl SlideInfo {
    pub fn metadata(&self) -> SlideMetadata {
        SlideMetadata::new(&self.tumor_type, &self.species, &self.scanner)
    }

    pub fn bounds(&self) -> PixelBox {
        PixelBox::new(0, 0, i64::from(self.width_px), i64::from(self.height_px))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub annotation_id: String,
    pub slide_id: String,
    #[serde(rename = "box")]
    pub bbox: PixelBox,
    pub label: Label,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub annotation_sha256: String,
    pub metadata_sha256: String,
    /// RFC 3339 parse time. Not part of [`Manifest::content_digest`].
    pub parsed_at: String,
}

/// Validated slides and annotations. Immutable once built.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Manifest {
    slides: Vec<SlideInfo>,
    annotations: Vec<AnnotationRecord>,
    provenance: Provenance,
}

impl Manifest {
    /// Sorts slides by `slide_id` and annotations by `annotation_id`, then checks
    /// that ids are unique and every annotation resolves to a slide.
    pub fn new(
        mut slides: Vec<SlideInfo>,
        mut annotations: Vec<AnnotationRecord>,
        provenance: Provenance,
    ) -> Result<Self, IngestError> {
        slides.sort_by(|a, b| a.slide_id.cmp(&b.slide_id));
        annotations.sort_by(|a, b| a.annotation_id.cmp(&b.annotation_id));
        if let Some(w) = slides.windows(2).find(|w| w[0].slide_id == w[1].slide_id) {
            return Err(IngestError::InvalidManifest(format!(
                "duplicate slide_id {}",
                w[0].slide_id
            )));
        }
        if let Some(w) = annotations
            .windows(2)
            .find(|w| w[0].annotation_id == w[1].annotation_id)
        {
            return Err(IngestError::InvalidManifest(format!(
                "duplicate annotation_id {}",
                w[0].annotation_id
            )));
        }
        let manifest = Self {
            slides,
            annotations,
            provenance,
        };
        for ann in &manifest.annotations {
            let slide = manifest.slide(&ann.slide_id).ok_or_else(|| {
                IngestError::InvalidManifest(format!(
                    "annotation {} references unknown slide {}",
                    ann.annotation_id, ann.slide_id
                ))
            })?;
            if !slide.bounds().contains(&ann.bbox) {
                return Err(IngestError::InvalidManifest(format!(
                    "annotation {} box {} lies outside slide {}",
                    ann.annotation_id, ann.bbox, slide.slide_id
                )));
            }
        }
        Ok(manifest)
    }

    pub fn empty() -> Self {
        Self {
            slides: Vec::new(),
            annotations: Vec::new(),
            provenance: Provenance {
                annotation_sha256: String::new(),
                metadata_sha256: String::new(),
                parsed_at: String::new(),
            },
        }
    }

    pub fn slides(&self) -> &[SlideInfo] {
        &self.slides
    }

    pub fn annotations(&self) -> &[AnnotationRecord] {
        &self.annotations
    }

    pub fn provenance(&self) -> &Provenance {
        &self.provenance
    }

    pub fn slide(&self, slide_id: &str) -> Option<&SlideInfo> {
        self.slides
            .binary_search_by(|s| s.slide_id.as_str().cmp(slide_id))
            .ok()
            .map(|i| &self.slides[i])
    }

    /// Patient of the slide an annotation belongs to.
    pub fn patient_of(&self, ann: &AnnotationRecord) -> Option<&str> {
        self.slide(&ann.slide_id).map(|s| s.patient_id.as_str())
    }

    /// Sorted, de-duplicated patient ids.
    pub fn patients(&self) -> Vec<String> {
        let mut p: Vec<String> = self.slides.iter().map(|s| s.patient_id.clone()).collect();
        p.sort();
        p.dedup();
        p
    }

    /// The sub-manifest of slides (and their annotations) whose patient passes `keep`.
    pub fn filter_patients<F: Fn(&str) -> bool>(&self, keep: F) -> Manifest {
        let slides: Vec<SlideInfo> = self.slides.iter().filter(|s| keep(&s.patient_id)).cloned().collect();
        let kept: HashSet<&str> = slides.iter().map(|s| s.slide_id.as_str()).collect();
        let annotations = self
            .annotations
            .iter()
            .filter(|a| kept.contains(a.slide_id.as_str()))
            .cloned()
            .collect();
        Manifest {
            slides,
            annotations,
            provenance: self.provenance.clone(),
        }
    }

    /// SHA-256 over the canonical slide and annotation lines; provenance is excluded
    /// so that re-ingesting identical bytes yields an identical digest.
    pub fn content_digest(&self) -> String {
        let mut hasher = Sha256::new();
        for s in &self.slides {
            hasher.update(serde_json::to_vec(&ManifestLine::Slide(s.clone())).expect("serializable"));
            hasher.update(b"\n");
        }
        for a in &self.annotations {
            hasher.update(serde_json::to_vec(&ManifestLine::Annotation(a.clone())).expect("serializable"));
            hasher.update(b"\n");
        }
        hex::encode(hasher.finalize())
    }

    pub fn to_ndjson(&self) -> String {
        let mut out = String::new();
        let mut push = |line: ManifestLine| {
            out.push_str(&serde_json::to_string(&line).expect("serializable"));
            out.push('\n');
        };
        push(ManifestLine::Provenance(self.provenance.clone()));
        for s in &self.slides {
            push(ManifestLine::Slide(s.clone()));
        }
        for a in &self.annotations {
            push(ManifestLine::Annotation(a.clone()));
        }
        out
    }

    pub fn from_ndjson(text: &str, origin: &Path) -> Result<Self, IngestError> {
        let mut slides = Vec::new();
        let mut annotations = Vec::new();
        let mut provenance = None;
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let parsed: ManifestLine = serde_json::from_str(line).map_err(|e| IngestError::ManifestFormat {
                path: origin.to_path_buf(),
                line: i + 1,
                message: e.to_string(),
            })?;
            match parsed {
                ManifestLine::Provenance(p) => provenance = Some(p),
                ManifestLine::Slide(s) => slides.push(s),
                ManifestLine::Annotation(a) => annotations.push(a),
            }
        }
        let provenance = provenance.ok_or_else(|| IngestError::ManifestFormat {
            path: origin.to_path_buf(),
            line: 0,
            message: "missing provenance record".into(),
        })?;
        Manifest::new(slides, annotations, provenance)
    }

    pub fn write(&self, path: &Path) -> Result<(), IngestError> {
        fs::write(path, self.to_ndjson()).map_err(|source| IngestError::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn read(path: &Path) -> Result<Self, IngestError> {
        let text = fs::read_to_string(path).map_err(|source| IngestError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_ndjson(&text, path)
    }
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case")]
enum ManifestLine {
    Provenance(Provenance),
    Slide(SlideInfo),
    Annotation(AnnotationRecord),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecordKind {
    Image,
    Annotation,
}

/// A record that failed validation, kept for the rejection report.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rejection {
    pub kind: RecordKind,
    pub record_id: String,
    pub reason: String,
}

impl fmt::Display for Rejection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let kind = match self.kind {
            RecordKind::Image => "image",
            RecordKind::Annotation => "annotation",
        };
        write!(f, "{kind} {}: {}", self.record_id, self.reason)
    }
}

#[derive(Debug, Clone)]
pub struct IngestOutcome {
    pub manifest: Manifest,
    pub rejections: Vec<Rejection>,
    /// Annotation records present in the source document.
    pub input_annotations: usize,
    pub input_images: usize,
}

impl IngestOutcome {
    pub fn rejected_annotations(&self) -> usize {
        self.rejections
            .iter()
            .filter(|r| r.kind == RecordKind::Annotation)
            .count()
    }

    pub fn rejections_ndjson(&self) -> String {
        self.rejections
            .iter()
            .map(|r| serde_json::to_string(r).expect("serializable") + "\n")
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MetadataFormat {
    Json,
    Csv,
}

impl MetadataFormat {
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase) {
            Some(ext) if ext == "csv" || ext == "tsv" => MetadataFormat::Csv,
            _ => MetadataFormat::Json,
        }
    }
}

#[derive(Debug, Clone)]
pub struct IngestOptions {
    /// Directory that COCO `file_name`s are resolved against.
    pub image_root: PathBuf,
    pub box_side_px: i64,
    pub min_slide_side_px: u32,
}

impl Default for IngestOptions {
    fn default() -> Self {
        Self {
            image_root: PathBuf::new(),
            box_side_px: ANNOTATION_BOX_SIDE_PX,
            min_slide_side_px: MIN_SLIDE_SIDE_PX,
        }
    }
}

// COCO-like source schema. Ids may be numbers or strings.

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
enum RawId {
    Int(i64),
    Str(String),
}

impl RawId {
    fn into_string(self) -> String {
        match self {
            RawId::Int(i) => i.to_string(),
            RawId::Str(s) => s,
        }
    }
}

#[derive(Deserialize)]
struct CocoDocument {
    #[serde(default)]
    images: Vec<CocoImage>,
    #[serde(default)]
    annotations: Vec<CocoAnnotation>,
}

#[derive(Deserialize)]
struct CocoImage {
    id: RawId,
    width: u32,
    height: u32,
    file_name: String,
}

#[derive(Deserialize)]
struct CocoAnnotation {
    id: Option<RawId>,
    image_id: RawId,
    #[serde(default)]
    bbox: Option<Vec<f64>>,
    category_id: i64,
}

#[derive(Debug, Clone, Default, Deserialize)]
struct RawMetadata {
    #[serde(default)]
    image_id: Option<RawId>,
    #[serde(default)]
    tumor_type: Option<String>,
    #[serde(default)]
    species: Option<String>,
    #[serde(default)]
    scanner: Option<String>,
    #[serde(default)]
    patient_id: Option<RawId>,
}

fn parse_metadata(bytes: &[u8], format: MetadataFormat) -> Result<HashMap<String, RawMetadata>, IngestError> {
    let mut out = HashMap::new();
    match format {
        MetadataFormat::Json => {
            let value: serde_json::Value =
                serde_json::from_slice(bytes).map_err(|e| IngestError::MetadataFormat(e.to_string()))?;
            match value {
                serde_json::Value::Object(map) => {
                    for (key, v) in map {
                        let rec: RawMetadata = serde_json::from_value(v)
                            .map_err(|e| IngestError::MetadataFormat(format!("entry {key}: {e}")))?;
                        out.insert(key, rec);
                    }
                }
                serde_json::Value::Array(items) => {
                    for (i, v) in items.into_iter().enumerate() {
                        let rec: RawMetadata = serde_json::from_value(v)
                            .map_err(|e| IngestError::MetadataFormat(format!("entry {i}: {e}")))?;
                        let key = rec
                            .image_id
                            .clone()
                            .ok_or_else(|| IngestError::MetadataFormat(format!("entry {i} has no image_id")))?
                            .into_string();
                        out.insert(key, rec);
                    }
                }
                _ => {
                    return Err(IngestError::MetadataFormat(
                        "expected an object keyed by image id or an array of records".into(),
                    ))
                }
            }
        }
        MetadataFormat::Csv => {
            let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(bytes);
            for (i, row) in reader.deserialize::<HashMap<String, String>>().enumerate() {
                let row = row.map_err(|e| IngestError::MetadataFormat(e.to_string()))?;
                let get = |k: &str| row.get(k).filter(|v| !v.is_empty()).cloned();
                let key = get("image_id")
                    .ok_or_else(|| IngestError::MetadataFormat(format!("row {} has no image_id", i + 1)))?;
                out.insert(
                    key,
                    RawMetadata {
                        image_id: None,
                        tumor_type: get("tumor_type"),
                        species: get("species"),
                        scanner: get("scanner"),
                        patient_id: get("patient_id").map(RawId::Str),
                    },
                );
            }
        }
    }
    Ok(out)
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn read_bytes(path: &Path) -> Result<Vec<u8>, IngestError> {
    fs::read(path).map_err(|source| IngestError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Parse and validate an annotation file plus its case-metadata file.
///
/// Image file names resolve against the annotation file's directory.
pub fn parse_annotations(source: &Path, metadata_source: &Path) -> Result<IngestOutcome, IngestError> {
    let options = IngestOptions {
        image_root: source.parent().map(Path::to_path_buf).unwrap_or_default(),
        ..IngestOptions::default()
    };
    parse_annotations_with(source, metadata_source, &options)
}

pub fn parse_annotations_with(
    source: &Path,
    metadata_source: &Path,
    options: &IngestOptions,
) -> Result<IngestOutcome, IngestError> {
    let ann = read_bytes(source)?;
    let meta = read_bytes(metadata_source)?;
    parse_annotation_bytes(&ann, &meta, MetadataFormat::from_path(metadata_source), options)
}

/// Byte-level entry point. Record-level problems become [`Rejection`]s; only
/// document-level problems are errors.
pub fn parse_annotation_bytes(
    annotation_bytes: &[u8],
    metadata_bytes: &[u8],
    metadata_format: MetadataFormat,
    options: &IngestOptions,
) -> Result<IngestOutcome, IngestError> {
    let doc: CocoDocument =
        serde_json::from_slice(annotation_bytes).map_err(|e| IngestError::AnnotationFormat(e.to_string()))?;
    let metadata = parse_metadata(metadata_bytes, metadata_format)?;

    let input_images = doc.images.len();
    let input_annotations = doc.annotations.len();
    let mut rejections = Vec::new();
    let mut slides: BTreeMap<String, SlideInfo> = BTreeMap::new();
    // Image ids seen at all, accepted or not, so annotations on a rejected image
    // are reported as such rather than as unknown.
    let mut rejected_images: HashMap<String, String> = HashMap::new();

    for img in doc.images {
        let id = img.id.into_string();
        let reject = |reason: String, rejections: &mut Vec<Rejection>, rejected: &mut HashMap<String, String>| {
            rejected.insert(id.clone(), reason.clone());
            rejections.push(Rejection {
                kind: RecordKind::Image,
                record_id: id.clone(),
                reason,
            });
        };
        if slides.contains_key(&id) || rejected_images.contains_key(&id) {
            rejections.push(Rejection {
                kind: RecordKind::Image,
                record_id: id.clone(),
                reason: "duplicate image id".into(),
            });
            continue;
        }
        if img.width < options.min_slide_side_px || img.height < options.min_slide_side_px {
            reject(
                format!(
                    "slide is {}×{}, smaller than the {} px tile side",
                    img.width, img.height, options.min_slide_side_px
                ),
                &mut rejections,
                &mut rejected_images,
            );
            continue;
        }
        let Some(meta) = metadata.get(&id) else {
            reject(
                "no case metadata for image".into(),
                &mut rejections,
                &mut rejected_images,
            );
            continue;
        };
        let field = |v: &Option<String>| v.as_deref().map(str::trim).unwrap_or("").to_string();
        let (tumor_type, species, scanner) = (field(&meta.tumor_type), field(&meta.species), field(&meta.scanner));
        let missing: Vec<&str> = [
            ("tumor_type", &tumor_type),
            ("species", &species),
            ("scanner", &scanner),
        ]
        .iter()
        .filter(|(_, v)| v.is_empty())
        .map(|(k, _)| *k)
        .collect();
        if !missing.is_empty() {
            reject(
                format!("empty metadata field(s): {}", missing.join(", ")),
                &mut rejections,
                &mut rejected_images,
            );
            continue;
        }
        let patient_id = meta
            .patient_id
            .clone()
            .map(RawId::into_string)
            .filter(|p| !p.trim().is_empty())
            .unwrap_or_else(|| id.clone());
        slides.insert(
            id.clone(),
            SlideInfo {
                slide_id: id,
                patient_id,
                width_px: img.width,
                height_px: img.height,
                image_path: options.image_root.join(&img.file_name),
                tumor_type,
                species,
                scanner,
            },
        );
    }

    let mut annotations: Vec<AnnotationRecord> = Vec::new();
    let mut seen_ids: HashSet<String> = HashSet::new();
    for (index, raw) in doc.annotations.into_iter().enumerate() {
        let ann_id = raw.id.map(RawId::into_string).unwrap_or_else(|| format!("#{index}"));
        let mut reject = |reason: String| {
            rejections.push(Rejection {
                kind: RecordKind::Annotation,
                record_id: ann_id.clone(),
                reason,
            })
        };
        if !seen_ids.insert(ann_id.clone()) {
            reject("duplicate annotation id".into());
            continue;
        }
        let image_id = raw.image_id.into_string();
        let slide = match slides.get(&image_id) {
            Some(s) => s,
            None => {
                match rejected_images.get(&image_id) {
                    Some(why) => reject(format!("image {image_id} was rejected ({why})")),
                    None => reject(format!("references unknown image {image_id}")),
                }
                continue;
            }
        };
        let label = match raw.category_id {
            1 => Label::Mitotic,
            2 => Label::HardNegative,
            other => {
                reject(format!("unknown category id {other}"));
                continue;
            }
        };
        let coords = match raw.bbox.as_deref() {
            Some(b) if b.len() == 4 => b,
            Some(b) => {
                reject(format!("bbox has {} values, expected 4", b.len()));
                continue;
            }
            None => {
                reject("missing bbox".into());
                continue;
            }
        };
        if coords.iter().any(|c| !c.is_finite() || c.fract() != 0.0) {
            reject(format!("bbox {coords:?} has non-integer coordinates"));
            continue;
        }
        let c: Vec<i64> = coords.iter().map(|&v| v as i64).collect();
        let bbox = PixelBox::new(c[0], c[1], c[2], c[3]);
        if bbox.width() != options.box_side_px || bbox.height() != options.box_side_px {
            reject(format!(
                "box is {}×{}, expected {side}×{side} (coordinates {bbox})",
                bbox.width(),
                bbox.height(),
                side = options.box_side_px
            ));
            continue;
        }
        if !slide.bounds().contains(&bbox) {
            reject(format!(
                "box {bbox} lies outside slide {} ({}×{})",
                slide.slide_id, slide.width_px, slide.height_px
            ));
            continue;
        }
        annotations.push(AnnotationRecord {
            annotation_id: ann_id,
            slide_id: slide.slide_id.clone(),
            bbox,
            label,
        });
    }

    let provenance = Provenance {
        annotation_sha256: sha256_hex(annotation_bytes),
        metadata_sha256: sha256_hex(metadata_bytes),
        parsed_at: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
    };
    let manifest = Manifest::new(slides.into_values().collect(), annotations, provenance)?;
    Ok(IngestOutcome {
        manifest,
        rejections,
        input_annotations,
        input_images,
    })
}

/// Per-label counts, used for every row of [`ManifestStats`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct LabelCounts {
    pub mitotic: usize,
    pub hard_negative: usize,
}

impl LabelCounts {
    fn add(&mut self, label: Label) {
        match label {
            Label::Mitotic => self.mitotic += 1,
            Label::HardNegative => self.hard_negative += 1,
        }
    }

    pub fn get(&self, label: Label) -> usize {
        match label {
            Label::Mitotic => self.mitotic,
            Label::HardNegative => self.hard_negative,
        }
    }

    pub fn total(&self) -> usize {
        self.mitotic + self.hard_negative
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ManifestStats {
    pub by_label: LabelCounts,
    pub by_patient: BTreeMap<String, LabelCounts>,
    pub by_stratum: BTreeMap<SlideMetadata, LabelCounts>,
}

impl ManifestStats {
    /// Tab-separated table, one section per grouping.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let row = |out: &mut String, key: &str, c: &LabelCounts| {
            out.push_str(&format!("{key}\t{}\t{}\t{}\n", c.mitotic, c.hard_negative, c.total()));
        };
        out.push_str("group\tkey\tMITOTIC\tHARD_NEGATIVE\ttotal\n");
        row(&mut out, "label\tall", &self.by_label);
        for (p, c) in &self.by_patient {
            row(&mut out, &format!("patient\t{p}"), c);
        }
        for (s, c) in &self.by_stratum {
            row(
                &mut out,
                &format!("stratum\t{} | {} | {}", s.tumor_type, s.species, s.scanner),
                c,
            );
        }
        out
    }
}

pub fn manifest_stats(m: &Manifest) -> ManifestStats {
    let mut stats = ManifestStats::default();
    for ann in m.annotations() {
        let slide = m.slide(&ann.slide_id).expect("manifest invariant: slide resolves");
        stats.by_label.add(ann.label);
        stats
            .by_patient
            .entry(slide.patient_id.clone())
            .or_default()
            .add(ann.label);
        stats.by_stratum.entry(slide.metadata()).or_default().add(ann.label);
    }
    stats
}

/// Write the canonical manifest and the rejection report into `out_dir`.
pub fn write_outcome(outcome: &IngestOutcome, out_dir: &Path) -> Result<(), IngestError> {
    fs::create_dir_all(out_dir).map_err(|source| IngestError::Io {
        path: out_dir.to_path_buf(),
        source,
    })?;
    outcome.manifest.write(&out_dir.join(MANIFEST_FILE))?;
    let path = out_dir.join(REJECTIONS_FILE);
    let mut f = fs::File::create(&path).map_err(|source| IngestError::Io {
        path: path.clone(),
        source,
    })?;
    f.write_all(outcome.rejections_ndjson().as_bytes())
        .map_err(|source| IngestError::Io { path, source })
}

pub const MANIFEST_FILE: &str = "manifest.ndjson";
pub const REJECTIONS_FILE: &str = "rejections.ndjson";

/// Read a rejection report written by [`write_outcome`].
pub fn read_rejections(path: &Path) -> Result<Vec<Rejection>, IngestError> {
    let file = fs::File::open(path).map_err(|source| IngestError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|source| IngestError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| IngestError::ManifestFormat {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}
