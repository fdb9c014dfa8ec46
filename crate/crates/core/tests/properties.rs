//! Property tests for the module invariants that span public APIs.

use mitovl::config::{DatasetPaths, ExperimentConfig};
use mitovl::ingest::{
    parse_annotation_bytes, AnnotationRecord, IngestOptions, Manifest, MetadataFormat, Provenance, SlideInfo,
};
use mitovl::models::Family;
use mitovl::objectives::{
    autoregressive_nll, clip_symmetric_infonce, simsiam_loss, stain_separate_rgb, EmbeddingBatch, SiameseBatch,
    StainMatrix, TokenBatch,
};
use mitovl::splits::{make_split, materialize_split, Partition};
use mitovl::tilegeom::{expand_box, feasible_shift_interval, generate_tiles, ShiftBounds, TileRole};
use mitovl::{Label, PixelBox};
use proptest::prelude::*;
use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

fn slide(i: usize, w: u32, h: u32, patient: usize) -> SlideInfo {
    SlideInfo {
        slide_id: format!("s{i}"),
        patient_id: format!("p{patient}"),
        width_px: w,
        height_px: h,
        image_path: PathBuf::from(format!("s{i}.png")),
        tumor_type: "lymphoma".into(),
        species: "canine".into(),
        scanner: "S360".into(),
    }
}

fn provenance() -> Provenance {
    Provenance {
        annotation_sha256: String::new(),
        metadata_sha256: String::new(),
        parsed_at: String::new(),
    }
}

/// Slides of random size, each with random boxes: `(w, h, [(x, y, mitotic)])`.
fn manifest_strategy(slides: std::ops::RangeInclusive<usize>) -> impl Strategy<Value = Manifest> {
    prop::collection::vec(
        (224u32..700, 224u32..700).prop_flat_map(|(w, h)| {
            (
                Just(w),
                Just(h),
                prop::collection::vec((0..=i64::from(w) - 50, 0..=i64::from(h) - 50, any::<bool>()), 1..12),
            )
        }),
        slides,
    )
    .prop_map(|slides| {
        let mut infos = Vec::new();
        let mut anns = Vec::new();
        for (i, (w, h, boxes)) in slides.into_iter().enumerate() {
            infos.push(slide(i, w, h, i));
            for (j, (x, y, m)) in boxes.into_iter().enumerate() {
                anns.push(AnnotationRecord {
                    annotation_id: format!("s{i}_a{j}"),
                    slide_id: format!("s{i}"),
                    bbox: PixelBox::new(x, y, x + 50, y + 50),
                    label: if m { Label::Mitotic } else { Label::HardNegative },
                });
            }
        }
        Manifest::new(infos, anns, provenance()).unwrap()
    })
}

/// A COCO-like document with a mix of valid and invalid annotation records.
fn coco_strategy() -> impl Strategy<Value = (String, String, usize)> {
    let record = (
        0u32..3,
        0i64..600,
        0i64..600,
        prop_oneof![Just(50i64), Just(40), Just(50)],
        0i64..4,
    );
    prop::collection::vec(record, 0..30).prop_map(|records| {
        let images: Vec<String> = (0..2)
            .map(|i| format!(r#"{{"id": {i}, "width": 500, "height": 400, "file_name": "s{i}.png"}}"#))
            .collect();
        let anns: Vec<String> = records
            .iter()
            .enumerate()
            .map(|(k, (img, x, y, side, cat))| {
                format!(
                    r#"{{"id": {k}, "image_id": {img}, "bbox": [{x}, {y}, {}, {}], "category_id": {cat}}}"#,
                    x + side,
                    y + side
                )
            })
            .collect();
        let doc = format!(
            r#"{{"images": [{}], "annotations": [{}]}}"#,
            images.join(","),
            anns.join(",")
        );
        let meta = r#"{"0": {"tumor_type": "lymphoma", "species": "canine", "scanner": "S360", "patient_id": "p0"},
                       "1": {"tumor_type": "melanoma", "species": "human", "scanner": "GT450"}}"#
            .to_string();
        (doc, meta, records.len())
    })
}

fn parse(doc: &str, meta: &str) -> mitovl::ingest::IngestOutcome {
    parse_annotation_bytes(
        doc.as_bytes(),
        meta.as_bytes(),
        MetadataFormat::Json,
        &IngestOptions::default(),
    )
    .unwrap()
}

fn rows(n: usize, d: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(
        prop::collection::vec(-1.0f64..1.0, d)
            .prop_filter("nonzero row", |r| r.iter().map(|x| x * x).sum::<f64>() > 1e-6),
        n,
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn ingest_is_deterministic_and_accounts_for_every_record((doc, meta, n) in coco_strategy()) {
        let a = parse(&doc, &meta);
        let b = parse(&doc, &meta);
        prop_assert_eq!(a.manifest.to_ndjson(), b.manifest.to_ndjson());
        prop_assert_eq!(a.manifest.annotations().len() + a.rejected_annotations(), n);
        prop_assert_eq!(a.input_annotations, n);
        let ids: Vec<&str> = a.manifest.annotations().iter().map(|r| r.annotation_id.as_str()).collect();
        let mut sorted = ids.clone();
        sorted.sort();
        prop_assert_eq!(ids, sorted);
    }

    #[test]
    fn manifest_serialization_is_a_fixed_point((doc, meta, _) in coco_strategy()) {
        let m = parse(&doc, &meta).manifest;
        let text = m.to_ndjson();
        let again = Manifest::from_ndjson(&text, Path::new("manifest.ndjson")).unwrap();
        prop_assert_eq!(&again, &m);
        prop_assert_eq!(again.to_ndjson(), text);
    }

    #[test]
    fn tiles_contain_their_box_and_stay_in_the_slide(m in manifest_strategy(1..=4), seed in any::<u64>()) {
        let bounds = ShiftBounds::default();
        let set = generate_tiles(&m, TileRole::Train, 10, bounds, seed).unwrap();
        for t in set.tiles.iter().chain(&set.pruned) {
            let s = m.slide(&t.slide_id).unwrap();
            prop_assert!(t.rect().contains(&t.source_box));
            prop_assert!(s.bounds().contains(&t.rect()));
            prop_assert!(t.applied_shift.0.abs() <= 80 && t.applied_shift.1.abs() <= 80);
        }
    }

    #[test]
    fn pruning_matches_a_pixel_set_oracle(m in manifest_strategy(1..=2), seed in any::<u64>()) {
        let set = generate_tiles(&m, TileRole::Eval, 1, ShiftBounds::default(), seed).unwrap();
        for t in set.tiles.iter().chain(&set.pruned) {
            let r = t.rect();
            let hit = m.annotations().iter()
                .filter(|a| a.label == Label::Mitotic && a.slide_id == t.slide_id)
                .any(|a| {
                    (a.bbox.x_min..a.bbox.x_max).any(|x| (r.x_min..r.x_max).contains(&x))
                        && (a.bbox.y_min..a.bbox.y_max).any(|y| (r.y_min..r.y_max).contains(&y))
                });
            let pruned = set.pruned.contains(t);
            prop_assert_eq!(pruned, t.label == Label::HardNegative && hit, "tile {}", t.tile_id());
        }
    }

    #[test]
    fn tile_generation_is_a_pure_function(m in manifest_strategy(1..=3), seed in any::<u64>()) {
        let a = generate_tiles(&m, TileRole::Train, 10, ShiftBounds::default(), seed).unwrap();
        let b = generate_tiles(&m, TileRole::Train, 10, ShiftBounds::default(), seed).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn centering_shift_is_always_feasible(w in 224u32..2000, h in 224u32..2000, fx in 0.0f64..1.0, fy in 0.0f64..1.0) {
        let x = ((i64::from(w) - 50) as f64 * fx) as i64;
        let y = ((i64::from(h) - 50) as f64 * fy) as i64;
        let origin = expand_box(&PixelBox::new(x, y, x + 50, y + 50), 224);
        let f = feasible_shift_interval(origin, &slide(0, w, h, 0), &ShiftBounds { max_shift_px: 10_000, ..ShiftBounds::default() }).unwrap();
        prop_assert!(!f.x.is_empty() && !f.y.is_empty());
        let clamped = (origin.0.clamp(0, i64::from(w) - 224), origin.1.clamp(0, i64::from(h) - 224));
        prop_assert!(f.x.lo <= clamped.0 - origin.0 && clamped.0 - origin.0 <= f.x.hi);
        prop_assert!(f.y.lo <= clamped.1 - origin.1 && clamped.1 - origin.1 <= f.y.hi);
    }

    #[test]
    fn splits_are_patient_disjoint_and_deterministic(n in 5usize..60, seed in any::<u64>()) {
        let patients: Vec<String> = (0..n).map(|i| format!("p{i}")).collect();
        let plan = make_split(&patients, seed).unwrap();
        prop_assert_eq!(plan.to_json(), make_split(&patients, seed).unwrap().to_json());
        let mut seen = BTreeSet::new();
        for part in Partition::ALL {
            for p in plan.patients_in(part) {
                prop_assert!(seen.insert(p.to_string()), "{} assigned twice", p);
            }
        }
        prop_assert_eq!(seen.len(), n);
        let counts = plan.counts();
        prop_assert_eq!(counts[0], (0.6 * n as f64).round() as usize);
        prop_assert_eq!(counts[1], (0.2 * n as f64).round() as usize);
    }

    #[test]
    fn partition_tile_counts_follow_replication(m in manifest_strategy(5..=8), seed in 0u64..5) {
        let plan = make_split(&m.patients(), seed).unwrap();
        let d = materialize_split(&m, &plan, ShiftBounds::default()).unwrap();
        for part in Partition::ALL {
            let c = &d.counts[&part];
            let replicas = if part == Partition::Train { 10 } else { 1 };
            prop_assert_eq!(c.tiles + c.pruned_tiles, replicas * (c.annotations - c.skipped_annotations));
            prop_assert_eq!(d.tiles(part).len(), c.tiles);
        }
    }

    #[test]
    fn infonce_ignores_row_scale(u in rows(4, 3), v in rows(4, 3), k in 0.01f64..100.0, row in 0usize..4) {
        let base = clip_symmetric_infonce(&EmbeddingBatch { image: u.clone(), text: v.clone(), temperature: 0.07 }).unwrap();
        let mut scaled = u;
        scaled[row].iter_mut().for_each(|x| *x *= k);
        let other = clip_symmetric_infonce(&EmbeddingBatch { image: scaled, text: v, temperature: 0.07 }).unwrap();
        prop_assert!((base - other).abs() < 1e-9);
    }

    #[test]
    fn nll_falls_as_a_realized_token_gets_likelier(
        seq in prop::collection::vec(0.01f64..1.0, 1..6), idx in 0usize..6, bump in 0.0f64..1.0,
    ) {
        let idx = idx % seq.len();
        let lp: Vec<f64> = seq.iter().map(|p| p.ln()).collect();
        let mut better = seq.clone();
        better[idx] += (1.0 - better[idx]) * bump;
        let lp2: Vec<f64> = better.iter().map(|p| p.ln()).collect();
        let a = autoregressive_nll(&TokenBatch { token_log_probs: vec![lp] }).unwrap();
        let b = autoregressive_nll(&TokenBatch { token_log_probs: vec![lp2] }).unwrap();
        prop_assert!(b <= a);
    }

    #[test]
    fn simsiam_loss_is_bounded(p1 in rows(3, 4), p2 in rows(3, 4), z1 in rows(3, 4), z2 in rows(3, 4)) {
        let l = simsiam_loss(&SiameseBatch { p1, p2, z1, z2 }).unwrap();
        prop_assert!((-1.0 - 1e-12..=1.0 + 1e-12).contains(&l));
    }

    #[test]
    fn stain_concentrations_are_nonnegative(pixels in prop::collection::vec(any::<[u8; 3]>(), 16)) {
        let img = image::RgbImage::from_fn(4, 4, |x, y| image::Rgb(pixels[(y * 4 + x) as usize]));
        let (h, e) = stain_separate_rgb(&img, &StainMatrix::ruifrok());
        prop_assert!(h.data.iter().chain(&e.data).all(|&c| c >= 0.0));
    }

    #[test]
    fn config_serialization_is_canonical(
        seeds in prop::collection::btree_set(0u64..100, 1..6),
        families in prop::sample::subsequence(Family::ALL.to_vec(), 1..=12),
    ) {
        let mut c = ExperimentConfig::new(
            DatasetPaths { annotations: "a.json".into(), metadata: "m.csv".into(), image_root: None },
            "out",
        );
        c.seeds = seeds.into_iter().collect();
        c.families = families;
        let text = c.to_toml();
        let parsed = ExperimentConfig::parse(&text).unwrap();
        prop_assert_eq!(&parsed, &c);
        prop_assert_eq!(parsed.to_toml(), text);
    }
}

#[test]
fn white_has_zero_optical_density() {
    let img = image::RgbImage::from_pixel(2, 2, image::Rgb([255, 255, 255]));
    let (h, e) = stain_separate_rgb(&img, &StainMatrix::ruifrok());
    assert!(h.data.iter().chain(&e.data).all(|&c| c == 0.0));
}
