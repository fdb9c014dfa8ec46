//! End-to-end experiment: ingest, split, train or zero-shot, evaluate, report.
//!
//! Output layout under the configured directory:
//!
//! ```text
//! ingest/                  manifest.ndjson, rejections.ndjson, stats.tsv
//! splits/seed_<s>/         plan.json, {train,val,test}.ndjson, counts.json, features.ndjson
//! runs/<family>/seed_<s>/  checkpoint files, predictions.ndjson, metrics.json
//! report/                  report.csv, per_seed.csv, ttests.csv, report.txt
//! ```
//!
//! Every stage directory holds a `digest.json` with the SHA-256 of what the stage
//! consumed and produced. A stage whose recorded inputs match the current ones
//! and whose outputs are intact is not rerun. Consumers check the producer's
//! output digests before reading, so artifacts from different seeds or configs
//! cannot be mixed silently.

use crate::config::{ConfigError, ExperimentConfig};
use crate::eval::{build_report, EvalError, FamilyRun, PredictionSet, Report, SeedMetrics};
use crate::ingest::{
    manifest_stats, parse_annotations_with, write_outcome, IngestError, IngestOptions, Manifest, MANIFEST_FILE,
    REJECTIONS_FILE,
};
use crate::models::{
    build_vocab, finetune, predict_all, save_checkpoint, stain_pretext_example, train_pretext,
    transfer_pretext_weights, Adapter, AdapterKind, CheckpointConfig, Device, Example, Family, FinetuneData,
    ModelError, Pretext, TinyClassifier, TinyGenerative, TinyScorer, TrainEvent, TransferManifest,
};
use crate::models::{extract_features, load_initial_weights, CONFIG_FILE, EVENTS_FILE, WEIGHTS_FILE};
use crate::prompts::PromptTemplates;
use crate::splits::{make_split, materialize_split_with, Partition, SplitDataset, SplitError, SplitPlan};
use crate::tilegeom::{read_tile_pixels_cached, read_tiles, write_tiles, SlideImageCache, TileError, TileSpec};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use thiserror::Error;

pub const DIGEST_FILE: &str = "digest.json";
pub const STATS_FILE: &str = "stats.tsv";
pub const PLAN_FILE: &str = "plan.json";
pub const COUNTS_FILE: &str = "counts.json";
pub const FEATURES_FILE: &str = "features.ndjson";
pub const PREDICTIONS_FILE: &str = "predictions.ndjson";
pub const METRICS_FILE: &str = "metrics.json";
pub const PRETEXT_DIR: &str = "pretext";
const SLIDE_CACHE: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Stage {
    Ingest,
    Splits,
    Train,
    Report,
}

impl Stage {
    pub const ALL: [Stage; 4] = [Stage::Ingest, Stage::Splits, Stage::Train, Stage::Report];

    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Ingest => "ingest",
            Stage::Splits => "splits",
            Stage::Train => "train",
            Stage::Report => "report",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Stage {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Stage::ALL
            .into_iter()
            .find(|st| st.as_str() == s)
            .ok_or_else(|| format!("unknown stage {s:?}; expected one of ingest, splits, train, report"))
    }
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Split(#[from] SplitError),
    #[error(transparent)]
    Tile(#[from] TileError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{path}: {message}")]
    Io { path: PathBuf, message: String },
    #[error("{path}: {message}")]
    Digest { path: PathBuf, message: String },
    #[error("stage {stage} failed: {source}")]
    Stage {
        stage: Stage,
        #[source]
        source: Box<PipelineError>,
    },
}

impl PipelineError {
    fn at(self, stage: Stage) -> Self {
        match self {
            e @ PipelineError::Stage { .. } => e,
            e => PipelineError::Stage {
                stage,
                source: Box::new(e),
            },
        }
    }
}

type Result<T, E = PipelineError> = std::result::Result<T, E>;

fn io_err(path: &Path, e: impl fmt::Display) -> PipelineError {
    PipelineError::Io {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

fn write(path: &Path, body: impl AsRef<[u8]>) -> Result<()> {
    if let Some(p) = path.parent() {
        fs::create_dir_all(p).map_err(|e| io_err(p, e))?;
    }
    fs::write(path, body).map_err(|e| io_err(path, e))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let s = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    serde_json::from_str(&s).map_err(|e| io_err(path, e))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn sha256_file(path: &Path) -> Result<String> {
    Ok(sha256_hex(&fs::read(path).map_err(|e| io_err(path, e))?))
}

fn json_digest<T: Serialize>(v: &T) -> String {
    sha256_hex(&serde_json::to_vec(v).expect("serializable"))
}

/// Seed for a model's own initialization and shuffling, keyed by family and split seed.
pub fn model_seed(family: Family, split_seed: u64) -> u64 {
    let d = Sha256::digest(format!("model/{}/{split_seed}", family.id()).as_bytes());
    u64::from_le_bytes(d[..8].try_into().expect("8 bytes"))
}

/// What a stage consumed and produced.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageDigest {
    pub stage: String,
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
}

impl StageDigest {
    pub fn read(dir: &Path) -> Result<Self> {
        read_json(&dir.join(DIGEST_FILE))
    }

    /// Check that every recorded output still has its recorded hash.
    pub fn verify(&self, dir: &Path) -> Result<()> {
        for (name, want) in &self.outputs {
            let p = dir.join(name);
            let got = sha256_file(&p).map_err(|_| PipelineError::Digest {
                path: p.clone(),
                message: "missing stage output".into(),
            })?;
            if &got != want {
                return Err(PipelineError::Digest {
                    path: p,
                    message: format!("content changed since the {} stage wrote it", self.stage),
                });
            }
        }
        Ok(())
    }
}

/// The verified digest of a completed stage directory.
pub fn verified_digest(dir: &Path) -> Result<StageDigest> {
    let d = StageDigest::read(dir).map_err(|_| PipelineError::Digest {
        path: dir.join(DIGEST_FILE),
        message: "stage has not completed; run it first".into(),
    })?;
    d.verify(dir)?;
    Ok(d)
}

fn is_fresh(dir: &Path, inputs: &BTreeMap<String, String>) -> bool {
    match StageDigest::read(dir) {
        Ok(d) => &d.inputs == inputs && d.verify(dir).is_ok(),
        Err(_) => false,
    }
}

fn seal(dir: &Path, stage: Stage, inputs: BTreeMap<String, String>, outputs: &[&str]) -> Result<StageDigest> {
    let outputs = outputs
        .iter()
        .map(|name| Ok((name.to_string(), sha256_file(&dir.join(name))?)))
        .collect::<Result<BTreeMap<_, _>>>()?;
    let d = StageDigest {
        stage: stage.to_string(),
        inputs,
        outputs,
    };
    write(
        &dir.join(DIGEST_FILE),
        serde_json::to_string_pretty(&d).expect("serializable") + "\n",
    )?;
    Ok(d)
}

fn digest_of(dir: &Path) -> Result<String> {
    sha256_file(&dir.join(DIGEST_FILE))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureRow {
    pub tile_id: String,
    pub features: Vec<f64>,
}

/// One seed's partitions with cached tile features.
#[derive(Debug, Clone)]
pub struct SeedData {
    pub plan: SplitPlan,
    pub tiles: BTreeMap<Partition, Vec<TileSpec>>,
    pub features: HashMap<String, Vec<f64>>,
}

impl SeedData {
    pub fn tiles(&self, p: Partition) -> &[TileSpec] {
        &self.tiles[&p]
    }
}

/// Which stages were recomputed and which were reused.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct StageLog {
    pub ran: Vec<String>,
    pub reused: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct PipelineOutcome {
    pub report: Option<Report>,
    pub log: StageLog,
}

pub struct Pipeline {
    pub config: ExperimentConfig,
    cache: SlideImageCache,
    log: std::sync::Mutex<StageLog>,
}

impl Pipeline {
    pub fn new(config: ExperimentConfig) -> Result<Self> {
        config.validate()?;
        Device::from_env()?;
        Ok(Self {
            config,
            cache: SlideImageCache::new(SLIDE_CACHE),
            log: Default::default(),
        })
    }

    pub fn ingest_dir(&self) -> PathBuf {
        self.config.out_dir.join("ingest")
    }

    pub fn split_dir(&self, seed: u64) -> PathBuf {
        self.config.out_dir.join("splits").join(format!("seed_{seed}"))
    }

    pub fn family_dir(&self, family: Family) -> PathBuf {
        self.config.out_dir.join("runs").join(family.id())
    }

    pub fn run_dir(&self, family: Family, seed: u64) -> PathBuf {
        self.family_dir(family).join(format!("seed_{seed}"))
    }

    pub fn report_dir(&self) -> PathBuf {
        self.config.out_dir.join("report")
    }

    fn note(&self, ran: bool, what: String) {
        if ran {
            log::info!("ran {what}");
        } else {
            log::info!("reused {what}");
        }
        let mut l = self.log.lock().expect("log lock");
        if ran {
            l.ran.push(what);
        } else {
            l.reused.push(what);
        }
    }

    pub fn take_log(&self) -> StageLog {
        let mut l = std::mem::take(&mut *self.log.lock().expect("log lock"));
        l.ran.sort();
        l.reused.sort();
        l
    }

    /// Parse the dataset into `ingest/`, or reuse it.
    pub fn ingest(&self) -> Result<Manifest> {
        self.ingest_inner().map_err(|e| e.at(Stage::Ingest))
    }

    fn ingest_inner(&self) -> Result<Manifest> {
        let dir = self.ingest_dir();
        let ds = &self.config.dataset;
        let image_root = ds
            .image_root
            .clone()
            .unwrap_or_else(|| ds.annotations.parent().map(Path::to_path_buf).unwrap_or_default());
        let inputs = BTreeMap::from([
            ("annotations".to_string(), sha256_file(&ds.annotations)?),
            ("metadata".to_string(), sha256_file(&ds.metadata)?),
            ("image_root".to_string(), image_root.display().to_string()),
        ]);
        if is_fresh(&dir, &inputs) {
            self.note(false, "ingest".into());
            return Ok(Manifest::read(&dir.join(MANIFEST_FILE))?);
        }
        let options = IngestOptions {
            image_root,
            ..IngestOptions::default()
        };
        let outcome = parse_annotations_with(&ds.annotations, &ds.metadata, &options)?;
        for r in &outcome.rejections {
            log::warn!("rejected {r}");
        }
        let stats = manifest_stats(&outcome.manifest);
        log::info!(
            "ingested {} slides, {} MITOTIC and {} HARD_NEGATIVE annotations, {} rejections",
            outcome.manifest.slides().len(),
            stats.by_label.mitotic,
            stats.by_label.hard_negative,
            outcome.rejections.len()
        );
        write_outcome(&outcome, &dir)?;
        write(&dir.join(STATS_FILE), stats.to_table())?;
        seal(
            &dir,
            Stage::Ingest,
            inputs,
            &[MANIFEST_FILE, REJECTIONS_FILE, STATS_FILE],
        )?;
        self.note(true, "ingest".into());
        Ok(outcome.manifest)
    }

    /// The verified manifest and its content digest. Downstream stages key on
    /// the content digest so the parse time never reaches their digests.
    fn manifest_verified(&self) -> Result<(Manifest, String)> {
        let dir = self.ingest_dir();
        verified_digest(&dir)?;
        let manifest = Manifest::read(&dir.join(MANIFEST_FILE))?;
        let digest = manifest.content_digest();
        Ok((manifest, digest))
    }

    /// Plan, tiles and features for one seed in `splits/seed_<s>/`, or reuse them.
    pub fn split(&self, seed: u64) -> Result<SeedData> {
        self.split_inner(seed).map_err(|e| e.at(Stage::Splits))
    }

    fn split_inner(&self, seed: u64) -> Result<SeedData> {
        let (manifest, ingest_digest) = self.manifest_verified()?;
        let dir = self.split_dir(seed);
        let options = self.config.tiles.materialize_options();
        let inputs = BTreeMap::from([
            ("ingest".to_string(), ingest_digest),
            ("seed".to_string(), seed.to_string()),
            ("tiles".to_string(), json_digest(&options)),
        ]);
        if is_fresh(&dir, &inputs) {
            self.note(false, format!("splits/seed_{seed}"));
            return self.load_split(seed);
        }
        let plan = make_split(&manifest.patients(), seed)?;
        let data = materialize_split_with(&manifest, &plan, &options)?;
        for s in &data.skipped {
            log::warn!("seed {seed}: skipped annotation {}: {}", s.annotation_id, s.reason);
        }
        write(&dir.join(PLAN_FILE), plan.to_json())?;
        let mut outputs = vec![
            PLAN_FILE.to_string(),
            COUNTS_FILE.to_string(),
            FEATURES_FILE.to_string(),
        ];
        for part in Partition::ALL {
            let name = format!("{}.ndjson", part.as_str());
            write_tiles(data.tiles(part), &dir.join(&name))?;
            outputs.push(name);
        }
        write(
            &dir.join(COUNTS_FILE),
            serde_json::to_string_pretty(&data.counts).expect("serializable") + "\n",
        )?;
        let features = self.compute_features(&manifest, &data)?;
        let mut body = String::new();
        for part in Partition::ALL {
            for t in data.tiles(part) {
                let row = FeatureRow {
                    tile_id: t.tile_id(),
                    features: features[&t.tile_id()].clone(),
                };
                body.push_str(&serde_json::to_string(&row).expect("serializable"));
                body.push('\n');
            }
        }
        write(&dir.join(FEATURES_FILE), body)?;
        let names: Vec<&str> = outputs.iter().map(String::as_str).collect();
        seal(&dir, Stage::Splits, inputs, &names)?;
        self.note(true, format!("splits/seed_{seed}"));
        let tiles = Partition::ALL
            .into_iter()
            .map(|p| (p, data.tiles(p).to_vec()))
            .collect();
        Ok(SeedData {
            plan: data.plan,
            tiles,
            features,
        })
    }

    fn compute_features(&self, manifest: &Manifest, data: &SplitDataset) -> Result<HashMap<String, Vec<f64>>> {
        let all: Vec<&TileSpec> = Partition::ALL.iter().flat_map(|p| data.tiles(*p)).collect();
        let rows = all
            .par_iter()
            .map(|t| {
                let slide = manifest
                    .slide(&t.slide_id)
                    .ok_or_else(|| TileError::UnknownSlide(t.slide_id.clone()))?;
                let px = read_tile_pixels_cached(t, slide, &self.cache)?;
                Ok((t.tile_id(), extract_features(&px)))
            })
            .collect::<Result<Vec<_>, TileError>>()?;
        Ok(rows.into_iter().collect())
    }

    /// Load a completed split after checking its digest.
    pub fn load_split(&self, seed: u64) -> Result<SeedData> {
        let dir = self.split_dir(seed);
        verified_digest(&dir)?;
        let plan = SplitPlan::read(&dir.join(PLAN_FILE))?;
        if plan.seed != seed {
            return Err(PipelineError::Digest {
                path: dir.join(PLAN_FILE),
                message: format!("plan was made with seed {}, expected {seed}", plan.seed),
            });
        }
        let mut tiles = BTreeMap::new();
        for p in Partition::ALL {
            tiles.insert(p, read_tiles(&dir.join(format!("{}.ndjson", p.as_str())))?);
        }
        let fp = dir.join(FEATURES_FILE);
        let text = fs::read_to_string(&fp).map_err(|e| io_err(&fp, e))?;
        let features = text
            .lines()
            .filter(|l| !l.is_empty())
            .map(|l| serde_json::from_str::<FeatureRow>(l).map(|r| (r.tile_id, r.features)))
            .collect::<Result<HashMap<_, _>, _>>()
            .map_err(|e| io_err(&fp, e))?;
        Ok(SeedData { plan, tiles, features })
    }

    fn examples(&self, manifest: &Manifest, data: &SeedData, part: Partition, family: Family) -> Result<Vec<Example>> {
        let templates = family.templates(&self.config.prompts);
        data.tiles(part)
            .iter()
            .map(|t| {
                let slide = manifest
                    .slide(&t.slide_id)
                    .ok_or_else(|| TileError::UnknownSlide(t.slide_id.clone()))?;
                let features = data
                    .features
                    .get(&t.tile_id())
                    .cloned()
                    .ok_or_else(|| PipelineError::Digest {
                        path: self.split_dir(data.plan.seed).join(FEATURES_FILE),
                        message: format!("no features for tile {}", t.tile_id()),
                    })?;
                let prompts = match family.prompt_mode() {
                    Some(mode) => Some(
                        templates
                            .build_pair(mode, Some(&slide.metadata()))
                            .map_err(|e| ModelError::Config(e.to_string()))?,
                    ),
                    None => None,
                };
                Ok(Example {
                    tile_id: t.tile_id(),
                    label: t.label,
                    features,
                    prompts,
                })
            })
            .collect()
    }

    fn pretext_examples(
        &self,
        manifest: &Manifest,
        data: &SeedData,
        pretext: Pretext,
    ) -> Result<Vec<(Vec<f64>, Vec<f64>)>> {
        let train = data.tiles(Partition::Train);
        match pretext {
            // Two differently shifted replicas of one figure form a pair of views.
            Pretext::SimSiam => {
                let mut by_ann: BTreeMap<&str, Vec<&TileSpec>> = BTreeMap::new();
                for t in train {
                    by_ann.entry(&t.annotation_id).or_default().push(t);
                }
                let mut out = Vec::new();
                for reps in by_ann.values() {
                    for pair in reps.chunks_exact(2) {
                        out.push((
                            data.features[&pair[0].tile_id()].clone(),
                            data.features[&pair[1].tile_id()].clone(),
                        ));
                    }
                }
                Ok(out)
            }
            Pretext::StainPrediction => train
                .par_iter()
                .map(|t| {
                    let slide = manifest
                        .slide(&t.slide_id)
                        .ok_or_else(|| TileError::UnknownSlide(t.slide_id.clone()))?;
                    Ok(stain_pretext_example(&read_tile_pixels_cached(t, slide, &self.cache)?))
                })
                .collect(),
        }
    }

    fn init_adapter(&self, family: Family, seed: u64, vocab_texts: &[&str]) -> Result<Box<dyn Adapter>> {
        let s = model_seed(family, seed);
        let mut adapter: Box<dyn Adapter> = match family.adapter_kind() {
            AdapterKind::ImageClassifier => Box::new(TinyClassifier::new(s)),
            AdapterKind::ImageTextScorer => Box::new(TinyScorer::new(s)),
            kind => Box::new(TinyGenerative::new(kind, build_vocab(vocab_texts.iter().copied()))?),
        };
        if let Some(dir) = self.config.init_checkpoints.get(&family) {
            let n = load_initial_weights(adapter.as_mut(), dir)?;
            log::info!("{family}: loaded {n} initial tensors from {}", dir.display());
        }
        Ok(adapter)
    }

    /// Train (or only evaluate, for zero-shot families) one family on one seed.
    pub fn train(&self, family: Family, seed: u64) -> Result<SeedMetrics> {
        self.train_inner(family, seed).map_err(|e| e.at(Stage::Train))
    }

    fn train_inner(&self, family: Family, seed: u64) -> Result<SeedMetrics> {
        let (manifest, ingest_digest) = self.manifest_verified()?;
        let split_dir = self.split_dir(seed);
        verified_digest(&split_dir)?;
        let dir = self.run_dir(family, seed);
        let train_cfg = family.finetunes().then(|| self.config.train_config(family));
        let pretext_cfg = self.config.pretext_config(family);
        let mut inputs = BTreeMap::from([
            ("ingest".to_string(), ingest_digest),
            ("split".to_string(), digest_of(&split_dir)?),
            ("family".to_string(), family.id().to_string()),
            ("train".to_string(), json_digest(&train_cfg)),
            ("pretext".to_string(), json_digest(&pretext_cfg)),
            (
                "prompts".to_string(),
                json_digest(&family.templates(&self.config.prompts)),
            ),
        ]);
        if let Some(init) = self.config.init_checkpoints.get(&family) {
            inputs.insert("init".to_string(), sha256_file(&init.join(WEIGHTS_FILE))?);
        }
        if is_fresh(&dir, &inputs) {
            self.note(false, format!("runs/{family}/seed_{seed}"));
            return read_json(&dir.join(METRICS_FILE));
        }

        let data = self.load_split(seed)?;
        let train = self.examples(&manifest, &data, Partition::Train, family)?;
        let val = self.examples(&manifest, &data, Partition::Val, family)?;
        let test = self.examples(&manifest, &data, Partition::Test, family)?;
        let vocab_texts: Vec<&str> = train
            .iter()
            .chain(&val)
            .chain(&test)
            .flat_map(|e| e.prompts.iter().flatten().map(|b| b.target_text.as_str()))
            .collect();
        let mut adapter = self.init_adapter(family, seed, &vocab_texts)?;
        let templates: PromptTemplates = family.templates(&self.config.prompts);

        let mut outputs = vec![
            CONFIG_FILE.to_string(),
            WEIGHTS_FILE.to_string(),
            EVENTS_FILE.to_string(),
        ];
        let mut transfer: Option<TransferManifest> = None;
        if let Some(pcfg) = &pretext_cfg {
            let ex = self.pretext_examples(&manifest, &data, pcfg.pretext)?;
            let (enc, events) = train_pretext(&ex, pcfg, model_seed(family, seed) ^ 1)?;
            let pdir = dir.join(PRETEXT_DIR);
            write(
                &pdir.join(WEIGHTS_FILE),
                serde_json::to_string(&enc.params).expect("serializable") + "\n",
            )?;
            write(&pdir.join(EVENTS_FILE), events_ndjson(&events))?;
            outputs.push(format!("{PRETEXT_DIR}/{WEIGHTS_FILE}"));
            outputs.push(format!("{PRETEXT_DIR}/{EVENTS_FILE}"));
            let hidden = match adapter.spec() {
                crate::models::AdapterSpec::Classifier { hidden } => hidden,
                _ => unreachable!("pretext families use the classifier adapter"),
            };
            let mut clf = TinyClassifier::from_params(adapter.params().clone(), hidden);
            let m = transfer_pretext_weights(&enc.params, &mut clf)?;
            log::info!(
                "{family} seed {seed}: transferred {} pretext parameters, {} fresh",
                m.copied_params(),
                m.fresh_params()
            );
            transfer = Some(m);
            adapter = Box::new(clf);
        }

        let (events, best_epoch, best_val_f1) = match &train_cfg {
            Some(cfg) => {
                adapter.fit_normalizer(&train.iter().map(|e| e.features.clone()).collect::<Vec<_>>());
                let out = finetune(
                    adapter.as_mut(),
                    &FinetuneData {
                        train: &train,
                        val: &val,
                        templates: &templates,
                    },
                    cfg,
                    model_seed(family, seed),
                )?;
                (out.events, Some(out.best_epoch), Some(out.best_val_f1))
            }
            None => (Vec::new(), None, None),
        };
        let ck = CheckpointConfig {
            family,
            split_seed: seed,
            adapter: adapter.spec(),
            train: train_cfg,
            transfer,
            best_epoch,
            best_val_f1,
        };
        save_checkpoint(&dir, &ck, adapter.params(), &events)?;

        let set = PredictionSet {
            family: family.id().to_string(),
            seed,
            records: predict_all(adapter.as_ref(), &test, &templates)?,
        };
        set.write_ndjson(&dir.join(PREDICTIONS_FILE))?;
        let metrics = SeedMetrics::from_predictions(&set)?;
        write(
            &dir.join(METRICS_FILE),
            serde_json::to_string_pretty(&metrics).expect("serializable") + "\n",
        )?;
        outputs.push(PREDICTIONS_FILE.to_string());
        outputs.push(METRICS_FILE.to_string());
        let names: Vec<&str> = outputs.iter().map(String::as_str).collect();
        seal(&dir, Stage::Train, inputs, &names)?;
        log::info!(
            "{family} seed {seed}: test F1 {:.4}, AUC {:.4}",
            metrics.f1,
            metrics.auc
        );
        self.note(true, format!("runs/{family}/seed_{seed}"));
        Ok(metrics)
    }

    /// Per-seed metrics of one family, checked against the current splits.
    pub fn family_run(&self, family: Family) -> Result<FamilyRun> {
        let mut seeds = Vec::new();
        for &seed in &self.config.seeds {
            let dir = self.run_dir(family, seed);
            let d = verified_digest(&dir)?;
            let split = digest_of(&self.split_dir(seed))?;
            if d.inputs.get("split") != Some(&split) {
                return Err(PipelineError::Digest {
                    path: dir.join(DIGEST_FILE),
                    message: format!("trained on a different split than splits/seed_{seed}; rerun the train stage"),
                });
            }
            let m: SeedMetrics = read_json(&dir.join(METRICS_FILE))?;
            if m.seed != seed {
                return Err(PipelineError::Digest {
                    path: dir.join(METRICS_FILE),
                    message: format!("metrics are for seed {}, expected {seed}", m.seed),
                });
            }
            seeds.push(m);
        }
        Ok(FamilyRun {
            family: family.id().to_string(),
            pretraining: family.pretraining().to_string(),
            finetuning: family.finetuning().to_string(),
            tables: family.tables().to_vec(),
            seeds,
        })
    }

    /// Aggregate every family into `report/`.
    pub fn report(&self) -> Result<Report> {
        self.report_inner().map_err(|e| e.at(Stage::Report))
    }

    fn report_inner(&self) -> Result<Report> {
        let mut inputs = BTreeMap::new();
        let mut runs = Vec::new();
        for &family in &self.config.families {
            runs.push(self.family_run(family)?);
            for &seed in &self.config.seeds {
                inputs.insert(format!("{family}/seed_{seed}"), digest_of(&self.run_dir(family, seed))?);
            }
        }
        let report = build_report(&runs)?;
        let dir = self.report_dir();
        let fresh = is_fresh(&dir, &inputs);
        if !fresh {
            report.write(&dir)?;
            seal(
                &dir,
                Stage::Report,
                inputs,
                &[
                    crate::eval::SUMMARY_CSV,
                    crate::eval::PER_SEED_CSV,
                    crate::eval::TTESTS_CSV,
                    crate::eval::REPORT_TXT,
                ],
            )?;
        }
        self.note(!fresh, "report".into());
        Ok(report)
    }

    /// Run every stage up to and including `until`.
    pub fn run(&self, until: Stage) -> Result<PipelineOutcome> {
        self.ingest()?;
        if until >= Stage::Splits {
            self.config
                .seeds
                .par_iter()
                .try_for_each(|&s| self.split(s).map(|_| ()))?;
        }
        if until >= Stage::Train {
            let jobs: Vec<(Family, u64)> = self
                .config
                .families
                .iter()
                .flat_map(|&f| self.config.seeds.iter().map(move |&s| (f, s)))
                .collect();
            jobs.par_iter().try_for_each(|&(f, s)| self.train(f, s).map(|_| ()))?;
        }
        let report = if until >= Stage::Report {
            Some(self.report()?)
        } else {
            None
        };
        Ok(PipelineOutcome {
            report,
            log: self.take_log(),
        })
    }
}

fn events_ndjson(events: &[TrainEvent]) -> String {
    events
        .iter()
        .map(|e| serde_json::to_string(e).expect("serializable") + "\n")
        .collect()
}

/// Convenience entry point: run the full pipeline for `config`.
pub fn run_pipeline(config: ExperimentConfig) -> Result<PipelineOutcome> {
    Pipeline::new(config)?.run(Stage::Report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::DatasetPaths;
    use crate::synth::{generate_synthetic_corpus, SyntheticSpec};

    fn setup(dir: &Path, families: Vec<Family>) -> ExperimentConfig {
        let spec = SyntheticSpec {
            n_patients: 5,
            annotations_per_slide: 6,
            slide_width: 700,
            slide_height: 500,
            ..SyntheticSpec::default()
        };
        let corpus = generate_synthetic_corpus(&spec, &dir.join("data")).unwrap();
        let mut c = ExperimentConfig::new(
            DatasetPaths {
                annotations: corpus.annotations_path,
                metadata: corpus.metadata_path,
                image_root: None,
            },
            dir.join("out"),
        );
        c.seeds = vec![0, 1];
        c.families = families;
        c.tiles.train_replicas = 2;
        for f in &c.families {
            c.overrides.insert(
                *f,
                crate::config::TrainOverrides {
                    max_epochs: Some(2),
                    pretext_epochs: Some(1),
                    ..Default::default()
                },
            );
        }
        c
    }

    #[test]
    fn stages_are_reused_and_report_is_regenerated_identically() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = setup(dir.path(), vec![Family::Resnet50Scratch, Family::BlipVqaZeroShot]);
        let p = Pipeline::new(cfg.clone()).unwrap();
        let first = p.run(Stage::Report).unwrap();
        assert!(first.log.reused.is_empty());
        assert_eq!(first.log.ran.len(), 1 + 2 + 4 + 1);
        let report_txt = fs::read(p.report_dir().join(crate::eval::REPORT_TXT)).unwrap();

        fs::remove_dir_all(p.report_dir()).unwrap();
        let again = Pipeline::new(cfg).unwrap().run(Stage::Report).unwrap();
        assert_eq!(again.log.ran, vec!["report".to_string()]);
        assert_eq!(
            fs::read(p.report_dir().join(crate::eval::REPORT_TXT)).unwrap(),
            report_txt
        );

        let r = again.report.unwrap();
        assert_eq!(r.families.len(), 2);
        assert!(r.families.iter().all(|f| f.run.seeds.len() == 2));
        // An untrained generative model scores every tile at exactly one half.
        let zs = r
            .families
            .iter()
            .find(|f| f.run.family == "blip-vqa-zero-shot")
            .unwrap();
        assert_eq!(zs.auc.mean, 0.5);
    }

    #[test]
    fn tampered_split_is_detected_downstream() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = setup(dir.path(), vec![Family::Resnet50Scratch]);
        let p = Pipeline::new(cfg).unwrap();
        p.run(Stage::Splits).unwrap();
        let test = p.split_dir(1).join("test.ndjson");
        let mut body = fs::read_to_string(&test).unwrap();
        body.push('\n');
        fs::write(&test, body).unwrap();
        let err = p.train(Family::Resnet50Scratch, 1).unwrap_err();
        assert!(
            matches!(
                err,
                PipelineError::Stage {
                    stage: Stage::Train,
                    ..
                }
            ),
            "{err}"
        );
        assert!(err.to_string().contains("test.ndjson"), "{err}");
    }

    #[test]
    fn pretext_families_record_transfer() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = setup(dir.path(), vec![Family::Resnet50Simsiam, Family::Resnet50StainSsl]);
        let p = Pipeline::new(cfg).unwrap();
        p.run(Stage::Splits).unwrap();
        for f in [Family::Resnet50Simsiam, Family::Resnet50StainSsl] {
            p.train(f, 0).unwrap();
            let ck = crate::models::load_config(&p.run_dir(f, 0)).unwrap();
            let m = ck.transfer.unwrap();
            assert_eq!(m.copied.len(), 2);
            assert!(m.fresh.iter().any(|e| e.name.starts_with("head.")));
        }
    }

    #[test]
    fn stage_names_parse() {
        for s in Stage::ALL {
            assert_eq!(s.as_str().parse::<Stage>().unwrap(), s);
        }
        assert!("eval".parse::<Stage>().is_err());
    }
}
