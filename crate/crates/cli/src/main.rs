//! `build-dataset`: tile datasets, training and reports for mitosis
//! classification experiments.

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use mitovl::config::{DatasetPaths, ExperimentConfig};
use mitovl::eval::{build_report, FamilyRun, PredictionSet, SeedMetrics, REPORT_TXT};
use mitovl::ingest::{manifest_stats, parse_annotations_with, write_outcome, IngestOptions, Manifest, MANIFEST_FILE};
use mitovl::models::Family;
use mitovl::pipeline::{Pipeline, Stage, METRICS_FILE};
use mitovl::synth::{generate_synthetic_corpus, SyntheticSpec};
use mitovl::tilegeom::{
    generate_tiles_with, materialize_crops, write_tiles, ShiftBounds, ShiftMode, SlideImageCache, TileOptions, TileRole,
};
use std::fs;
use std::path::{Path, PathBuf};

#[derive(Parser)]
#[command(
    name = "build-dataset",
    version,
    about = "Mitosis tile datasets, vision-language finetuning and evaluation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render a synthetic corpus of slides, annotations and metadata.
    Synth(SynthArgs),
    /// Write an experiment config with default settings.
    Init(InitArgs),
    /// Validate annotations and metadata into a canonical manifest.
    Ingest(IngestArgs),
    /// Expand, shift and prune tiles for one manifest.
    Tiles(TilesArgs),
    /// Make the patient-level split of each seed and cache its tile features.
    Split(StageArgs),
    /// Finetune one model family.
    Train(FamilyArgs),
    /// Evaluate one zero-shot model family without finetuning.
    ZeroShot(FamilyArgs),
    /// Metrics for one predictions file.
    Eval(EvalArgs),
    /// Report tables from per-family run directories.
    Compare(CompareArgs),
    /// Aggregate finished runs of a config into report tables.
    Report(StageArgs),
    /// Run the whole pipeline, reusing finished stages.
    Run(RunArgs),
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 10)]
    patients: usize,
    #[arg(long, default_value_t = 1)]
    slides_per_patient: usize,
    #[arg(long, default_value_t = 36)]
    per_slide: usize,
    #[arg(long, default_value_t = 1544)]
    width: u32,
    #[arg(long, default_value_t = 1544)]
    height: u32,
    /// 1 draws negatives as clear rings, 0 makes both classes identical.
    #[arg(long, default_value_t = 1.0)]
    separability: f64,
    #[arg(long, default_value_t = 7)]
    seed: u64,
}

#[derive(Args)]
struct InitArgs {
    #[arg(long)]
    annotations: PathBuf,
    #[arg(long)]
    metadata: PathBuf,
    #[arg(long)]
    image_root: Option<PathBuf>,
    /// Directory every stage writes under.
    #[arg(long)]
    out_dir: PathBuf,
    /// Families to run (default: all).
    #[arg(long = "family")]
    families: Vec<Family>,
    /// Split seeds (default: 0 to 4).
    #[arg(long = "seed")]
    seeds: Vec<u64>,
    /// Config file to write.
    #[arg(long)]
    config: PathBuf,
}

#[derive(Args)]
struct IngestArgs {
    #[arg(long)]
    annotations: PathBuf,
    #[arg(long)]
    metadata: PathBuf,
    /// Directory image file names resolve against (default: the annotation file's directory).
    #[arg(long)]
    image_root: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum RoleArg {
    Train,
    Eval,
}

#[derive(Args)]
struct TilesArgs {
    /// Canonical manifest file, or the ingest directory holding it.
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long, value_enum)]
    role: RoleArg,
    /// Tiles per annotation (default: 10 for train, 1 for eval).
    #[arg(long)]
    replicas: Option<u32>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 80)]
    max_shift: i64,
    /// Use the feasible shift closest to zero instead of a random one.
    #[arg(long)]
    centered: bool,
    /// Tile manifest to write.
    #[arg(long)]
    out: PathBuf,
    /// Also write every crop as `<annotation_id>_<replica>.png` here.
    #[arg(long)]
    crops: Option<PathBuf>,
}

#[derive(Args)]
struct StageArgs {
    #[arg(long)]
    config: PathBuf,
    /// Restrict to one seed (default: every seed in the config).
    #[arg(long)]
    seed: Option<u64>,
    /// Override the config's output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct FamilyArgs {
    #[command(flatten)]
    stage: StageArgs,
    #[arg(long)]
    family: Family,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    predictions: PathBuf,
    /// Write the metrics as JSON here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CompareArgs {
    /// Family run directories, each holding `seed_<s>/metrics.json`.
    #[arg(long, num_args = 1.., required = true)]
    runs: Vec<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    stage: StageArgs,
    /// Stop after this stage (ingest, splits, train or report).
    #[arg(long = "stage", default_value = "report")]
    until: Stage,
}

fn load_config(a: &StageArgs) -> Result<ExperimentConfig> {
    let mut c = ExperimentConfig::load(&a.config).with_context(|| format!("loading {}", a.config.display()))?;
    if let Some(out) = &a.out {
        c.out_dir = out.clone();
    }
    if let Some(seed) = a.seed {
        c.seeds = vec![seed];
    }
    Ok(c)
}

fn read_manifest(path: &Path) -> Result<Manifest> {
    let file = if path.is_dir() {
        path.join(MANIFEST_FILE)
    } else {
        path.to_path_buf()
    };
    Manifest::read(&file).with_context(|| format!("reading {}", file.display()))
}

fn synth(a: SynthArgs) -> Result<()> {
    let spec = SyntheticSpec {
        n_patients: a.patients,
        slides_per_patient: a.slides_per_patient,
        annotations_per_slide: a.per_slide,
        slide_width: a.width,
        slide_height: a.height,
        separability: a.separability,
        seed: a.seed,
        ..SyntheticSpec::default()
    };
    let c = generate_synthetic_corpus(&spec, &a.out)?;
    println!(
        "wrote {} slides with {} MITOTIC and {} HARD_NEGATIVE figures",
        c.slides.len(),
        c.count(true),
        c.count(false)
    );
    println!("annotations: {}", c.annotations_path.display());
    println!("metadata:    {}", c.metadata_path.display());
    Ok(())
}

fn init(a: InitArgs) -> Result<()> {
    let mut c = ExperimentConfig::new(
        DatasetPaths {
            annotations: a.annotations,
            metadata: a.metadata,
            image_root: a.image_root,
        },
        a.out_dir,
    );
    if !a.families.is_empty() {
        c.families = a.families;
    }
    if !a.seeds.is_empty() {
        c.seeds = a.seeds;
    }
    c.validate()?;
    c.save(&a.config)?;
    println!("wrote {}", a.config.display());
    Ok(())
}

fn ingest(a: IngestArgs) -> Result<()> {
    let options = IngestOptions {
        image_root: a
            .image_root
            .unwrap_or_else(|| a.annotations.parent().map(Path::to_path_buf).unwrap_or_default()),
        ..IngestOptions::default()
    };
    let outcome = parse_annotations_with(&a.annotations, &a.metadata, &options)?;
    write_outcome(&outcome, &a.out)?;
    print!("{}", manifest_stats(&outcome.manifest).to_table());
    println!(
        "accepted {} of {} annotations; {} records rejected",
        outcome.manifest.annotations().len(),
        outcome.input_annotations,
        outcome.rejections.len()
    );
    for r in &outcome.rejections {
        println!("rejected {r}");
    }
    Ok(())
}

fn tiles(a: TilesArgs) -> Result<()> {
    let manifest = read_manifest(&a.manifest)?;
    let role = match a.role {
        RoleArg::Train => TileRole::Train,
        RoleArg::Eval => TileRole::Eval,
    };
    let options = TileOptions {
        replicas: a.replicas.unwrap_or(role.default_replicas()),
        bounds: ShiftBounds {
            max_shift_px: a.max_shift,
            ..ShiftBounds::default()
        },
        shift_mode: if a.centered {
            ShiftMode::Centered
        } else {
            ShiftMode::Random
        },
        ..TileOptions::new(role, a.seed)
    };
    let set = generate_tiles_with(&manifest, &options)?;
    write_tiles(&set.tiles, &a.out)?;
    for s in &set.skipped {
        println!("skipped {}: {}", s.annotation_id, s.reason);
    }
    println!(
        "{} tiles kept, {} pruned, {} annotations skipped",
        set.tiles.len(),
        set.pruned.len(),
        set.skipped.len()
    );
    if let Some(dir) = a.crops {
        let n = materialize_crops(&set.tiles, &manifest, &dir, &SlideImageCache::new(16))?;
        println!("wrote {n} crops to {}", dir.display());
    }
    Ok(())
}

fn split(a: StageArgs) -> Result<()> {
    let p = Pipeline::new(load_config(&a)?)?;
    p.ingest()?;
    for &seed in &p.config.seeds {
        let d = p.split(seed)?;
        let n = |part| d.tiles(part).len();
        use mitovl::splits::Partition::*;
        println!(
            "seed {seed}: train {} tiles, val {}, test {}",
            n(Train),
            n(Val),
            n(Test)
        );
    }
    Ok(())
}

fn train(a: FamilyArgs, zero_shot: bool) -> Result<()> {
    if zero_shot == a.family.finetunes() {
        if zero_shot {
            bail!("{} is finetuned; use `train`", a.family);
        }
        bail!("{} is a zero-shot family; use `zero-shot`", a.family);
    }
    let p = Pipeline::new(load_config(&a.stage)?)?;
    p.ingest()?;
    for &seed in &p.config.seeds {
        p.split(seed)?;
        let m = p.train(a.family, seed)?;
        println!("{} seed {seed}: F1 {:.4}, AUC {:.4}", a.family, m.f1, m.auc);
    }
    Ok(())
}

fn eval(a: EvalArgs) -> Result<()> {
    let set = PredictionSet::read_ndjson(&a.predictions)?;
    let m = SeedMetrics::from_predictions(&set)?;
    println!("family {} seed {}: {} tiles", set.family, set.seed, m.n_tiles);
    println!("F1  {:.6}", m.f1);
    println!("AUC {:.6}", m.auc);
    if let Some(em) = m.exact_match {
        println!("exact caption match {em:.6}");
    }
    println!("unparseable generations {}", m.parse_failures);
    if let Some(out) = a.out {
        fs::write(&out, serde_json::to_string_pretty(&m)? + "\n")
            .with_context(|| format!("writing {}", out.display()))?;
    }
    Ok(())
}

fn compare(a: CompareArgs) -> Result<()> {
    let mut runs = Vec::new();
    for dir in &a.runs {
        let name = dir
            .file_name()
            .and_then(|n| n.to_str())
            .with_context(|| format!("{} has no directory name", dir.display()))?
            .to_string();
        let family: Option<Family> = name.parse().ok();
        let mut seeds = Vec::new();
        for entry in fs::read_dir(dir).with_context(|| format!("listing {}", dir.display()))? {
            let path = entry?.path().join(METRICS_FILE);
            if path.is_file() {
                let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
                seeds.push(
                    serde_json::from_str::<SeedMetrics>(&text)
                        .with_context(|| format!("parsing {}", path.display()))?,
                );
            }
        }
        if seeds.is_empty() {
            bail!("{} holds no seed_*/{METRICS_FILE}", dir.display());
        }
        runs.push(FamilyRun {
            pretraining: family.map_or_else(|| name.clone(), |f| f.pretraining().to_string()),
            finetuning: family.map_or_else(|| name.clone(), |f| f.finetuning().to_string()),
            tables: family.map_or_else(|| vec![1], |f| f.tables().to_vec()),
            family: name,
            seeds,
        });
    }
    let report = build_report(&runs)?;
    report.write(&a.out)?;
    print!("{}", report.render_text());
    Ok(())
}

fn report(a: StageArgs) -> Result<()> {
    let p = Pipeline::new(load_config(&a)?)?;
    p.report()?;
    print!("{}", fs::read_to_string(p.report_dir().join(REPORT_TXT))?);
    Ok(())
}

fn run(a: RunArgs) -> Result<()> {
    let p = Pipeline::new(load_config(&a.stage)?)?;
    let out = p.run(a.until)?;
    println!("stages run: {}, reused: {}", out.log.ran.len(), out.log.reused.len());
    if out.report.is_some() {
        print!("{}", fs::read_to_string(p.report_dir().join(REPORT_TXT))?);
    }
    Ok(())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match cli.command {
        Command::Synth(a) => synth(a),
        Command::Init(a) => init(a),
        Command::Ingest(a) => ingest(a),
        Command::Tiles(a) => tiles(a),
        Command::Split(a) => split(a),
        Command::Train(a) => train(a, false),
        Command::ZeroShot(a) => train(a, true),
        Command::Eval(a) => eval(a),
        Command::Compare(a) => compare(a),
        Command::Report(a) => report(a),
        Command::Run(a) => run(a),
    }
}
