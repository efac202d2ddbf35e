//! Command-line front end.
//!
//! Every command resolves its settings as flags over `--config` over
//! defaults, and writes the resolved settings to `<out>/run.json`. That file
//! is itself a valid `--config`.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::analysis::{
    confidence_stats, confusion, lm_bank, patch_features, pca_fit, pca_project, random_gray_patches, read_predictions,
    top_misclassifications, write_confidence, write_predictions, write_scatter, Aggregation, PATCH_SIZE,
};
use crate::arch::{
    build_branched_with, build_deep_with, build_vanilla_with, freeze_stages, DeepConfig, Fusion, Network,
    NetworkSpec, VanillaConfig,
};
use crate::dataset::{
    fmd_split, ingest, load_annotations, source_mean, split, Category, DatasetManifest, DiskSamples, IngestParams,
    SampleSource, Split,
};
use crate::error::{Error, Result};
use crate::image_io::{load_rgb, save_gray, save_rgb};
use crate::intrinsics::{decompose, DecomposeParams, InputMode};
use crate::nn::seeded_rng;
use crate::optim::{evaluate, train, TrainData, TrainingConfig};
use crate::tensor::Tensor;
use crate::weights::{
    checkpoint_dir, load_network, load_pretrained, load_weights, save_network, save_weights, NameMap,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

pub const RUN_FILE: &str = "run.json";
const PREPROCESS_FILE: &str = "preprocess.json";
const MEAN_DIR: &str = "mean";

#[derive(Debug, Parser)]
#[command(name = "matforge", version, about = "Material classification convnet toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Corpus curation.
    #[command(subcommand)]
    Dataset(DatasetCommand),
    /// Train a network on a dataset manifest.
    Train(TrainFlags),
    /// Evaluate a checkpoint on one split.
    Eval(EvalFlags),
    /// Split an image into shading and reflectance.
    Decompose(DecomposeFlags),
    /// Texture statistics and prediction diagnostics.
    #[command(subcommand)]
    Analyze(AnalyzeCommand),
}

#[derive(Debug, Subcommand)]
enum DatasetCommand {
    /// Curate a corpus and assign splits.
    Build(BuildFlags),
}

#[derive(Debug, Subcommand)]
enum AnalyzeCommand {
    /// Leung-Malik responses of random patches projected on two principal components.
    LmPca(LmPcaFlags),
    /// Row-stochastic confusion matrix from prediction records.
    Confusion(PredictionFlags),
    /// Mean confidences per category.
    Confidence(PredictionFlags),
    /// Most confident wrong predictions.
    Errors(ErrorsFlags),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Arch {
    Vanilla,
    Deep,
    Branched,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum SplitScheme {
    /// Fixed validation and test quotas per category.
    Standard,
    /// Twenty percent of each category for testing, no validation.
    Fmd,
    /// Everything in the training split.
    None,
}

fn parse_mode(s: &str) -> std::result::Result<InputMode, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_split(s: &str) -> std::result::Result<Split, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_fusion(s: &str) -> std::result::Result<Fusion, String> {
    match s {
        "concat" => Ok(Fusion::Concat),
        "logit_sum" | "logit-sum" => Ok(Fusion::LogitSum),
        other => Err(format!("unknown fusion `{other}`")),
    }
}

#[derive(Debug, Args, Serialize)]
struct BuildFlags {
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long)]
    annotations: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum)]
    split: Option<SplitScheme>,
    #[arg(long)]
    val_per_cat: Option<usize>,
    #[arg(long)]
    test_per_cat: Option<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BuildRun {
    pub corpus: Option<PathBuf>,
    pub annotations: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub seed: u64,
    pub split: SplitScheme,
    pub val_per_cat: usize,
    pub test_per_cat: usize,
    pub ingest: IngestParams,
}

impl Default for BuildRun {
    fn default() -> Self {
        Self {
            corpus: None,
            annotations: None,
            out: None,
            seed: 0,
            split: SplitScheme::Standard,
            val_per_cat: 200,
            test_per_cat: 100,
            ingest: IngestParams::default(),
        }
    }
}

#[derive(Debug, Args, Serialize)]
struct TrainFlags {
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
    #[arg(long, value_enum)]
    arch: Option<Arch>,
    /// Dataset directory holding `manifest.json` and `records.jsonl`.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_parser = parse_mode)]
    mode: Option<InputMode>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    input_size: Option<usize>,
    /// Number of leading filter stages kept fixed.
    #[arg(long)]
    freeze: Option<usize>,
    #[arg(long, value_parser = parse_fusion)]
    fusion: Option<Fusion>,
    /// Weights directory used to initialize the filter stages.
    #[arg(long)]
    pretrained: Option<PathBuf>,
    /// JSON object mapping network parameter names to pretrained tensor names.
    #[arg(long)]
    name_map: Option<PathBuf>,
    #[arg(long)]
    head_reinit: Option<bool>,
    #[arg(long)]
    base_lr: Option<f64>,
    #[arg(long)]
    lr_decay: Option<f64>,
    #[arg(long)]
    lr_step: Option<usize>,
    #[arg(long)]
    max_iterations: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    eval_every: Option<usize>,
    #[arg(long)]
    checkpoint_every: Option<usize>,
    #[arg(long)]
    normalize_mean: Option<bool>,
    #[arg(long)]
    unit_biases: Option<bool>,
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long)]
    s_floor: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainRun {
    pub arch: Arch,
    pub data: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub mode: InputMode,
    pub seed: u64,
    pub input_size: usize,
    pub freeze: usize,
    pub fusion: Fusion,
    pub pretrained: Option<PathBuf>,
    pub name_map: Option<PathBuf>,
    pub head_reinit: bool,
    pub base_lr: f64,
    pub lr_decay: f64,
    pub lr_step: usize,
    pub max_iterations: usize,
    pub batch_size: usize,
    pub eval_every: usize,
    pub checkpoint_every: usize,
    /// Defaults to on for the deep and branched nets, off for the vanilla net.
    pub normalize_mean: Option<bool>,
    pub unit_biases: bool,
    pub sigma: f64,
    pub s_floor: f64,
}

impl Default for TrainRun {
    fn default() -> Self {
        let t = TrainingConfig::default();
        let d = DecomposeParams::default();
        Self {
            arch: Arch::Vanilla,
            data: None,
            out: None,
            mode: InputMode::Rgb,
            seed: t.seed,
            input_size: t.crop_size,
            freeze: 0,
            fusion: Fusion::Concat,
            pretrained: None,
            name_map: None,
            head_reinit: false,
            base_lr: t.base_lr,
            lr_decay: t.lr_decay_factor,
            lr_step: t.lr_step,
            max_iterations: t.max_iterations,
            batch_size: t.batch_size,
            eval_every: t.eval_every,
            checkpoint_every: t.checkpoint_every,
            normalize_mean: None,
            unit_biases: false,
            sigma: d.sigma,
            s_floor: d.s_floor,
        }
    }
}

#[derive(Debug, Args, Serialize)]
struct EvalFlags {
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
    /// Checkpoint directory written by `train`.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long, value_parser = parse_split)]
    split: Option<Split>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalRun {
    pub checkpoint: Option<PathBuf>,
    pub data: Option<PathBuf>,
    pub split: Split,
    pub out: Option<PathBuf>,
}

impl Default for EvalRun {
    fn default() -> Self {
        Self {
            checkpoint: None,
            data: None,
            split: Split::Test,
            out: None,
        }
    }
}

#[derive(Debug, Args, Serialize)]
struct DecomposeFlags {
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
    #[arg(long = "in")]
    #[serde(rename = "in")]
    input: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long)]
    s_floor: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecomposeRun {
    #[serde(rename = "in")]
    pub input: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub sigma: f64,
    pub s_floor: f64,
}

impl Default for DecomposeRun {
    fn default() -> Self {
        let d = DecomposeParams::default();
        Self {
            input: None,
            out: None,
            sigma: d.sigma,
            s_floor: d.s_floor,
        }
    }
}

#[derive(Debug, Args, Serialize)]
struct LmPcaFlags {
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    patches_per_image: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LmPcaRun {
    pub data: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub patches_per_image: usize,
    pub seed: u64,
    pub aggregation: Aggregation,
}

impl Default for LmPcaRun {
    fn default() -> Self {
        Self {
            data: None,
            out: None,
            patches_per_image: 1,
            seed: 0,
            aggregation: Aggregation::MeanAbs,
        }
    }
}

#[derive(Debug, Args, Serialize)]
struct PredictionFlags {
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
    /// CSV written by `eval`.
    #[arg(long)]
    predictions: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
struct ErrorsFlags {
    #[command(flatten)]
    #[serde(flatten)]
    common: PredictionFlags,
    #[arg(long)]
    top: Option<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictionRun {
    pub predictions: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub top: usize,
}

impl Default for PredictionRun {
    fn default() -> Self {
        Self {
            predictions: None,
            out: None,
            top: 10,
        }
    }
}

/// Failures split by exit code.
#[derive(Debug)]
enum Failure {
    Usage(String),
    Runtime(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Runtime(e)
    }
}

type CmdResult = std::result::Result<(), Failure>;

fn merge(base: &mut Map<String, Value>, overlay: Map<String, Value>) {
    for (k, v) in overlay {
        if !v.is_null() {
            base.insert(k, v);
        }
    }
}

/// Flags over config file over defaults.
fn resolve<R: Default + Serialize + DeserializeOwned>(flags: &impl Serialize, config: Option<&Path>) -> std::result::Result<R, Failure> {
    let usage = |m: String| Failure::Usage(m);
    let Value::Object(mut resolved) = serde_json::to_value(R::default()).map_err(|e| usage(e.to_string()))? else {
        unreachable!("run settings serialize to objects");
    };
    if let Some(path) = config {
        let text = fs::read_to_string(path).map_err(|e| usage(format!("{}: {e}", path.display())))?;
        match serde_json::from_str(&text).map_err(|e| usage(format!("{}: {e}", path.display())))? {
            Value::Object(m) => merge(&mut resolved, m),
            _ => return Err(usage(format!("{}: expected a JSON object", path.display()))),
        }
    }
    if let Value::Object(m) = serde_json::to_value(flags).map_err(|e| usage(e.to_string()))? {
        merge(&mut resolved, m);
    }
    serde_json::from_value(Value::Object(resolved)).map_err(|e| usage(format!("invalid settings: {e}")))
}

fn required<'a>(v: &'a Option<PathBuf>, flag: &str) -> std::result::Result<&'a Path, Failure> {
    v.as_deref().ok_or_else(|| Failure::Usage(format!("missing required --{flag}")))
}

fn create_out(out: &Path, run: &impl Serialize) -> Result<()> {
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let path = out.join(RUN_FILE);
    fs::write(&path, serde_json::to_string_pretty(run)?).map_err(|e| Error::io(&path, e))
}

fn write_json(path: &Path, v: &impl Serialize) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(v)?).map_err(|e| Error::io(path, e))
}

fn cmd_dataset_build(flags: BuildFlags) -> CmdResult {
    let run: BuildRun = resolve(&flags, flags.config.as_deref())?;
    let corpus = required(&run.corpus, "corpus")?;
    let annotations = required(&run.annotations, "annotations")?;
    let out = required(&run.out, "out")?;
    create_out(out, &run)?;
    let outcome = ingest(corpus, &load_annotations(annotations)?, out, &run.ingest)?;
    let manifest = match run.split {
        SplitScheme::Standard => split(&outcome.manifest, run.seed, run.val_per_cat, run.test_per_cat)?,
        SplitScheme::Fmd => fmd_split(&outcome.manifest, run.seed)?,
        SplitScheme::None => outcome.manifest,
    };
    manifest.save(out)?;
    println!("accepted {} images, rejected {}", manifest.records.len(), outcome.rejected.len());
    for s in Split::ALL {
        println!("  {}: {}", s.as_str(), manifest.records_in(s).len());
    }
    Ok(())
}

/// How a checkpoint expects its inputs prepared.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Preprocess {
    input_mode: InputMode,
    crop_size: usize,
    normalize_mean: bool,
    decompose: DecomposeParams,
}

fn save_checkpoint(dir: &Path, net: &Network<f32>, pre: &Preprocess, mean: Option<&[Tensor<f32>]>) -> Result<()> {
    save_network(net, dir)?;
    write_json(&dir.join(PREPROCESS_FILE), pre)?;
    if let Some(mean) = mean {
        let names: Vec<String> = (0..mean.len()).map(|i| format!("tower{i}")).collect();
        save_weights(names.iter().map(String::as_str).zip(mean), &dir.join(MEAN_DIR))?;
    }
    Ok(())
}

fn build_spec(run: &TrainRun) -> Result<NetworkSpec> {
    match run.arch {
        Arch::Vanilla => build_vanilla_with(&VanillaConfig {
            input_size: run.input_size,
            ..Default::default()
        }),
        Arch::Deep | Arch::Branched => {
            let cfg = DeepConfig {
                input_size: run.input_size,
                unit_biases: run.unit_biases,
                ..Default::default()
            };
            if run.arch == Arch::Deep {
                build_deep_with(&cfg)
            } else {
                build_branched_with(&cfg, run.fusion)
            }
        }
    }
}

fn cmd_train(flags: TrainFlags) -> CmdResult {
    let mut run: TrainRun = resolve(&flags, flags.config.as_deref())?;
    if run.arch == Arch::Branched && flags.mode.is_none() {
        run.mode = InputMode::Branched;
    }
    if (run.arch == Arch::Branched) != (run.mode == InputMode::Branched) {
        return Err(Failure::Usage("mode `branched` goes with --arch branched only".into()));
    }
    let normalize = *run.normalize_mean.get_or_insert(run.arch != Arch::Vanilla);
    let data_dir = required(&run.data, "data")?.to_path_buf();
    let out = required(&run.out, "out")?.to_path_buf();
    let spec = build_spec(&run).map_err(|e| Failure::Usage(e.to_string()))?;
    let mask = freeze_stages(&spec, run.freeze).map_err(|e| Failure::Usage(e.to_string()))?;
    let cfg = TrainingConfig {
        base_lr: run.base_lr,
        lr_decay_factor: run.lr_decay,
        lr_step: run.lr_step,
        max_iterations: run.max_iterations,
        batch_size: run.batch_size,
        seed: run.seed,
        eval_every: run.eval_every,
        checkpoint_every: run.checkpoint_every,
        freeze_k: run.freeze,
        input_mode: run.mode,
        normalize_mean: normalize,
        crop_size: run.input_size,
        ..Default::default()
    };
    cfg.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    create_out(&out, &run)?;

    let mut net = Network::<f32>::new(spec, run.seed)?;
    if let Some(pretrained) = &run.pretrained {
        let map = match &run.name_map {
            Some(path) => NameMap::load(path)?,
            None => NameMap::standard(&net),
        };
        let report = load_pretrained(pretrained, &map, &mut net, run.head_reinit)?;
        log::info!(
            "loaded {} pretrained tensors, {} head tensors freshly initialized",
            report.loaded.len(),
            report.reinitialized.len()
        );
    }

    let manifest = DatasetManifest::load(&data_dir)?;
    let decompose = DecomposeParams {
        sigma: run.sigma,
        s_floor: run.s_floor,
    };
    let source = |s: Split| DiskSamples {
        decompose,
        ..DiskSamples::new(&data_dir, manifest.records_in(s), run.mode)
    };
    let train_set = source(Split::Train);
    let val_set = source(Split::Val);
    let mean = if normalize {
        Some(source_mean(&train_set, run.input_size, run.input_size)?)
    } else {
        None
    };
    let pre = Preprocess {
        input_mode: run.mode,
        crop_size: run.input_size,
        normalize_mean: normalize,
        decompose,
    };
    let data = TrainData {
        train: &train_set,
        val: (!val_set.is_empty()).then_some(&val_set as &dyn SampleSource),
        mean: mean.as_deref(),
    };
    let log_path = out.join("train_log.csv");
    let outcome = train(&mut net, &mask, &data, &cfg, &mut |it, net, log| {
        let dir = if it == cfg.max_iterations {
            out.join("final")
        } else {
            checkpoint_dir(&out.join("checkpoints"), it)
        };
        save_checkpoint(&dir, net, &pre, mean.as_deref())?;
        log.write_csv(&log_path)
    })
    .map_err(Failure::Runtime)?;
    let last = outcome.log.rows.last().map_or(f64::NAN, |r| r.loss);
    println!(
        "trained {} iterations, final loss {last:.4}; checkpoint in {}",
        cfg.max_iterations,
        out.join("final").display()
    );
    Ok(())
}

#[derive(Serialize)]
struct Metrics {
    split: Split,
    samples: usize,
    skipped: usize,
    overall_accuracy: f64,
    per_category_accuracy: Vec<(Category, Option<f64>)>,
}

fn cmd_eval(flags: EvalFlags) -> CmdResult {
    let run: EvalRun = resolve(&flags, flags.config.as_deref())?;
    let ckpt = required(&run.checkpoint, "checkpoint")?;
    let data_dir = required(&run.data, "data")?;
    let out = required(&run.out, "out")?;
    let pre_path = ckpt.join(PREPROCESS_FILE);
    let pre: Preprocess = serde_json::from_str(&fs::read_to_string(&pre_path).map_err(|e| Error::io(&pre_path, e))?)
        .map_err(Error::from)?;
    let mut net = load_network(ckpt)?;
    let mean = if pre.normalize_mean {
        Some(load_weights(&ckpt.join(MEAN_DIR))?.into_iter().map(|(_, t)| t).collect::<Vec<_>>())
    } else {
        None
    };
    create_out(out, &run)?;
    let manifest = DatasetManifest::load(data_dir)?;
    let source = DiskSamples {
        decompose: pre.decompose,
        ..DiskSamples::new(data_dir, manifest.records_in(run.split), pre.input_mode)
    };
    let eval = evaluate(&mut net, &source, pre.crop_size, mean.as_deref(), pre.input_mode)?;
    write_predictions(&out.join("predictions.csv"), &eval.records)?;
    eval.confusion.write_csv(&out.join("confusion.csv"))?;
    let per = eval.per_category_accuracy();
    let metrics = Metrics {
        split: run.split,
        samples: eval.records.len(),
        skipped: eval.skipped.len(),
        overall_accuracy: eval.accuracy(),
        per_category_accuracy: Category::ALL.into_iter().zip(per).collect(),
    };
    write_json(&out.join("metrics.json"), &metrics)?;
    println!("{} accuracy {:.4} over {} images", run.split.as_str(), metrics.overall_accuracy, metrics.samples);
    for (c, acc) in &metrics.per_category_accuracy {
        match acc {
            Some(a) => println!("  {c:<8} {a:.4}"),
            None => println!("  {c:<8} -"),
        }
    }
    Ok(())
}

#[derive(Serialize)]
struct DecomposeSidecar {
    source: PathBuf,
    sigma: f64,
    s_floor: f64,
    max_reconstruction_error: f64,
}

fn cmd_decompose(flags: DecomposeFlags) -> CmdResult {
    let run: DecomposeRun = resolve(&flags, flags.config.as_deref())?;
    let input = required(&run.input, "in")?;
    let out = required(&run.out, "out")?;
    create_out(out, &run)?;
    let image = load_rgb::<f64>(input)?;
    let params = DecomposeParams {
        sigma: run.sigma,
        s_floor: run.s_floor,
    };
    let pair = decompose(&image, &params)?;
    let name = input.file_stem().map_or("image".into(), |s| s.to_string_lossy().into_owned());
    save_gray(&pair.shading, &out.join(format!("{name}.shading.png")))?;
    // reflectance can exceed 1; scale the whole map so it fits 8 bits
    let peak = pair.reflectance.data().iter().copied().fold(1.0, f64::max);
    save_rgb(&pair.reflectance.map(|v| v / peak), &out.join(format!("{name}.reflectance.png")))?;
    let err = pair.reconstruction_error(&image, None);
    write_json(
        &out.join(format!("{name}.json")),
        &DecomposeSidecar {
            source: input.to_path_buf(),
            sigma: run.sigma,
            s_floor: run.s_floor,
            max_reconstruction_error: err,
        },
    )?;
    println!("max reconstruction error {err:e}");
    Ok(())
}

fn cmd_lm_pca(flags: LmPcaFlags) -> CmdResult {
    let run: LmPcaRun = resolve(&flags, flags.config.as_deref())?;
    let data_dir = required(&run.data, "data")?;
    let out = required(&run.out, "out")?;
    create_out(out, &run)?;
    let manifest = DatasetManifest::load(data_dir)?;
    let bank = lm_bank();
    let mut rng = seeded_rng(run.seed);
    let mut features = Vec::new();
    let mut labels = Vec::new();
    for r in &manifest.records {
        let image = match load_rgb::<f64>(&data_dir.join(&r.image_path)) {
            Ok(img) => img,
            Err(e) => {
                log::warn!("skipping {}: {e}", r.image_path.display());
                continue;
            }
        };
        for patch in random_gray_patches(&image, run.patches_per_image, PATCH_SIZE, &mut rng)? {
            features.push(patch_features(&patch, &bank, run.aggregation)?);
            labels.push(r.category);
        }
    }
    let model = pca_fit(&features)?;
    let points = features
        .iter()
        .zip(&labels)
        .map(|(f, &c)| Ok((pca_project(&model, f)?, c)))
        .collect::<Result<Vec<_>>>()?;
    write_scatter(&out.join("lm_pca.csv"), &points)?;
    write_json(&out.join("pca_model.json"), &model)?;
    println!(
        "projected {} patches; explained variance {:.4e}, {:.4e}",
        points.len(),
        model.explained_variance[0],
        model.explained_variance[1]
    );
    Ok(())
}

enum PredictionReport {
    Confusion,
    Confidence,
    Errors,
}

fn cmd_predictions(flags: &PredictionFlags, top: Option<usize>, report: PredictionReport) -> CmdResult {
    #[derive(Serialize)]
    struct Flat<'a> {
        #[serde(flatten)]
        common: &'a PredictionFlags,
        top: Option<usize>,
    }
    let run: PredictionRun = resolve(&Flat { common: flags, top }, flags.config.as_deref())?;
    let preds = required(&run.predictions, "predictions")?;
    let out = required(&run.out, "out")?;
    create_out(out, &run)?;
    let records = read_predictions(preds)?;
    match report {
        PredictionReport::Confusion => {
            let cm = confusion(&records);
            cm.write_csv(&out.join("confusion.csv"))?;
            println!("overall accuracy {:.4} over {} records", cm.accuracy(), cm.total());
        }
        PredictionReport::Confidence => {
            write_confidence(&out.join("confidence.csv"), &confidence_stats(&records))?;
        }
        PredictionReport::Errors => {
            let top = top_misclassifications(&records, run.top);
            write_predictions(&out.join("errors.csv"), &top)?;
            for r in &top {
                println!("{} {} -> {} ({:.3})", r.sample_id, r.true_category, r.predicted, r.confidence);
            }
        }
    }
    Ok(())
}

fn check_threads() -> std::result::Result<(), Failure> {
    match std::env::var("MATFORGE_THREADS") {
        Ok(v) => match v.parse::<usize>() {
            // the engine runs on one thread, which honors any cap
            Ok(n) if n > 0 => Ok(()),
            _ => Err(Failure::Usage(format!("MATFORGE_THREADS must be a positive integer, got `{v}`"))),
        },
        Err(_) => Ok(()),
    }
}

/// Parses `args` (including the program name), runs the command and
/// returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let result = check_threads().and_then(|()| match cli.command {
        Command::Dataset(DatasetCommand::Build(f)) => cmd_dataset_build(f),
        Command::Train(f) => cmd_train(f),
        Command::Eval(f) => cmd_eval(f),
        Command::Decompose(f) => cmd_decompose(f),
        Command::Analyze(AnalyzeCommand::LmPca(f)) => cmd_lm_pca(f),
        Command::Analyze(AnalyzeCommand::Confusion(f)) => cmd_predictions(&f, None, PredictionReport::Confusion),
        Command::Analyze(AnalyzeCommand::Confidence(f)) => cmd_predictions(&f, None, PredictionReport::Confidence),
        Command::Analyze(AnalyzeCommand::Errors(f)) => cmd_predictions(&f.common, f.top, PredictionReport::Errors),
    });
    match result {
        Ok(()) => EXIT_OK,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            EXIT_USAGE
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e}");
            EXIT_FAILURE
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn precedence_flags_over_config_over_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("c.json");
        fs::write(&cfg, r#"{"seed": 5, "base_lr": 0.5, "arch": "deep"}"#).unwrap();
        let cli = Cli::try_parse_from(["matforge", "train", "--seed", "9", "--out", "o"]).unwrap();
        let Command::Train(flags) = cli.command else { panic!() };
        let run: TrainRun = resolve(&flags, Some(&cfg)).unwrap();
        assert_eq!(run.seed, 9);
        assert_eq!(run.base_lr, 0.5);
        assert_eq!(run.arch, Arch::Deep);
        assert_eq!(run.lr_step, 1000);
        assert_eq!(run.out.as_deref(), Some(Path::new("o")));
    }

    #[test]
    fn unknown_config_key_is_usage_error() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("c.json");
        fs::write(&cfg, r#"{"learning_rate": 1}"#).unwrap();
        let cli = Cli::try_parse_from(["matforge", "train"]).unwrap();
        let Command::Train(flags) = cli.command else { panic!() };
        assert!(matches!(resolve::<TrainRun>(&flags, Some(&cfg)), Err(Failure::Usage(_))));
    }

    #[test]
    fn exit_codes() {
        assert_eq!(run(["matforge", "train", "--bogus"]), EXIT_USAGE);
        assert_eq!(run(["matforge", "train", "--out", "/nonexistent/x"]), EXIT_USAGE);
        assert_eq!(run(["matforge", "--help"]), EXIT_OK);
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("e");
        let code = run([
            "matforge".into(),
            "eval".into(),
            "--checkpoint".into(),
            dir.path().join("missing").into_os_string(),
            "--data".into(),
            dir.path().as_os_str().to_owned(),
            "--out".into(),
            out.into_os_string(),
        ]);
        assert_eq!(code, EXIT_FAILURE);
    }

    #[test]
    fn decompose_writes_outputs() {
        let dir = tempfile::tempdir().unwrap();
        let img = dir.path().join("swatch.png");
        save_rgb(&crate::dataset::synth::swatch(Category::Glass, 40, 50, 1), &img).unwrap();
        let out = dir.path().join("d");
        let code = run([
            OsString::from("matforge"),
            "decompose".into(),
            "--in".into(),
            img.into_os_string(),
            "--out".into(),
            out.clone().into_os_string(),
            "--sigma".into(),
            "4".into(),
        ]);
        assert_eq!(code, EXIT_OK);
        for f in ["swatch.shading.png", "swatch.reflectance.png", "swatch.json", RUN_FILE] {
            assert!(out.join(f).is_file(), "{f} missing");
        }
        let run_json: Value = serde_json::from_str(&fs::read_to_string(out.join(RUN_FILE)).unwrap()).unwrap();
        assert_eq!(run_json["sigma"], 4.0);
        let sidecar: Value = serde_json::from_str(&fs::read_to_string(out.join("swatch.json")).unwrap()).unwrap();
        assert!(sidecar["max_reconstruction_error"].as_f64().unwrap() <= 1e-6);
    }
}
