//! Command-line front end: dataset generation, training, factorization,
//! searches, reports, feature probes and image grids.
//!
//! Every command writes a `<command>.manifest.json` next to its outputs. The
//! manifest records the full argument vector, so re-running the recorded
//! `argv` reproduces every other output file byte for byte.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::image::{Image, IMAGE_SIDE};
use crate::models::{sha256_hex, Classifier, GeneratorConfig, ModelBundle};
use crate::nn::WeightFile;
use crate::phantom::{generate_dataset, measure_features, ClassLabel, ManifestRecord, Pathology};
use crate::pgm;
use crate::search::{
    choose_d, explained_pct, run, sweep_d, Algorithm, CandidateKind, DeltaScale, DirectionCandidate, DirectionSpace,
    SearchConfig, SearchImage, SearchReport, SweepPoint,
};
use crate::stylespace::{channel_stats, factorize, ChannelStats, FactorizationMode, StyleBasis};
use crate::training::{accuracy, reconstruction_metrics, train_classifier, train_generator_encoder, TrainConfig};

/// Heart-width gain, in pixels, that counts as a widened heart.
pub const HEART_WIDTH_MARGIN: f32 = 1.0;
/// Fluid-level gain that counts as more effusion.
pub const FLUID_MARGIN: f32 = 0.05;
/// Columns per image grid.
pub const GRID_COLUMNS: usize = 8;
const GRID_GAP: usize = 2;
/// Explained-fraction slack when picking `d` from a sweep.
pub const TUNE_SLACK: f64 = 0.02;

/// Errors that map to dedicated exit codes; everything else exits with 3.
#[derive(Debug, thiserror::Error)]
pub enum Failure {
    #[error("{0}")]
    Usage(String),
    #[error("invariant violated: {0}")]
    Invariant(String),
}

pub fn exit_code(err: &anyhow::Error) -> i32 {
    match err.downcast_ref::<Failure>() {
        Some(Failure::Usage(_)) => 2,
        Some(Failure::Invariant(_)) => 4,
        None => 3,
    }
}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    Failure::Usage(msg.into()).into()
}

#[derive(Debug, Parser)]
#[command(name = "eigenfind", version, about = "Counterfactual explanations via latent eigen-directions")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    /// Render a labelled phantom dataset as PGM files plus manifest.jsonl.
    GenData(GenDataArgs),
    /// Train the binary classifier on a dataset directory.
    TrainClassifier(TrainClassifierArgs),
    /// Train generator and encoder against a frozen classifier.
    TrainGan(TrainGanArgs),
    /// Compute the style basis and channel statistics of a bundle.
    Factorize(FactorizeArgs),
    /// Run EigenFind and/or AttFind on images predicted as one class.
    Explain(ExplainArgs),
    /// Summarize search reports as a markdown table.
    Report(ReportArgs),
    /// Measure feature changes between originals and counterfactuals.
    Probe(ProbeArgs),
    /// Draw originals over counterfactuals for an explain output.
    RenderGrid(RenderGridArgs),
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::GenData(_) => "gen-data",
            Command::TrainClassifier(_) => "train-classifier",
            Command::TrainGan(_) => "train-gan",
            Command::Factorize(_) => "factorize",
            Command::Explain(_) => "explain",
            Command::Report(_) => "report",
            Command::Probe(_) => "probe",
            Command::RenderGrid(_) => "render-grid",
        }
    }
}

#[derive(Debug, Args, Serialize)]
pub struct GenDataArgs {
    #[arg(long)]
    pub n: usize,
    #[arg(long)]
    pub pathology: Pathology,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    /// Fraction of Positive images.
    #[arg(long, default_value_t = 0.5)]
    pub class_balance: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct TrainClassifierArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Held-out dataset for the accuracy report.
    #[arg(long)]
    pub eval_data: Option<PathBuf>,
    #[arg(long, default_value_t = 2000)]
    pub iterations: usize,
    #[arg(long, default_value_t = 32)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f32,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct TrainGanArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Classifier weight file written by `train-classifier`.
    #[arg(long)]
    pub classifier: PathBuf,
    /// Held-out dataset for the reconstruction report.
    #[arg(long)]
    pub eval_data: Option<PathBuf>,
    #[arg(long, default_value_t = 5000)]
    pub iterations: usize,
    #[arg(long, default_value_t = 32)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 0.0016)]
    pub generator_lr: f32,
    #[arg(long, default_value_t = 0.002)]
    pub encoder_lr: f32,
    #[arg(long, default_value_t = 1.0)]
    pub lambda_rec: f32,
    #[arg(long, default_value_t = 0.001)]
    pub lambda_cls: f32,
    #[arg(long, default_value_t = 1.0)]
    pub affine_decay: f32,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModeArg {
    ClosedForm,
    Empirical,
}

#[derive(Debug, Args, Serialize)]
pub struct FactorizeArgs {
    #[arg(long)]
    pub bundle: PathBuf,
    #[arg(long, default_value_t = 8)]
    pub k: usize,
    #[arg(long, value_enum, default_value_t = ModeArg::ClosedForm)]
    pub mode: ModeArg,
    /// Samples for the empirical mode and for channel statistics.
    #[arg(long, default_value_t = 2000)]
    pub samples: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum AlgoArg {
    Eigenfind,
    Attfind,
    Both,
}

impl AlgoArg {
    fn algorithms(self) -> Vec<Algorithm> {
        match self {
            AlgoArg::Eigenfind => vec![Algorithm::EigenFind],
            AlgoArg::Attfind => vec![Algorithm::AttFind],
            AlgoArg::Both => vec![Algorithm::EigenFind, Algorithm::AttFind],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum LabelArg {
    Healthy,
    Positive,
}

impl From<LabelArg> for ClassLabel {
    fn from(l: LabelArg) -> Self {
        match l {
            LabelArg::Healthy => ClassLabel::Healthy,
            LabelArg::Positive => ClassLabel::Positive,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ScaleArg {
    Probability,
    Logit,
}

impl From<ScaleArg> for DeltaScale {
    fn from(s: ScaleArg) -> Self {
        match s {
            ScaleArg::Probability => DeltaScale::Probability,
            ScaleArg::Logit => DeltaScale::Logit,
        }
    }
}

#[derive(Debug, Args, Serialize)]
pub struct ExplainArgs {
    #[arg(long)]
    pub bundle: PathBuf,
    /// Directory written by `factorize`.
    #[arg(long)]
    pub factors: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub pathology: Pathology,
    #[arg(long, default_value_t = 600)]
    pub n: usize,
    /// Source class; images are kept when the classifier predicts it.
    #[arg(long, value_enum, default_value_t = LabelArg::Healthy)]
    pub from_label: LabelArg,
    #[arg(long, value_enum, default_value_t = AlgoArg::Both)]
    pub algo: AlgoArg,
    #[arg(long, default_value_t = 8)]
    pub k: usize,
    /// Degree of change for EigenFind, in W-space units.
    #[arg(long, default_value_t = 10.0)]
    pub d: f32,
    /// Degree of change for AttFind, in channel standard deviations; defaults to `--d`.
    #[arg(long)]
    pub att_d: Option<f32>,
    /// Comma-separated `d` values; each algorithm then picks its own `d` on a
    /// disjoint tuning set of `--tune-n` images.
    #[arg(long, value_delimiter = ',')]
    pub tune_grid: Vec<f32>,
    #[arg(long, default_value_t = 150)]
    pub tune_n: usize,
    #[arg(long, value_enum, default_value_t = ScaleArg::Probability)]
    pub delta_scale: ScaleArg,
    #[arg(long)]
    pub max_directions: Option<usize>,
    #[arg(long, default_value_t = 1)]
    pub workers: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct ReportArgs {
    /// Search report JSON files.
    #[arg(long, num_args = 1.., required = true)]
    pub inputs: Vec<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct ProbeArgs {
    /// Directory written by `explain`.
    #[arg(long)]
    pub explain_dir: PathBuf,
    #[arg(long, value_enum, default_value_t = AlgoArg::Eigenfind)]
    pub algo: AlgoArg,
    /// Number of leading chosen directions to report individually.
    #[arg(long, default_value_t = 3)]
    pub top: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct RenderGridArgs {
    #[arg(long)]
    pub explain_dir: PathBuf,
    #[arg(long, value_enum, default_value_t = AlgoArg::Eigenfind)]
    pub algo: AlgoArg,
    /// Image ids to draw; defaults to the first explained ids.
    #[arg(long, value_delimiter = ',')]
    pub ids: Vec<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

/// Provenance written next to every command's outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub argv: Vec<String>,
    pub config: serde_json::Value,
    pub seed: Option<u64>,
    /// File name to SHA-256 of every model file read or written.
    pub model_checksums: BTreeMap<String, String>,
    pub tool_version: String,
    pub started_unix_ms: u128,
    pub finished_unix_ms: u128,
}

fn unix_ms() -> u128 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_millis()).unwrap_or(0)
}

/// Parses `argv` (program name first) and runs the command.
pub fn run_from<I, T>(argv: I) -> Result<()>
where
    I: IntoIterator<Item = T>,
    T: Into<String>,
{
    let argv: Vec<String> = argv.into_iter().map(Into::into).collect();
    let cli = Cli::try_parse_from(&argv).map_err(|e| usage(e.to_string()))?;
    execute(cli, argv)
}

pub fn execute(cli: Cli, argv: Vec<String>) -> Result<()> {
    let started = unix_ms();
    let mut checksums = BTreeMap::new();
    let (out_dir, seed) = match &cli.command {
        Command::GenData(a) => (gen_data(a)?, Some(a.seed)),
        Command::TrainClassifier(a) => (cmd_train_classifier(a, &mut checksums)?, Some(a.seed)),
        Command::TrainGan(a) => (cmd_train_gan(a, &mut checksums)?, Some(a.seed)),
        Command::Factorize(a) => (cmd_factorize(a, &mut checksums)?, Some(a.seed)),
        Command::Explain(a) => (cmd_explain(a, &mut checksums)?, None),
        Command::Report(a) => (cmd_report(a)?, None),
        Command::Probe(a) => (cmd_probe(a)?, None),
        Command::RenderGrid(a) => (cmd_render_grid(a)?, None),
    };
    let manifest = RunManifest {
        command: cli.command.name().to_owned(),
        argv,
        config: serde_json::to_value(&cli.command)?,
        seed,
        model_checksums: checksums,
        tool_version: env!("CARGO_PKG_VERSION").to_owned(),
        started_unix_ms: started,
        finished_unix_ms: unix_ms(),
    };
    write_json(&out_dir.join(format!("{}.manifest.json", cli.command.name())), &manifest)
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).with_context(|| format!("reading {}", path.display()))
}

fn file_key(path: &Path) -> String {
    path.file_name().map_or_else(|| path.display().to_string(), |n| n.to_string_lossy().into_owned())
}

pub fn image_file_name(id: usize) -> String {
    format!("img_{id:05}.pgm")
}

/// A dataset image read back from disk.
#[derive(Debug, Clone)]
pub struct LoadedImage {
    pub id: usize,
    pub image: Image,
    pub label: ClassLabel,
}

/// Reads `manifest.jsonl` and its PGM files; ids are manifest line numbers.
pub fn load_dataset(dir: &Path) -> Result<Vec<LoadedImage>> {
    let path = dir.join("manifest.jsonl");
    let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    let items = text
        .lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(id, line)| {
            let record: ManifestRecord =
                serde_json::from_str(line).with_context(|| format!("{}: line {}", path.display(), id + 1))?;
            let image = pgm::read(&dir.join(&record.file))?;
            Ok(LoadedImage {
                id,
                image,
                label: record.label,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    if items.is_empty() {
        bail!("{} lists no images", path.display());
    }
    Ok(items)
}

fn gen_data(a: &GenDataArgs) -> Result<PathBuf> {
    if a.n == 0 {
        return Err(usage("--n must be at least 1"));
    }
    if !(a.class_balance > 0.0 && a.class_balance < 1.0) {
        return Err(usage("--class-balance must lie strictly between 0 and 1"));
    }
    let items = generate_dataset(a.n, a.pathology, a.seed, a.class_balance)?;
    create_dir(&a.out)?;
    let mut manifest = String::new();
    for item in &items {
        let file = image_file_name(item.id);
        pgm::write(&a.out.join(&file), &item.image)?;
        let record = ManifestRecord {
            file,
            label: item.label,
            params: item.params.clone(),
        };
        manifest.push_str(&serde_json::to_string(&record)?);
        manifest.push('\n');
    }
    let path = a.out.join("manifest.jsonl");
    fs::write(&path, manifest).with_context(|| format!("writing {}", path.display()))?;
    println!("wrote {} images to {}", items.len(), a.out.display());
    Ok(a.out.clone())
}

fn load_classifier(path: &Path) -> Result<Classifier> {
    let file = WeightFile::from_bytes(&read_bytes(path)?).with_context(|| format!("decoding {}", path.display()))?;
    Classifier::from_weight_file(&file).with_context(|| format!("loading classifier {}", path.display()))
}

fn cmd_train_classifier(a: &TrainClassifierArgs, checksums: &mut BTreeMap<String, String>) -> Result<PathBuf> {
    let config = TrainConfig {
        batch_size: a.batch_size,
        classifier_lr: a.lr,
        iterations: a.iterations,
        seed: a.seed,
        ..TrainConfig::default()
    };
    config.validate().map_err(|e| usage(e.to_string()))?;
    let data: Vec<(Image, ClassLabel)> = load_dataset(&a.data)?.into_iter().map(|i| (i.image, i.label)).collect();
    let (classifier, metrics, log) = train_classifier(&data, &config)?;
    let heldout = match &a.eval_data {
        Some(dir) => {
            let eval: Vec<(Image, ClassLabel)> = load_dataset(dir)?.into_iter().map(|i| (i.image, i.label)).collect();
            Some(accuracy(&classifier, &eval))
        }
        None => None,
    };
    create_dir(&a.out)?;
    let bytes = classifier.to_weight_file().to_bytes();
    let path = a.out.join("classifier.lcf");
    fs::write(&path, &bytes).with_context(|| format!("writing {}", path.display()))?;
    checksums.insert(file_key(&path), sha256_hex(&bytes));
    write_json(&a.out.join("classifier_log.json"), &log)?;
    write_json(
        &a.out.join("classifier_metrics.json"),
        &serde_json::json!({
            "iterations": metrics.iterations,
            "train_accuracy": metrics.train_accuracy,
            "heldout_accuracy": heldout,
        }),
    )?;
    println!(
        "classifier: {} iterations, train accuracy {:.3}{}",
        metrics.iterations,
        metrics.train_accuracy,
        heldout.map_or(String::new(), |h| format!(", held-out accuracy {h:.3}"))
    );
    Ok(a.out.clone())
}

fn cmd_train_gan(a: &TrainGanArgs, checksums: &mut BTreeMap<String, String>) -> Result<PathBuf> {
    let config = TrainConfig {
        batch_size: a.batch_size,
        generator_lr: a.generator_lr,
        encoder_lr: a.encoder_lr,
        iterations: a.iterations,
        lambda_rec: a.lambda_rec,
        lambda_cls: a.lambda_cls,
        affine_decay: a.affine_decay,
        seed: a.seed,
        ..TrainConfig::default()
    };
    config.validate().map_err(|e| usage(e.to_string()))?;
    let classifier = load_classifier(&a.classifier)?;
    checksums.insert(file_key(&a.classifier), classifier.checksum());
    let images: Vec<Image> = load_dataset(&a.data)?.into_iter().map(|i| i.image).collect();
    let (generator, encoder, log) = train_generator_encoder(&images, &classifier, GeneratorConfig::default(), &config)?;
    let bundle = ModelBundle {
        classifier,
        generator,
        encoder,
    };
    let metrics = match &a.eval_data {
        Some(dir) => {
            let eval: Vec<Image> = load_dataset(dir)?.into_iter().map(|i| i.image).collect();
            Some(reconstruction_metrics(&bundle, &eval))
        }
        None => None,
    };
    create_dir(&a.out)?;
    let bytes = bundle.to_bytes();
    let path = a.out.join("bundle.lcf");
    fs::write(&path, &bytes).with_context(|| format!("writing {}", path.display()))?;
    checksums.insert(file_key(&path), sha256_hex(&bytes));
    write_json(&a.out.join("gan_log.json"), &log)?;
    write_json(&a.out.join("gan_metrics.json"), &metrics)?;
    if let Some(m) = metrics {
        println!(
            "generator: held-out L1 {:.4}, label consistency {:.3}",
            m.mean_l1, m.label_consistency
        );
    }
    Ok(a.out.clone())
}

pub const BASIS_FILE: &str = "basis.json";
pub const STATS_FILE: &str = "channel_stats.json";

fn cmd_factorize(a: &FactorizeArgs, checksums: &mut BTreeMap<String, String>) -> Result<PathBuf> {
    let bytes = read_bytes(&a.bundle)?;
    checksums.insert(file_key(&a.bundle), sha256_hex(&bytes));
    let bundle = ModelBundle::from_bytes(&bytes).with_context(|| format!("loading bundle {}", a.bundle.display()))?;
    let w_dim = bundle.generator.config.w_dim;
    if a.k == 0 || a.k > w_dim {
        return Err(usage(format!("--k must lie in 1..={w_dim}")));
    }
    let mode = match a.mode {
        ModeArg::ClosedForm => FactorizationMode::ClosedForm,
        ModeArg::Empirical => FactorizationMode::EmpiricalPca {
            samples: a.samples,
            seed: a.seed,
        },
    };
    let basis = factorize(&bundle.generator, a.k, mode)?;
    let stats = channel_stats(&bundle.generator, a.samples, a.seed)?;
    create_dir(&a.out)?;
    write_json(&a.out.join(BASIS_FILE), &basis)?;
    write_json(&a.out.join(STATS_FILE), &stats)?;
    let total: f64 = basis.eigenvalues.iter().sum();
    println!("top-{} eigenvalues sum {total:.4}", a.k);
    Ok(a.out.clone())
}

/// Tuning outcome for one algorithm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuningRecord {
    pub algorithm: String,
    pub sweep: Vec<SweepPoint>,
    pub chosen_d: f32,
}

fn algo_dir(out: &Path, algorithm: Algorithm) -> PathBuf {
    out.join(algorithm.name())
}

fn report_path(out: &Path, algorithm: Algorithm) -> PathBuf {
    out.join(format!("{}.json", algorithm.name()))
}

fn cmd_explain(a: &ExplainArgs, checksums: &mut BTreeMap<String, String>) -> Result<PathBuf> {
    if a.n == 0 {
        return Err(usage("--n must be at least 1"));
    }
    if a.workers == 0 {
        return Err(usage("--workers must be at least 1"));
    }
    if a.tune_grid.iter().any(|d| !(d.is_finite() && *d >= 0.0)) {
        return Err(usage("--tune-grid values must be finite and non-negative"));
    }
    let bytes = read_bytes(&a.bundle)?;
    checksums.insert(file_key(&a.bundle), sha256_hex(&bytes));
    let bundle = ModelBundle::from_bytes(&bytes).with_context(|| format!("loading bundle {}", a.bundle.display()))?;
    let basis: StyleBasis = read_json(&a.factors.join(BASIS_FILE))?;
    let stats: ChannelStats = read_json(&a.factors.join(STATS_FILE))?;
    if a.k > basis.directions.len() {
        return Err(usage(format!("--k {} exceeds the {} stored directions", a.k, basis.directions.len())));
    }
    let y: ClassLabel = a.from_label.into();
    let tuning = !a.tune_grid.is_empty();
    let needed = a.n + if tuning { a.tune_n } else { 0 };
    let pool: Vec<SearchImage> = load_dataset(&a.data)?
        .into_iter()
        .filter(|it| bundle.classifier.classify(&it.image).predicted == y)
        .take(needed)
        .map(|it| SearchImage {
            id: it.id as u64,
            image: it.image,
        })
        .collect();
    if pool.len() < needed {
        bail!(
            "{} holds only {} images predicted {:?}, need {needed}",
            a.data.display(),
            pool.len(),
            a.from_label
        );
    }
    let (images, tune_set) = pool.split_at(a.n);
    let space = DirectionSpace {
        basis: Some(&basis),
        stats: Some(&stats),
    };
    let base = SearchConfig {
        k: a.k,
        d: a.d,
        max_directions: a.max_directions,
        parallel_workers: a.workers,
        delta_scale: a.delta_scale.into(),
    };
    base.validate().map_err(|e| usage(e.to_string()))?;
    create_dir(&a.out)?;

    let mut tuning_records = Vec::new();
    for algorithm in a.algo.algorithms() {
        let d = if tuning {
            let sweep = sweep_d(algorithm, &bundle, tune_set, y, &base, &space, &a.tune_grid)?;
            let chosen = choose_d(&sweep, TUNE_SLACK).expect("grid is non-empty");
            tuning_records.push(TuningRecord {
                algorithm: algorithm.name().to_owned(),
                sweep,
                chosen_d: chosen,
            });
            chosen
        } else {
            match algorithm {
                Algorithm::EigenFind => a.d,
                Algorithm::AttFind => a.att_d.unwrap_or(a.d),
            }
        };
        let config = SearchConfig { d, ..base.clone() };
        let result = run(algorithm, &bundle, images, y, &config, &space)?;

        let dir = algo_dir(&a.out, algorithm);
        create_dir(&dir)?;
        let by_id: BTreeMap<u64, &Image> = images.iter().map(|im| (im.id, &im.image)).collect();
        for e in &result.explained {
            let cf = e.counterfactual.as_ref().expect("search keeps counterfactuals");
            if bundle.classifier.classify(cf).predicted != y.opposite() {
                return Err(Failure::Invariant(format!("counterfactual for image {} does not flip", e.image_id)).into());
            }
            let original = by_id[&e.image_id];
            let rec = bundle.generator.generate_from_w(&bundle.encoder.encode(original), y);
            pgm::write(&dir.join(format!("orig_{}.pgm", e.image_id)), original)?;
            pgm::write(&dir.join(format!("rec_{}.pgm", e.image_id)), &rec)?;
            pgm::write(&dir.join(format!("cf_{}.pgm", e.image_id)), cf)?;
        }
        let ids: Vec<u64> = result.explained.iter().take(GRID_COLUMNS).map(|e| e.image_id).collect();
        if !ids.is_empty() {
            write_grid(&dir, &ids, &dir.join("grid.pgm"))?;
        }
        let report = SearchReport::new(a.pathology.name(), algorithm, &config, &result);
        write_json(&report_path(&a.out, algorithm), &report)?;
        println!(
            "{}: d {} explained {}/{} ({:.1}%), {} queries, {:.1} s",
            algorithm.name(),
            d,
            report.n_explained,
            report.n,
            report.explained_pct,
            report.query_count,
            report.wall_ms / 1e3
        );
    }
    if tuning {
        write_json(&a.out.join("tuning.json"), &tuning_records)?;
    }
    Ok(a.out.clone())
}

fn read_report(path: &Path) -> Result<SearchReport> {
    read_json(path)
}

fn display_algorithm(name: &str) -> &str {
    match name {
        "eigenfind" => "EigenFind",
        "attfind" => "AttFind",
        other => other,
    }
}

/// Markdown table with one row per pathology and one column group per algorithm.
pub fn render_report(reports: &[SearchReport]) -> String {
    let mut pathologies: Vec<&str> = Vec::new();
    let mut algorithms: Vec<&str> = Vec::new();
    for r in reports {
        if !pathologies.contains(&r.pathology.as_str()) {
            pathologies.push(&r.pathology);
        }
        if !algorithms.contains(&r.algorithm.as_str()) {
            algorithms.push(&r.algorithm);
        }
    }
    // the baseline column leads, as in the usual comparison tables
    algorithms.sort_by_key(|a| (*a != "attfind", *a != "eigenfind", a.to_string()));
    let find = |p: &str, a: &str| reports.iter().find(|r| r.pathology == p && r.algorithm == a);

    let mut header = vec!["Pathology".to_owned()];
    for what in ["explained", "queries", "time (s)"] {
        for a in &algorithms {
            header.push(format!("{} {what}", display_algorithm(a)));
        }
    }
    let mut out = format!("| {} |\n|{}\n", header.join(" | "), "---|".repeat(header.len()));
    for p in &pathologies {
        let mut row = vec![p.to_string()];
        for a in &algorithms {
            row.push(find(p, a).map_or("-".into(), |r| format!("{:.1}%", r.explained_pct)));
        }
        for a in &algorithms {
            row.push(find(p, a).map_or("-".into(), |r| r.query_count.to_string()));
        }
        for a in &algorithms {
            row.push(find(p, a).map_or("-".into(), |r| format!("{:.1}", r.wall_ms / 1e3)));
        }
        out.push_str(&format!("| {} |\n", row.join(" | ")));
    }
    out
}

fn cmd_report(a: &ReportArgs) -> Result<PathBuf> {
    let reports = a.inputs.iter().map(|p| read_report(p)).collect::<Result<Vec<_>>>()?;
    for r in &reports {
        if r.explained_pct != explained_pct(r.n_explained, r.n) {
            bail!("report for {} {} has an inconsistent explained_pct", r.pathology, r.algorithm);
        }
    }
    let table = render_report(&reports);
    if let Some(parent) = a.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    fs::write(&a.out, &table).with_context(|| format!("writing {}", a.out.display()))?;
    print!("{table}");
    Ok(a.out.parent().filter(|p| !p.as_os_str().is_empty()).map_or_else(|| PathBuf::from("."), Path::to_path_buf))
}

/// Fractions of counterfactuals showing each feature change.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureFractions {
    pub n_images: usize,
    pub heart_width_increased: f64,
    pub fluid_level_increased: f64,
    pub pacemaker_appeared: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DirectionProbe {
    pub direction: String,
    pub kind: CandidateKind,
    pub index: usize,
    pub fractions: FeatureFractions,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeReport {
    pub pathology: String,
    pub algorithm: String,
    pub directions: Vec<DirectionProbe>,
    /// Over every explained image.
    pub overall: FeatureFractions,
}

/// Per-image feature changes from original to counterfactual.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureChange {
    pub heart_width_increased: bool,
    pub fluid_level_increased: bool,
    pub pacemaker_appeared: bool,
}

pub fn feature_change(original: &Image, counterfactual: &Image) -> FeatureChange {
    let a = measure_features(original);
    let b = measure_features(counterfactual);
    FeatureChange {
        heart_width_increased: b.measured_heart_width > a.measured_heart_width + HEART_WIDTH_MARGIN,
        fluid_level_increased: b.measured_fluid_level > a.measured_fluid_level + FLUID_MARGIN,
        pacemaker_appeared: b.pacemaker_detected && !a.pacemaker_detected,
    }
}

pub fn fractions(changes: &[FeatureChange]) -> FeatureFractions {
    let frac = |f: fn(&FeatureChange) -> bool| {
        if changes.is_empty() {
            0.0
        } else {
            changes.iter().filter(|c| f(c)).count() as f64 / changes.len() as f64
        }
    };
    FeatureFractions {
        n_images: changes.len(),
        heart_width_increased: frac(|c| c.heart_width_increased),
        fluid_level_increased: frac(|c| c.fluid_level_increased),
        pacemaker_appeared: frac(|c| c.pacemaker_appeared),
    }
}

fn single_algorithm(algo: AlgoArg) -> Result<Algorithm> {
    match algo.algorithms().as_slice() {
        [one] => Ok(*one),
        _ => Err(usage("--algo must name a single algorithm here")),
    }
}

fn read_pair(dir: &Path, id: u64) -> Result<(Image, Image)> {
    let orig = dir.join(format!("orig_{id}.pgm"));
    let cf = dir.join(format!("cf_{id}.pgm"));
    if !orig.exists() || !cf.exists() {
        bail!("image {id} is listed as explained but {} lacks its original or counterfactual", dir.display());
    }
    Ok((pgm::read(&orig)?, pgm::read(&cf)?))
}

pub fn probe(explain_dir: &Path, algorithm: Algorithm, top: usize) -> Result<ProbeReport> {
    let report = read_report(&report_path(explain_dir, algorithm))?;
    let dir = algo_dir(explain_dir, algorithm);
    let mut changes: BTreeMap<DirectionCandidate, Vec<FeatureChange>> = BTreeMap::new();
    let mut all = Vec::with_capacity(report.per_image.len());
    for rec in &report.per_image {
        let (orig, cf) = read_pair(&dir, rec.id)?;
        let change = feature_change(&orig, &cf);
        changes.entry(rec.direction).or_default().push(change);
        all.push(change);
    }
    let directions = report
        .chosen_directions
        .iter()
        .map(|c| DirectionCandidate {
            kind: c.kind,
            index: c.index,
            sign: c.sign,
        })
        .filter(|c| changes.contains_key(c))
        .take(top)
        .map(|c| DirectionProbe {
            direction: c.to_string(),
            kind: c.kind,
            index: c.index,
            fractions: fractions(&changes[&c]),
        })
        .collect();
    Ok(ProbeReport {
        pathology: report.pathology,
        algorithm: report.algorithm,
        directions,
        overall: fractions(&all),
    })
}

fn cmd_probe(a: &ProbeArgs) -> Result<PathBuf> {
    let report = probe(&a.explain_dir, single_algorithm(a.algo)?, a.top)?;
    write_json(&a.out, &report)?;
    for d in &report.directions {
        println!(
            "{}: {} images, heart width {:.2}, fluid {:.2}, pacemaker {:.2}",
            d.direction,
            d.fractions.n_images,
            d.fractions.heart_width_increased,
            d.fractions.fluid_level_increased,
            d.fractions.pacemaker_appeared
        );
    }
    Ok(a.out.parent().filter(|p| !p.as_os_str().is_empty()).map_or_else(|| PathBuf::from("."), Path::to_path_buf))
}

/// Originals on the top row, counterfactuals below, one column per image.
pub fn grid_pixels(pairs: &[(Image, Image)]) -> (usize, usize, Vec<f32>) {
    let cols = pairs.len();
    let width = cols * IMAGE_SIDE + cols.saturating_sub(1) * GRID_GAP;
    let height = 2 * IMAGE_SIDE + GRID_GAP;
    let mut px = vec![1.0f32; width * height];
    for (c, (orig, cf)) in pairs.iter().enumerate() {
        let x0 = c * (IMAGE_SIDE + GRID_GAP);
        for (r0, img) in [(0, orig), (IMAGE_SIDE + GRID_GAP, cf)] {
            for row in 0..IMAGE_SIDE {
                let start = (r0 + row) * width + x0;
                px[start..start + IMAGE_SIDE].copy_from_slice(img.row(row));
            }
        }
    }
    (width, height, px)
}

fn write_grid(dir: &Path, ids: &[u64], out: &Path) -> Result<()> {
    let pairs = ids.iter().map(|&id| read_pair(dir, id)).collect::<Result<Vec<_>>>()?;
    let (w, h, px) = grid_pixels(&pairs);
    pgm::write_raw(out, w, h, &px)?;
    Ok(())
}

fn cmd_render_grid(a: &RenderGridArgs) -> Result<PathBuf> {
    let algorithm = single_algorithm(a.algo)?;
    if a.ids.len() > GRID_COLUMNS {
        return Err(usage(format!("at most {GRID_COLUMNS} ids fit on one grid")));
    }
    let ids = if a.ids.is_empty() {
        let report = read_report(&report_path(&a.explain_dir, algorithm))?;
        report.per_image.iter().take(GRID_COLUMNS).map(|r| r.id).collect()
    } else {
        a.ids.clone()
    };
    if ids.is_empty() {
        bail!("no explained images to draw");
    }
    write_grid(&algo_dir(&a.explain_dir, algorithm), &ids, &a.out)?;
    println!("wrote {}", a.out.display());
    Ok(a.out.parent().filter(|p| !p.as_os_str().is_empty()).map_or_else(|| PathBuf::from("."), Path::to_path_buf))
}
