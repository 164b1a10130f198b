//! Command-line surface: one binary, subcommand per stage, machine-readable
//! JSON summaries. Config files (TOML or JSON) provide defaults; CLI flags
//! override them; every run writes its fully resolved config beside its
//! outputs.
//!
//! Exit codes: 0 success, 2 config error, 3 data error, 4 numeric failure.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rascore::{
    load_manifest, read_mask, read_raster, write_mask, write_raster, ClassScheme,
    DatasetManifest, LabelMask, MultibandRaster, RasterData, Split,
};
use serde::{Deserialize, Serialize};

use crate::error::{ErrorCategory, Result, WetsegError};
use crate::eval::{evaluate, write_report, EvalConfig};
use crate::experiments::{
    experiment_pretraining, experiment_reconstruction, experiment_resolution,
};
use crate::losses::{MixedLossWeights, ReconLossParams};
use crate::nnmodels::{AutoencoderSpec, ModelCheckpoint, UNetSpec};
use crate::pipeline::{run_pipeline, NormalizePolicy, PipelineInput, PreprocessConfig, SplitPolicy};
use crate::train::{
    samples_from_manifest, train_autoencoder, train_unet, write_run_record, InitPolicy, LrSchedule,
    TrainConfig, TrainData, TrainTask,
};
use crate::transfer::{
    build_resolution_experiment, pair_scenes, AffineMap, ResolutionConfig, ResolutionPair,
    SceneRef, DEFAULT_MAX_GAP_DAYS,
};

pub const ENV_CACHE_DIR: &str = "WETSEG_CACHE";

#[derive(Parser, Debug)]
#[command(
    name = "wetseg",
    about = "Wetland land-cover toolkit: preprocess rasters, pretrain an autoencoder, train a U-Net, evaluate, and downscale labels",
    version
)]
pub struct Cli {
    /// Worker threads for preprocessing (0 = all cores).
    #[arg(long, global = true, default_value_t = 0)]
    pub threads: usize,

    /// Deterministic mode: single-threaded, zeroed wall times.
    #[arg(long, global = true, default_value_t = false)]
    pub deterministic: bool,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate synthetic fixture scenes for demos and tests.
    Synth(SynthArgs),
    /// Tile rasters into patches, filter, normalize, and emit a manifest.
    Preprocess(PreprocessArgs),
    /// Pretrain the autoencoder on (unlabeled) patches.
    Pretrain(PretrainArgs),
    /// Train the segmentation U-Net on labeled patches.
    Train(TrainArgs),
    /// Evaluate a checkpoint over one manifest split.
    Eval(EvalArgs),
    /// Pair high/medium-resolution scenes and downscale labels.
    Transfer(TransferArgs),
    /// Run a full experiment and emit a table-style JSON summary.
    Experiment(ExperimentArgs),
}

// ---------------------------------------------------------------------------
// Config file sections
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelSection {
    pub base_channels: usize,
    pub depth: usize,
    pub bridge_channels: usize,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection { base_channels: 64, depth: 4, bridge_channels: 512 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainSection {
    pub epochs: u32,
    pub batch_size: usize,
    /// "fixed" or "cosine".
    pub schedule: String,
    pub lr: f32,
    pub lr_min: f32,
    pub dropout: f32,
    pub seed: u64,
    pub patience: u32,
    pub min_delta: f64,
    pub alpha: f32,
    pub beta: f32,
    pub gamma: f32,
    pub huber_delta: f32,
    pub ssim_window: usize,
    pub ce_weight: f32,
    pub progress: bool,
}

impl Default for TrainSection {
    fn default() -> Self {
        let w = MixedLossWeights::default();
        TrainSection {
            epochs: 200,
            batch_size: 8,
            schedule: "fixed".into(),
            lr: 0.001,
            lr_min: 0.0001,
            dropout: 0.15,
            seed: 0,
            patience: 25,
            min_delta: 1e-5,
            alpha: w.alpha,
            beta: w.beta,
            gamma: w.gamma,
            huber_delta: 1.0,
            ssim_window: 11,
            ce_weight: 0.0,
            progress: true,
        }
    }
}

impl TrainSection {
    fn to_train_config(&self, task: TrainTask, deterministic: bool) -> Result<TrainConfig> {
        let lr_schedule = match self.schedule.as_str() {
            "fixed" => LrSchedule::Fixed { lr: self.lr },
            "cosine" => LrSchedule::Cosine { eta_max: self.lr, eta_min: self.lr_min },
            other => {
                return Err(WetsegError::Config(format!(
                    "unknown schedule {other:?} (expected \"fixed\" or \"cosine\")"
                )))
            }
        };
        Ok(TrainConfig {
            task,
            epochs: self.epochs,
            batch_size: self.batch_size,
            lr_schedule,
            dropout_p: self.dropout,
            seed: self.seed,
            mixed_weights: MixedLossWeights { alpha: self.alpha, beta: self.beta, gamma: self.gamma },
            recon_params: ReconLossParams {
                huber_delta: self.huber_delta,
                ssim_window: self.ssim_window,
                ..Default::default()
            },
            init: InitPolicy::Scratch,
            ce_weight: self.ce_weight,
            patience: self.patience,
            min_delta: self.min_delta,
            deterministic,
            progress: self.progress,
        })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct FileConfig {
    pub model: ModelSection,
    pub train: TrainSection,
    pub pretrain: TrainSection,
}

pub fn load_file_config(path: Option<&Path>) -> Result<FileConfig> {
    let Some(path) = path else { return Ok(FileConfig::default()) };
    let text = fs::read_to_string(path).map_err(|e| WetsegError::io(path, e))?;
    let is_toml = path.extension().map(|e| e == "toml").unwrap_or(false);
    if is_toml {
        toml::from_str(&text).map_err(|e| WetsegError::Config(format!("{}: {e}", path.display())))
    } else {
        serde_json::from_str(&text)
            .map_err(|e| WetsegError::Config(format!("{}: {e}", path.display())))
    }
}

fn write_resolved<T: Serialize>(value: &T, out_dir: &Path, name: &str) -> Result<()> {
    fs::create_dir_all(out_dir).map_err(|e| WetsegError::io(out_dir, e))?;
    let path = out_dir.join(name);
    let mut json = serde_json::to_vec_pretty(value)
        .map_err(|e| WetsegError::Config(format!("resolved config encode: {e}")))?;
    json.push(b'\n');
    fs::write(&path, json).map_err(|e| WetsegError::io(&path, e))?;
    Ok(())
}

fn default_out(sub: &str) -> PathBuf {
    match std::env::var_os(ENV_CACHE_DIR) {
        Some(dir) => PathBuf::from(dir).join(sub),
        None => PathBuf::from("wetseg-out").join(sub),
    }
}

fn scheme_by_name(name: &str) -> Result<ClassScheme> {
    if let Some(s) = ClassScheme::builtin(name) {
        return Ok(s);
    }
    if name == "synth-3" {
        return Ok(crate::synth::synth_scheme());
    }
    Err(WetsegError::Config(format!(
        "unknown class scheme {name:?} (expected dynamic-world, biesbosch-manual, or synth-3)"
    )))
}

// ---------------------------------------------------------------------------
// synth
// ---------------------------------------------------------------------------

#[derive(Args, Debug)]
pub struct SynthArgs {
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// What to generate: "scenes" (image+mask pairs) or "pair-scenes"
    /// (matched high/low resolution directories).
    #[arg(long, default_value = "scenes")]
    pub kind: String,
    /// Number of scenes.
    #[arg(long, default_value_t = 4)]
    pub count: usize,
    /// Scene edge length in pixels.
    #[arg(long, default_value_t = 128)]
    pub size: u32,
    /// Number of spectral bands.
    #[arg(long, default_value_t = 3)]
    pub bands: usize,
    /// Base RNG seed.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Comma-separated region names cycled across scenes.
    #[arg(long, default_value = "Biesbosch,Lauwersmeer,Oostvaardersplassen")]
    pub regions: String,
}

fn cmd_synth(args: &SynthArgs) -> Result<PathBuf> {
    let out = args.out.clone().unwrap_or_else(|| default_out("synth"));
    fs::create_dir_all(&out).map_err(|e| WetsegError::io(&out, e))?;
    let regions: Vec<&str> = args.regions.split(',').collect();
    match args.kind.as_str() {
        "scenes" => {
            for i in 0..args.count {
                let region = regions[i % regions.len()];
                let date = format!("2024-{:02}-{:02}", 1 + i % 12, 1 + (i * 3) % 27);
                let (mut raster, mask) = crate::synth::synth_scene(
                    args.size,
                    args.size,
                    args.bands,
                    region,
                    &date,
                    args.seed + i as u64,
                )?;
                if i % 2 == 1 {
                    // plant a black corner so the quality filter has work to do
                    crate::synth::plant_black_region(&mut raster, 0, 0, args.size / 4, args.size / 4);
                }
                write_raster(&raster, out.join(format!("scene{i:03}.ras")))?;
                write_mask(&mask, out.join(format!("scene{i:03}_mask.ras")))?;
            }
        }
        "pair-scenes" => {
            let hires_dir = out.join("hires");
            let lores_dir = out.join("lores");
            fs::create_dir_all(&hires_dir).map_err(|e| WetsegError::io(&hires_dir, e))?;
            fs::create_dir_all(&lores_dir).map_err(|e| WetsegError::io(&lores_dir, e))?;
            let factor = 4u32; // hires pixels per lores pixel
            for i in 0..args.count {
                let region = regions[i % regions.len()];
                let date = format!("2024-{:02}-{:02}", 1 + i % 12, 2 + (i * 5) % 25);
                let (hires, mask) = crate::synth::synth_scene(
                    args.size,
                    args.size,
                    args.bands,
                    region,
                    &date,
                    args.seed + 1000 + i as u64,
                )?;
                let lores = box_downsample(&hires, factor)?;
                write_raster(&hires, hires_dir.join(format!("scene{i:03}.ras")))?;
                write_mask(&mask, hires_dir.join(format!("scene{i:03}_mask.ras")))?;
                write_raster(&lores, lores_dir.join(format!("scene{i:03}.ras")))?;
            }
        }
        other => return Err(WetsegError::Config(format!("unknown synth kind {other:?}"))),
    }
    Ok(out)
}

/// Box-average an f32 raster by an integer factor, scaling the gsd to match.
fn box_downsample(raster: &MultibandRaster, factor: u32) -> Result<MultibandRaster> {
    if raster.width % factor != 0 || raster.height % factor != 0 {
        return Err(WetsegError::Data("downsample factor must divide raster dims".into()));
    }
    let (w, h) = (raster.width / factor, raster.height / factor);
    let bands = raster.bands();
    let mut data = Vec::with_capacity((bands * w * h) as usize);
    for b in 0..bands {
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0f64;
                for dy in 0..factor {
                    for dx in 0..factor {
                        acc += raster.value(b, y * factor + dy, x * factor + dx) as f64;
                    }
                }
                data.push((acc / (factor * factor) as f64) as f32);
            }
        }
    }
    Ok(MultibandRaster {
        width: w,
        height: h,
        band_names: raster.band_names.clone(),
        data: RasterData::F32(data),
        nodata_value: raster.nodata_value,
        region: raster.region.clone(),
        acquired_at: raster.acquired_at.clone(),
        gsd_m: raster.gsd_m * factor as f32,
    })
}

// ---------------------------------------------------------------------------
// preprocess
// ---------------------------------------------------------------------------

#[derive(Args, Debug)]
pub struct PreprocessArgs {
    /// Directory of `<scene>.ras` files with optional `<scene>_mask.ras`.
    #[arg(long)]
    pub input: PathBuf,
    /// Output directory for patches and manifest.json.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Patch edge length in pixels.
    #[arg(long, default_value_t = 256)]
    pub patch_size: u32,
    /// Reject patches whose black-pixel fraction exceeds this.
    #[arg(long, default_value_t = 0.10)]
    pub max_invalid: f64,
    /// Apply per-band histogram equalization.
    #[arg(long, default_value_t = false)]
    pub equalize: bool,
    /// "minmax" or "none".
    #[arg(long, default_value = "minmax")]
    pub normalize: String,
    /// Comma-separated band subset (empty = keep all).
    #[arg(long, default_value = "")]
    pub bands: String,
    /// "regions" (paper mapping) or "random".
    #[arg(long, default_value = "random")]
    pub split: String,
    #[arg(long, default_value_t = 0.7)]
    pub train_frac: f64,
    #[arg(long, default_value_t = 0.15)]
    pub val_frac: f64,
    #[arg(long, default_value_t = 0.15)]
    pub test_frac: f64,
    /// Split-shuffle seed (random policy).
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Class scheme recorded in the manifest.
    #[arg(long, default_value = "synth-3")]
    pub scheme: String,
}

fn parse_bands(spec: &str) -> Vec<String> {
    spec.split(',').map(str::trim).filter(|s| !s.is_empty()).map(str::to_owned).collect()
}

fn load_scene_dir(dir: &Path) -> Result<Vec<PipelineInput>> {
    let mut names: Vec<String> = Vec::new();
    let entries = fs::read_dir(dir).map_err(|e| WetsegError::io(dir, e))?;
    for entry in entries {
        let entry = entry.map_err(|e| WetsegError::io(dir, e))?;
        let name = entry.file_name().to_string_lossy().into_owned();
        if name.ends_with(".ras") && !name.ends_with("_mask.ras") {
            names.push(name);
        }
    }
    names.sort();
    if names.is_empty() {
        return Err(WetsegError::Data(format!("no .ras scenes found in {}", dir.display())));
    }
    let mut inputs = Vec::with_capacity(names.len());
    for name in names {
        let stem = name.trim_end_matches(".ras").to_string();
        let raster = read_raster(dir.join(&name))?;
        let mask_path = dir.join(format!("{stem}_mask.ras"));
        let label = if mask_path.is_file() { Some(read_mask(&mask_path)?) } else { None };
        inputs.push(PipelineInput { source_id: stem, raster, label });
    }
    Ok(inputs)
}

fn cmd_preprocess(args: &PreprocessArgs) -> Result<PathBuf> {
    let out = args.out.clone().unwrap_or_else(|| default_out("patches"));
    let normalize = match args.normalize.as_str() {
        "minmax" => NormalizePolicy::MinMax,
        "none" => NormalizePolicy::None,
        other => return Err(WetsegError::Config(format!("unknown normalize policy {other:?}"))),
    };
    let split_policy = match args.split.as_str() {
        "regions" => SplitPolicy::paper_regions(),
        "random" => SplitPolicy::Random {
            train: args.train_frac,
            val: args.val_frac,
            test: args.test_frac,
            seed: args.seed,
        },
        other => return Err(WetsegError::Config(format!("unknown split policy {other:?}"))),
    };
    let config = PreprocessConfig {
        selected_bands: parse_bands(&args.bands),
        patch_size: args.patch_size,
        max_invalid_fraction: args.max_invalid,
        equalize: args.equalize,
        normalize,
        split_policy,
    };
    config.validate()?;
    let scheme = scheme_by_name(&args.scheme)?;
    let inputs = load_scene_dir(&args.input)?;
    let output = run_pipeline(&inputs, &config, scheme, &out)?;
    write_resolved(&config, &out, "preprocess.config.json")?;
    write_resolved(&output.rejections, &out, "rejections.json")?;
    let (train, val, test) = output.manifest.split_counts();
    println!(
        "preprocess: kept={} rejected={} train={train} val={val} test={test} manifest={}",
        output.manifest.entries.len(),
        output.rejections.len(),
        output.manifest_path.display()
    );
    Ok(out)
}

// ---------------------------------------------------------------------------
// pretrain / train
// ---------------------------------------------------------------------------

#[derive(Args, Debug)]
pub struct PretrainArgs {
    /// Manifest of preprocessed patches.
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// TOML/JSON config file; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<u32>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f32>,
    #[arg(long)]
    pub dropout: Option<f32>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub base_channels: Option<usize>,
    #[arg(long)]
    pub depth: Option<usize>,
    #[arg(long)]
    pub bridge_channels: Option<usize>,
    /// Quiet per-epoch progress lines.
    #[arg(long, default_value_t = false)]
    pub quiet: bool,
}

fn apply_train_overrides(
    section: &mut TrainSection,
    epochs: Option<u32>,
    batch_size: Option<usize>,
    lr: Option<f32>,
    dropout: Option<f32>,
    seed: Option<u64>,
    quiet: bool,
) {
    if let Some(v) = epochs {
        section.epochs = v;
    }
    if let Some(v) = batch_size {
        section.batch_size = v;
    }
    if let Some(v) = lr {
        section.lr = v;
    }
    if let Some(v) = dropout {
        section.dropout = v;
    }
    if let Some(v) = seed {
        section.seed = v;
    }
    if quiet {
        section.progress = false;
    }
}

fn model_overrides(
    section: &mut ModelSection,
    base_channels: Option<usize>,
    depth: Option<usize>,
    bridge_channels: Option<usize>,
) {
    if let Some(v) = base_channels {
        section.base_channels = v;
    }
    if let Some(v) = depth {
        section.depth = v;
    }
    if let Some(v) = bridge_channels {
        section.bridge_channels = v;
    }
}

fn cmd_pretrain(args: &PretrainArgs, deterministic: bool) -> Result<PathBuf> {
    let out = args.out.clone().unwrap_or_else(|| default_out("pretrain"));
    let file_cfg = load_file_config(args.config.as_deref())?;
    let mut section = file_cfg.pretrain.clone();
    let mut model = file_cfg.model.clone();
    apply_train_overrides(
        &mut section,
        args.epochs,
        args.batch_size,
        args.lr,
        args.dropout,
        args.seed,
        args.quiet,
    );
    model_overrides(&mut model, args.base_channels, args.depth, args.bridge_channels);

    let manifest = load_manifest(&args.manifest)?;
    let base = rascore::manifest_base(&args.manifest);
    let data = TrainData::from_manifest(&manifest, &base, false)?;
    let in_channels = data
        .train
        .first()
        .map(|s| s.input.shape()[1])
        .ok_or_else(|| WetsegError::Data("training split is empty".into()))?;
    let spec = AutoencoderSpec {
        in_channels,
        base_channels: model.base_channels,
        depth: model.depth,
        bridge_channels: model.bridge_channels,
        dropout_p: section.dropout,
    };
    let cfg = section.to_train_config(TrainTask::Autoencoder, deterministic)?;
    let outcome = train_autoencoder(&data, &spec, &cfg)?;
    fs::create_dir_all(&out).map_err(|e| WetsegError::io(&out, e))?;
    let ckpt_path = out.join("autoencoder.wsck");
    outcome.checkpoint.save(&ckpt_path)?;
    let mut record = outcome.record;
    record.checkpoint_path = Some(ckpt_path.to_string_lossy().into_owned());
    write_run_record(&record, &out.join("run.json"))?;
    write_resolved(&(&section, &model, &cfg), &out, "pretrain.config.json")?;
    println!("pretrain: epochs={} checkpoint={}", record.epochs_run, ckpt_path.display());
    Ok(out)
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Manifest of labeled patches.
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Autoencoder checkpoint to transfer encoder weights from.
    #[arg(long)]
    pub init: Option<PathBuf>,
    /// Freeze transferred encoder weights.
    #[arg(long, default_value_t = false)]
    pub freeze: bool,
    #[arg(long)]
    pub epochs: Option<u32>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Peak learning rate (cosine schedule by default).
    #[arg(long)]
    pub lr: Option<f32>,
    #[arg(long)]
    pub lr_min: Option<f32>,
    #[arg(long)]
    pub dropout: Option<f32>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub base_channels: Option<usize>,
    #[arg(long)]
    pub depth: Option<usize>,
    #[arg(long)]
    pub bridge_channels: Option<usize>,
    #[arg(long, default_value_t = false)]
    pub quiet: bool,
}

fn cmd_train(args: &TrainArgs, deterministic: bool) -> Result<PathBuf> {
    let out = args.out.clone().unwrap_or_else(|| default_out("train"));
    let file_cfg = load_file_config(args.config.as_deref())?;
    let mut section = file_cfg.train.clone();
    // U-Net defaults follow the cosine schedule
    if args.config.is_none() {
        section.schedule = "cosine".into();
        section.epochs = 300;
    }
    let mut model = file_cfg.model.clone();
    apply_train_overrides(
        &mut section,
        args.epochs,
        args.batch_size,
        args.lr,
        args.dropout,
        args.seed,
        args.quiet,
    );
    if let Some(v) = args.lr_min {
        section.lr_min = v;
    }
    model_overrides(&mut model, args.base_channels, args.depth, args.bridge_channels);

    let manifest = load_manifest(&args.manifest)?;
    let base = rascore::manifest_base(&args.manifest);
    let scheme = manifest.class_scheme.clone();
    let data = TrainData::from_manifest(&manifest, &base, true)?;
    let in_channels = data
        .train
        .first()
        .map(|s| s.input.shape()[1])
        .ok_or_else(|| WetsegError::Data("no labeled training entries".into()))?;
    let spec = UNetSpec {
        in_channels,
        num_classes: scheme.len(),
        base_channels: model.base_channels,
        depth: model.depth,
        bridge_channels: model.bridge_channels,
        dropout_p: section.dropout,
    };
    let mut cfg = section.to_train_config(TrainTask::UNet, deterministic)?;
    if let Some(init) = &args.init {
        cfg.init = InitPolicy::FromCheckpoint { path: init.clone(), freeze: args.freeze };
    }
    let outcome = train_unet(&data, &spec, &cfg, &scheme)?;
    fs::create_dir_all(&out).map_err(|e| WetsegError::io(&out, e))?;
    let ckpt_path = out.join("unet.wsck");
    outcome.checkpoint.save(&ckpt_path)?;
    let mut record = outcome.record;
    record.checkpoint_path = Some(ckpt_path.to_string_lossy().into_owned());
    write_run_record(&record, &out.join("run.json"))?;
    write_resolved(&(&section, &model, &cfg), &out, "train.config.json")?;
    println!("train: epochs={} checkpoint={}", record.epochs_run, ckpt_path.display());
    Ok(out)
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    /// Split to score: train, val, or test.
    #[arg(long, default_value = "test")]
    pub split: String,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// |pred - target| tolerance for reconstruction accuracy.
    #[arg(long, default_value_t = 0.05)]
    pub tolerance: f32,
    /// Write per-patch PNG renders.
    #[arg(long, default_value_t = false)]
    pub render: bool,
}

fn parse_split(s: &str) -> Result<Split> {
    match s {
        "train" => Ok(Split::Train),
        "val" => Ok(Split::Val),
        "test" => Ok(Split::Test),
        other => Err(WetsegError::Config(format!("unknown split {other:?}"))),
    }
}

fn cmd_eval(args: &EvalArgs) -> Result<PathBuf> {
    let out = args.out.clone().unwrap_or_else(|| default_out("eval"));
    fs::create_dir_all(&out).map_err(|e| WetsegError::io(&out, e))?;
    let split = parse_split(&args.split)?;
    let ckpt = ModelCheckpoint::load(&args.checkpoint)?;
    let manifest = load_manifest(&args.manifest)?;
    let base = rascore::manifest_base(&args.manifest);
    let cfg = EvalConfig {
        tolerance: args.tolerance,
        render_dir: args.render.then(|| out.join("renders")),
        dataset_name: args.manifest.display().to_string(),
        checkpoint_name: args.checkpoint.display().to_string(),
        ..Default::default()
    };
    let report = evaluate(&ckpt, &manifest, &base, split, &cfg)?;
    let report_path = out.join("report.json");
    write_report(&report, &report_path)?;
    write_resolved(&(&args.tolerance, &args.split), &out, "eval.config.json")?;
    if let Some(seg) = &report.segmentation {
        println!(
            "eval: split={split} accuracy={:.4} dice={:.4} iou={:.4} dice_loss={:.4} report={}",
            seg.overall_accuracy,
            seg.macro_dice,
            seg.macro_iou,
            seg.dice_loss,
            report_path.display()
        );
    }
    if let Some(rec) = &report.reconstruction {
        println!(
            "eval: split={split} accuracy={:.4} psnr={} ssim={:.4} mixed_loss={:.4} report={}",
            rec.accuracy,
            rec.psnr_db.map(|v| format!("{v:.2}")).unwrap_or_else(|| "inf".into()),
            rec.ssim,
            rec.mixed_loss,
            report_path.display()
        );
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// transfer
// ---------------------------------------------------------------------------

#[derive(Args, Debug)]
pub struct TransferArgs {
    /// Directory of high-resolution scenes plus `<scene>_mask.ras` labels.
    #[arg(long)]
    pub hires: PathBuf,
    /// Directory of medium-resolution scenes.
    #[arg(long)]
    pub lores: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Maximum acquisition-date gap in days.
    #[arg(long, default_value_t = DEFAULT_MAX_GAP_DAYS)]
    pub max_gap_days: i64,
    /// Comma-separated band restriction applied to both resolutions.
    #[arg(long, default_value = "")]
    pub bands: String,
    #[arg(long, default_value_t = 1024)]
    pub hires_patch: u32,
    #[arg(long, default_value_t = 256)]
    pub lores_patch: u32,
    #[arg(long, default_value_t = 0.30)]
    pub hires_max_invalid: f64,
    #[arg(long, default_value_t = 0.10)]
    pub lores_max_invalid: f64,
    #[arg(long, default_value_t = 0.7)]
    pub train_frac: f64,
    #[arg(long, default_value_t = 0.15)]
    pub val_frac: f64,
    #[arg(long, default_value_t = 0.15)]
    pub test_frac: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

struct SceneFiles {
    id: String,
    raster: MultibandRaster,
    mask: Option<LabelMask>,
}

fn load_scenes(dir: &Path, need_masks: bool) -> Result<Vec<SceneFiles>> {
    let inputs = load_scene_dir(dir)?;
    let mut out = Vec::with_capacity(inputs.len());
    for input in inputs {
        if need_masks && input.label.is_none() {
            return Err(WetsegError::Data(format!(
                "scene {:?} in {} is missing its _mask.ras annotation",
                input.source_id,
                dir.display()
            )));
        }
        out.push(SceneFiles { id: input.source_id, raster: input.raster, mask: input.label });
    }
    Ok(out)
}

fn cmd_transfer(args: &TransferArgs) -> Result<PathBuf> {
    let out = args.out.clone().unwrap_or_else(|| default_out("transfer"));
    fs::create_dir_all(&out).map_err(|e| WetsegError::io(&out, e))?;
    let hires = load_scenes(&args.hires, true)?;
    let lores = load_scenes(&args.lores, false)?;

    let hires_refs: Vec<SceneRef> = hires
        .iter()
        .map(|s| SceneRef { id: s.id.clone(), acquired_at: s.raster.acquired_at.clone() })
        .collect();
    let lores_refs: Vec<SceneRef> = lores
        .iter()
        .map(|s| SceneRef { id: s.id.clone(), acquired_at: s.raster.acquired_at.clone() })
        .collect();
    let pairing = pair_scenes(&hires_refs, &lores_refs, args.max_gap_days)?;
    write_resolved(&pairing, &out, "pairing.json")?;
    if pairing.pairs.is_empty() {
        return Err(WetsegError::Data("no scene pairs within the date window".into()));
    }

    let mut pairs = Vec::with_capacity(pairing.pairs.len());
    for p in &pairing.pairs {
        let h = hires.iter().find(|s| s.id == p.hires_id).expect("paired id exists");
        let l = lores.iter().find(|s| s.id == p.lores_id).expect("paired id exists");
        pairs.push(ResolutionPair {
            scene_id: h.id.clone(),
            hires: h.raster.clone(),
            lores: l.raster.clone(),
            hires_mask: h.mask.clone().expect("hires masks checked on load"),
            mapping: AffineMap::from_gsd(h.raster.gsd_m as f64, l.raster.gsd_m as f64),
        });
    }
    let config = ResolutionConfig {
        hires_patch_size: args.hires_patch,
        lores_patch_size: args.lores_patch,
        hires_max_invalid: args.hires_max_invalid,
        lores_max_invalid: args.lores_max_invalid,
        bands: parse_bands(&args.bands),
        split_policy: SplitPolicy::Random {
            train: args.train_frac,
            val: args.val_frac,
            test: args.test_frac,
            seed: args.seed,
        },
    };
    let (hires_manifest, lores_manifest) = build_resolution_experiment(&pairs, &config, &out)?;
    write_resolved(&config, &out, "transfer.config.json")?;
    println!(
        "transfer: pairs={} unpaired={} hires_patches={} lores_patches={}",
        pairing.pairs.len(),
        pairing.unpaired.len(),
        hires_manifest.entries.len(),
        lores_manifest.entries.len()
    );
    Ok(out)
}

// ---------------------------------------------------------------------------
// experiment
// ---------------------------------------------------------------------------

#[derive(Args, Debug)]
pub struct ExperimentArgs {
    /// Which experiment: reconstruction, pretraining, or resolution.
    pub which: String,
    /// Manifest of preprocessed (labeled) patches.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Separate unlabeled manifest for autoencoder pretraining.
    #[arg(long)]
    pub unlabeled_manifest: Option<PathBuf>,
    /// Output directory of `wetseg transfer` (for the resolution experiment).
    #[arg(long)]
    pub transfer_dir: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Freeze transferred encoder weights in the pretrained U-Net.
    #[arg(long, default_value_t = false)]
    pub freeze: bool,
    #[arg(long)]
    pub epochs: Option<u32>,
    #[arg(long)]
    pub pretrain_epochs: Option<u32>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub base_channels: Option<usize>,
    #[arg(long)]
    pub depth: Option<usize>,
    #[arg(long)]
    pub bridge_channels: Option<usize>,
    #[arg(long, default_value_t = false)]
    pub quiet: bool,
}

fn required_manifest(path: &Option<PathBuf>) -> Result<(DatasetManifest, PathBuf)> {
    let path = path
        .as_ref()
        .ok_or_else(|| WetsegError::Config("--manifest is required for this experiment".into()))?;
    Ok((load_manifest(path)?, rascore::manifest_base(path)))
}

fn cmd_experiment(args: &ExperimentArgs, deterministic: bool) -> Result<PathBuf> {
    let out = args.out.clone().unwrap_or_else(|| default_out("experiment"));
    fs::create_dir_all(&out).map_err(|e| WetsegError::io(&out, e))?;
    let file_cfg = load_file_config(args.config.as_deref())?;
    let mut model = file_cfg.model.clone();
    model_overrides(&mut model, args.base_channels, args.depth, args.bridge_channels);
    let mut train_section = file_cfg.train.clone();
    let mut pretrain_section = file_cfg.pretrain.clone();
    apply_train_overrides(&mut train_section, args.epochs, None, None, None, args.seed, args.quiet);
    apply_train_overrides(
        &mut pretrain_section,
        args.pretrain_epochs.or(args.epochs),
        None,
        None,
        None,
        args.seed,
        args.quiet,
    );

    match args.which.as_str() {
        "reconstruction" => {
            let (manifest, base) = required_manifest(&args.manifest)?;
            let data = TrainData::from_manifest(&manifest, &base, false)?;
            let test = samples_from_manifest(&manifest, &base, Split::Test, false)?;
            let in_channels = data
                .train
                .first()
                .map(|s| s.input.shape()[1])
                .ok_or_else(|| WetsegError::Data("training split is empty".into()))?;
            let spec = AutoencoderSpec {
                in_channels,
                base_channels: model.base_channels,
                depth: model.depth,
                bridge_channels: model.bridge_channels,
                dropout_p: pretrain_section.dropout,
            };
            let cfg = pretrain_section.to_train_config(TrainTask::Autoencoder, deterministic)?;
            let summary =
                experiment_reconstruction(&data, &test, &spec, &cfg, &EvalConfig::default())?;
            write_resolved(&summary, &out, "reconstruction.json")?;
            println!(
                "experiment reconstruction: accuracy={:.4} ssim={:.4} mixed_loss={:.4}",
                summary.metrics.accuracy, summary.metrics.ssim, summary.metrics.mixed_loss
            );
        }
        "pretraining" => {
            let (manifest, base) = required_manifest(&args.manifest)?;
            let labeled = TrainData::from_manifest(&manifest, &base, true)?;
            let test = samples_from_manifest(&manifest, &base, Split::Test, true)?;
            let unlabeled = match &args.unlabeled_manifest {
                Some(path) => {
                    let m = load_manifest(path)?;
                    TrainData::from_manifest(&m, &rascore::manifest_base(path), false)?
                }
                None => TrainData::from_manifest(&manifest, &base, false)?,
            };
            let scheme = manifest.class_scheme.clone();
            let in_channels = labeled
                .train
                .first()
                .map(|s| s.input.shape()[1])
                .ok_or_else(|| WetsegError::Data("no labeled training entries".into()))?;
            let ae_spec = AutoencoderSpec {
                in_channels,
                base_channels: model.base_channels,
                depth: model.depth,
                bridge_channels: model.bridge_channels,
                dropout_p: pretrain_section.dropout,
            };
            let unet_spec = UNetSpec::matching_autoencoder(&ae_spec, scheme.len());
            let ae_cfg = pretrain_section.to_train_config(TrainTask::Autoencoder, deterministic)?;
            let mut unet_section = train_section.clone();
            if args.config.is_none() {
                unet_section.schedule = "cosine".into();
            }
            let unet_cfg = unet_section.to_train_config(TrainTask::UNet, deterministic)?;
            let summary = experiment_pretraining(
                &unlabeled,
                &labeled,
                &test,
                &ae_spec,
                &unet_spec,
                &ae_cfg,
                &unet_cfg,
                args.freeze,
                &scheme,
            )?;
            write_resolved(&summary, &out, "pretraining.json")?;
            println!(
                "experiment pretraining: scratch accuracy={:.4} dice={:.4} | pretrained accuracy={:.4} dice={:.4}",
                summary.scratch.accuracy,
                summary.scratch.dice,
                summary.pretrained.accuracy,
                summary.pretrained.dice
            );
        }
        "resolution" => {
            let dir = args.transfer_dir.as_ref().ok_or_else(|| {
                WetsegError::Config("--transfer-dir is required for the resolution experiment".into())
            })?;
            let hires_path = dir.join("hires/manifest.json");
            let lores_path = dir.join("lores/manifest.json");
            let hires = load_manifest(&hires_path)?;
            let lores = load_manifest(&lores_path)?;
            let mut section = train_section.clone();
            if args.config.is_none() {
                section.schedule = "cosine".into();
            }
            let cfg = section.to_train_config(TrainTask::UNet, deterministic)?;
            let summary = experiment_resolution(
                &hires,
                &rascore::manifest_base(&hires_path),
                &lores,
                &rascore::manifest_base(&lores_path),
                model.base_channels,
                model.depth,
                model.bridge_channels,
                &cfg,
            )?;
            write_resolved(&summary, &out, "resolution.json")?;
            println!(
                "experiment resolution: medium weighted={:.4} dice={:.4} | high weighted={:.4} dice={:.4}",
                summary.medium.weighted, summary.medium.dice, summary.high.weighted, summary.high.dice
            );
        }
        other => {
            return Err(WetsegError::Config(format!(
                "unknown experiment {other:?} (expected reconstruction, pretraining, or resolution)"
            )))
        }
    }
    write_resolved(&(&model, &train_section, &pretrain_section), &out, "experiment.config.json")?;
    Ok(out)
}

// ---------------------------------------------------------------------------
// entry
// ---------------------------------------------------------------------------

/// Run a parsed CLI invocation. Returns the primary output directory.
pub fn run(cli: &Cli) -> Result<PathBuf> {
    let threads = if cli.deterministic { 1 } else { cli.threads };
    if threads > 0 {
        // ignore failure: the global pool can only be set once per process
        let _ = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global();
    }
    match &cli.command {
        Command::Synth(args) => cmd_synth(args),
        Command::Preprocess(args) => cmd_preprocess(args),
        Command::Pretrain(args) => cmd_pretrain(args, cli.deterministic),
        Command::Train(args) => cmd_train(args, cli.deterministic),
        Command::Eval(args) => cmd_eval(args),
        Command::Transfer(args) => cmd_transfer(args),
        Command::Experiment(args) => cmd_experiment(args, cli.deterministic),
    }
}

pub fn exit_code(category: ErrorCategory) -> i32 {
    match category {
        ErrorCategory::Config => 2,
        ErrorCategory::Data => 3,
        ErrorCategory::Numeric => 4,
    }
}

/// Flag names that must appear in `--help` for each subcommand; kept next to
/// the arg structs so the help-sync test fails when they drift.
pub fn expected_flags() -> BTreeMap<&'static str, Vec<&'static str>> {
    let mut map = BTreeMap::new();
    map.insert(
        "synth",
        vec!["--out", "--kind", "--count", "--size", "--bands", "--seed", "--regions"],
    );
    map.insert(
        "preprocess",
        vec![
            "--input",
            "--out",
            "--patch-size",
            "--max-invalid",
            "--equalize",
            "--normalize",
            "--bands",
            "--split",
            "--train-frac",
            "--val-frac",
            "--test-frac",
            "--seed",
            "--scheme",
        ],
    );
    map.insert(
        "pretrain",
        vec![
            "--manifest",
            "--out",
            "--config",
            "--epochs",
            "--batch-size",
            "--lr",
            "--dropout",
            "--seed",
            "--base-channels",
            "--depth",
            "--bridge-channels",
            "--quiet",
        ],
    );
    map.insert(
        "train",
        vec![
            "--manifest",
            "--out",
            "--config",
            "--init",
            "--freeze",
            "--epochs",
            "--batch-size",
            "--lr",
            "--lr-min",
            "--dropout",
            "--seed",
            "--base-channels",
            "--depth",
            "--bridge-channels",
            "--quiet",
        ],
    );
    map.insert(
        "eval",
        vec!["--checkpoint", "--manifest", "--split", "--out", "--tolerance", "--render"],
    );
    map.insert(
        "transfer",
        vec![
            "--hires",
            "--lores",
            "--out",
            "--max-gap-days",
            "--bands",
            "--hires-patch",
            "--lores-patch",
            "--hires-max-invalid",
            "--lores-max-invalid",
            "--train-frac",
            "--val-frac",
            "--test-frac",
            "--seed",
        ],
    );
    map.insert(
        "experiment",
        vec![
            "--manifest",
            "--unlabeled-manifest",
            "--transfer-dir",
            "--out",
            "--config",
            "--freeze",
            "--epochs",
            "--pretrain-epochs",
            "--seed",
            "--base-channels",
            "--depth",
            "--bridge-channels",
            "--quiet",
        ],
    );
    map
}
