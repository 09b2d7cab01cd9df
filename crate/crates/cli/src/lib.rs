//! The `messfn` command line: synthetic scenes, Wald dataset simulation,
//! training, fusion and evaluation.
//!
//! Each subcommand resolves its settings from flags, an optional
//! `--config` file and defaults, then writes the effective settings to
//! `run_config.txt` in its output directory.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use log::info;
use messfn_core::baselines::{Baseline, FusionInput};
use messfn_core::checkpoint::Checkpoint;
use messfn_core::metrics::{self, Metric, MetricReport};
use messfn_core::net::{Ablation, MessfnConfig};
use messfn_core::raster::{self, DType, NormalizationParams, RasterImage, Stretch};
use messfn_core::synthetic::synthetic_scene;
use messfn_core::trainer::{self, TrainConfig, TrainOptions, CHECKPOINT_FILE};
use messfn_core::wald::{self, DatasetManifest, WaldConfig};
use messfn_core::CoreError;

pub mod settings;

pub use settings::{Settings, ECHO_FILE};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] CoreError),
}

impl CliError {
    /// 2 for bad invocations and incompatible inputs, 1 for runtime failures.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Core(e) => match e {
                CoreError::Config(_) | CoreError::Geometry(_) | CoreError::Incompatible(_) | CoreError::Format { .. } => 2,
                _ => 1,
            },
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "messfn", version, about = "Multispectral pansharpening with expert fusion networks")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic 11-bit MS/PAN pair and its ground truth.
    Synth(SynthArgs),
    /// Build a reduced-resolution training dataset from an MS/PAN pair.
    Simulate(SimulateArgs),
    /// Train a fusion network on a simulated dataset.
    Train(TrainArgs),
    /// Fuse an MS/PAN pair with a trained network or a classical baseline.
    Fuse(FuseArgs),
    /// Score a fused image against a reference or without one.
    Eval(EvalArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// MS height and width.
    #[arg(long)]
    pub size: Option<usize>,
    #[arg(long)]
    pub r: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub ms: Option<PathBuf>,
    #[arg(long)]
    pub pan: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub r: Option<usize>,
    /// Patch edge in degraded PAN pixels.
    #[arg(long)]
    pub patch: Option<usize>,
    #[arg(long)]
    pub stride: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub train_frac: Option<f64>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Manifest file or dataset directory written by `simulate`.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, alias = "B")]
    pub blocks: Option<usize>,
    #[arg(long)]
    pub channels: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub decay_epoch: Option<usize>,
    #[arg(long)]
    pub decay_factor: Option<f64>,
    #[arg(long)]
    pub beta1: Option<f64>,
    #[arg(long)]
    pub beta2: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub checkpoint_every: Option<usize>,
    #[arg(long)]
    pub max_patches: Option<usize>,
    /// none, no-rsab, no-rmsab or disconnect=<levels>.
    #[arg(long)]
    pub ablate: Option<String>,
    #[arg(long)]
    pub spectral_kernel: Option<usize>,
    #[arg(long)]
    pub isa_kernel: Option<usize>,
    /// Continue from the checkpoint in the output directory.
    #[arg(long)]
    pub resume: bool,
    /// Stop once this many epochs are complete.
    #[arg(long)]
    pub stop_after_epoch: Option<usize>,
}

#[derive(Debug, Args)]
pub struct FuseArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, conflicts_with = "baseline")]
    pub checkpoint: Option<PathBuf>,
    /// ihs, pca, gs or mtf-glp-hpm.
    #[arg(long)]
    pub baseline: Option<String>,
    #[arg(long)]
    pub ms: Option<PathBuf>,
    #[arg(long)]
    pub pan: Option<PathBuf>,
    /// Output raster.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Optional 8-bit RGB preview.
    #[arg(long)]
    pub png: Option<PathBuf>,
    /// Resolution ratio for baselines; networks use their own.
    #[arg(long)]
    pub r: Option<usize>,
    #[arg(long)]
    pub tile: Option<usize>,
    #[arg(long)]
    pub margin: Option<usize>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub fused: Option<PathBuf>,
    #[arg(long = "ref", conflicts_with = "noref")]
    pub reference: Option<PathBuf>,
    /// Score with D_lambda, D_s and QNR against the MS and PAN inputs.
    #[arg(long)]
    pub noref: bool,
    #[arg(long)]
    pub ms: Option<PathBuf>,
    #[arg(long)]
    pub pan: Option<PathBuf>,
    #[arg(long)]
    pub r: Option<usize>,
    /// Comma-separated subset of psnr,ssim,sam,ergas,cc,q4.
    #[arg(long)]
    pub metrics: Option<String>,
    /// Directory for report.txt and report.json.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Directory for SAM and gradient heat maps.
    #[arg(long)]
    pub maps: Option<PathBuf>,
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth(a) => cmd_synth(&a).map(|_| ()),
        Command::Simulate(a) => cmd_simulate(&a).map(|s| {
            println!("train {} val {} digest {}", s.train, s.val, s.digest);
            println!("manifest {}", s.manifest.display());
        }),
        Command::Train(a) => cmd_train(&a).map(|s| {
            println!("epochs {} train_l1 {:.6}", s.epochs_completed, s.final_train_l1);
            println!("checkpoint {}", s.checkpoint.display());
        }),
        Command::Fuse(a) => cmd_fuse(&a).map(|s| println!("fused {}", s.display())),
        Command::Eval(a) => cmd_eval(&a).map(|r| print!("{}", r.to_text())),
    }
}

fn require_file(path: &Path, what: &str) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::Usage(format!("{what} {} does not exist", path.display())))
    }
}

fn read_input(path: &Path, what: &str) -> Result<RasterImage> {
    require_file(path, what)?;
    Ok(raster::read_raster(path)?)
}

fn make_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| CoreError::io(dir, e).into())
}

fn write_echo(dir: &Path, echo: &str) -> Result<()> {
    make_dir(dir)?;
    let path = dir.join(ECHO_FILE);
    fs::write(&path, echo).map_err(|e| CoreError::io(&path, e).into())
}

pub struct SynthOutput {
    pub ms: PathBuf,
    pub pan: PathBuf,
    pub truth: PathBuf,
}

pub fn cmd_synth(a: &SynthArgs) -> Result<SynthOutput> {
    let mut s = Settings::load(a.config.as_deref())?;
    let out = s.required_path("out", a.out.clone())?;
    let size = s.value("size", a.size, 256)?;
    let r = s.value("r", a.r, 4)?;
    let seed = s.value("seed", a.seed, 0)?;
    let echo = s.finish("synth")?;
    let scene = synthetic_scene(size, size, r, seed)?;
    write_echo(&out, &echo)?;
    let paths = SynthOutput {
        ms: out.join("ms.rst"),
        pan: out.join("pan.rst"),
        truth: out.join("truth.rst"),
    };
    raster::write_raster(&paths.ms, &scene.ms, DType::U16)?;
    raster::write_raster(&paths.pan, &scene.pan, DType::U16)?;
    raster::write_raster(&paths.truth, &scene.truth, DType::U16)?;
    info!("wrote {size}x{size} MS and {0}x{0} PAN to {1}", size * r, out.display());
    Ok(paths)
}

pub struct SimulateSummary {
    pub manifest: PathBuf,
    pub train: usize,
    pub val: usize,
    pub digest: String,
}

pub fn cmd_simulate(a: &SimulateArgs) -> Result<SimulateSummary> {
    let mut s = Settings::load(a.config.as_deref())?;
    let ms_path = s.required_path("ms", a.ms.clone())?;
    let pan_path = s.required_path("pan", a.pan.clone())?;
    let out = s.required_path("out", a.out.clone())?;
    let d = WaldConfig::default();
    let patch = s.value("patch", a.patch, d.patch)?;
    let cfg = WaldConfig {
        r: s.value("r", a.r, d.r)?,
        patch,
        stride: s.value("stride", a.stride, patch)?,
        train_fraction: s.value("train_frac", a.train_frac, d.train_fraction)?,
        seed: s.value("seed", a.seed, d.seed)?,
    };
    let echo = s.finish("simulate")?;
    cfg.validate()?;
    let ms = read_input(&ms_path, "MS image")?;
    let pan = read_input(&pan_path, "PAN image")?;
    let manifest = wald::make_dataset(&ms, &pan, &cfg)?;
    write_echo(&out, &echo)?;
    let path = manifest.save(&out)?;
    let digest = wald::dataset_digest(&path)?;
    info!("{} training and {} validation pairs", manifest.train.len(), manifest.val.len());
    Ok(SimulateSummary {
        manifest: path,
        train: manifest.train.len(),
        val: manifest.val.len(),
        digest,
    })
}

pub struct TrainSummary {
    pub checkpoint: PathBuf,
    pub epochs_completed: usize,
    pub final_train_l1: f64,
    pub final_val_l1: Option<f64>,
}

pub fn cmd_train(a: &TrainArgs) -> Result<TrainSummary> {
    let mut s = Settings::load(a.config.as_deref())?;
    let manifest_path = s.required_path("manifest", a.manifest.clone())?;
    let out = s.required_path("out", a.out.clone())?;
    let dm = MessfnConfig::default();
    let dt = TrainConfig::default();
    let blocks = s.value("blocks", a.blocks, dm.blocks)?;
    let channels = s.value("channels", a.channels, dm.channels)?;
    let spectral_kernel = s.value("spectral_kernel", a.spectral_kernel, dm.spectral_kernel)?;
    let isa_kernel = s.value("isa_kernel", a.isa_kernel, dm.isa_kernel)?;
    let ablation_flag = a.ablate.as_deref().map(str::parse::<Ablation>).transpose()?;
    let ablation = s.value("ablate", ablation_flag, Ablation::None)?;
    let tc = TrainConfig {
        epochs: s.value("epochs", a.epochs, dt.epochs)?,
        batch_size: s.value("batch_size", a.batch_size, dt.batch_size)?,
        lr0: s.value("lr", a.lr, dt.lr0)?,
        decay_epoch: s.value("decay_epoch", a.decay_epoch, dt.decay_epoch)?,
        decay_factor: s.value("decay_factor", a.decay_factor, dt.decay_factor)?,
        beta1: s.value("beta1", a.beta1, dt.beta1)?,
        beta2: s.value("beta2", a.beta2, dt.beta2)?,
        seed: s.value("seed", a.seed, dt.seed)?,
        checkpoint_every: s.value("checkpoint_every", a.checkpoint_every, dt.checkpoint_every)?,
        max_patches: s.optional("max_patches", a.max_patches)?,
        ..dt
    };
    let echo = s.finish("train")?;
    tc.validate()?;

    if manifest_path.is_dir() {
        require_file(&manifest_path.join(wald::MANIFEST_FILE), "dataset manifest")?;
    } else {
        require_file(&manifest_path, "dataset manifest")?;
    }
    let manifest = DatasetManifest::load(&manifest_path)?;
    let mc = MessfnConfig {
        blocks,
        channels,
        spectral_kernel,
        r: manifest.config.r,
        ablation,
        isa_kernel,
    };
    mc.validate()?;

    let ck_path = out.join(CHECKPOINT_FILE);
    let resume = if a.resume {
        require_file(&ck_path, "checkpoint")?;
        Some(Checkpoint::load_for(&ck_path, &mc)?)
    } else {
        None
    };
    write_echo(&out, &echo)?;
    info!("training {} parameters on {} pairs", mc.param_count(), manifest.train.len());
    let outcome = trainer::train(
        &manifest,
        &mc,
        &tc,
        TrainOptions {
            out_dir: Some(out.clone()),
            resume,
            initial: None,
            stop_after_epoch: a.stop_after_epoch,
        },
    )?;
    let last = outcome.reports.last();
    Ok(TrainSummary {
        checkpoint: ck_path,
        epochs_completed: outcome.epochs_completed,
        final_train_l1: last.map_or(f64::NAN, |r| r.train_l1),
        final_val_l1: last.and_then(|r| r.val_l1),
    })
}

/// Red, green and blue band indices, by name when the bands are named.
fn rgb_bands(img: &RasterImage) -> Vec<usize> {
    let find = |n: &str| img.band_names.iter().position(|b| b.eq_ignore_ascii_case(n));
    match (find("R"), find("G"), find("B")) {
        (Some(r), Some(g), Some(b)) => vec![r, g, b],
        _ if img.bands >= 3 => vec![0, 1, 2],
        _ => vec![0],
    }
}

pub fn cmd_fuse(a: &FuseArgs) -> Result<PathBuf> {
    let mut s = Settings::load(a.config.as_deref())?;
    let checkpoint = s.path("checkpoint", a.checkpoint.clone())?;
    let baseline = s.optional("baseline", a.baseline.clone())?;
    let ms_path = s.required_path("ms", a.ms.clone())?;
    let pan_path = s.required_path("pan", a.pan.clone())?;
    let out = s.required_path("out", a.out.clone())?;
    let png = s.path("png", a.png.clone())?;
    let r = s.value("r", a.r, 4usize)?;
    let tile = s.value("tile", a.tile, 64usize)?;
    let margin = s.value("margin", a.margin, 16usize)?;
    let echo = s.finish("fuse")?;

    let ms = read_input(&ms_path, "MS image")?;
    let pan = read_input(&pan_path, "PAN image")?;
    let fused = match (checkpoint, baseline) {
        (Some(ck), None) => {
            require_file(&ck, "checkpoint")?;
            let ck = Checkpoint::load(&ck)?;
            info!("fusing with a B = {} network", ck.weights.config.blocks);
            ck.weights
                .predict_scene(&raster::to_unit(&ms)?, &raster::to_unit(&pan)?, tile, margin)?
        }
        (None, Some(b)) => {
            let b: Baseline = b.parse()?;
            b.fuse(&FusionInput::new(&ms, &pan, r)?)?
        }
        _ => return Err(CliError::Usage("exactly one of --checkpoint and --baseline is required".into())),
    };

    let out_dir = out.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    write_echo(out_dir, &echo)?;
    let mut sensor = raster::denormalize(&fused, NormalizationParams::for_bit_depth(ms.bit_depth));
    sensor.band_names = ms.band_names.clone();
    raster::write_raster(&out, &sensor, DType::F32)?;
    if let Some(png) = png {
        raster::export_png8(&fused, &rgb_bands(&fused), &png, Stretch::Percentile)?;
    }
    Ok(out)
}

fn parse_selection(list: &str) -> Result<BTreeSet<Metric>> {
    let sel = list
        .split(',')
        .filter(|t| !t.trim().is_empty())
        .map(str::parse)
        .collect::<std::result::Result<BTreeSet<Metric>, _>>()?;
    if sel.is_empty() {
        return Err(CliError::Usage("empty metric selection".into()));
    }
    Ok(sel)
}

fn write_maps(dir: &Path, fused: &RasterImage, reference: &RasterImage) -> Result<()> {
    let f = metrics::shift_to_unit_interval(fused)?;
    let g = metrics::shift_to_unit_interval(reference)?;
    let sam = metrics::sam_map(&f, &g)?;
    let sam_max = sam.data.iter().cloned().fold(0.0, f64::max);
    raster::export_heatmap_png(&sam, sam_max, dir.join("sam.png"))?;
    let gf = metrics::gradient_map(&f)?;
    let gr = metrics::gradient_map(&g)?;
    let gmax = gf.data.iter().chain(&gr.data).cloned().fold(0.0, f64::max);
    raster::export_heatmap_png(&gf, gmax, dir.join("gradient_fused.png"))?;
    raster::export_heatmap_png(&gr, gmax, dir.join("gradient_ref.png"))?;
    let gd = metrics::diff_map(&gf, &gr)?;
    raster::export_heatmap_png(&gd, gmax, dir.join("gradient_diff.png"))?;
    Ok(())
}

pub fn cmd_eval(a: &EvalArgs) -> Result<MetricReport> {
    let mut s = Settings::load(a.config.as_deref())?;
    let fused_path = s.required_path("fused", a.fused.clone())?;
    let reference = s.path("ref", a.reference.clone())?;
    let noref = s.value("noref", a.noref.then_some(true), false)?;
    let ms_path = s.path("ms", a.ms.clone())?;
    let pan_path = s.path("pan", a.pan.clone())?;
    let r = s.value("r", a.r, 4usize)?;
    let metric_list = s.optional("metrics", a.metrics.clone())?;
    let out = s.path("out", a.out.clone())?;
    let maps = s.path("maps", a.maps.clone())?;
    let echo = s.finish("eval")?;

    let fused = read_input(&fused_path, "fused image")?;
    let report = match (reference, noref) {
        (Some(ref_path), false) => {
            let reference = read_input(&ref_path, "reference image")?;
            let selection = match &metric_list {
                Some(l) => parse_selection(l)?,
                None => Metric::all(),
            };
            let rep = metrics::reference_report(&fused, &reference, r, &selection)?;
            if let Some(dir) = &maps {
                write_echo(dir, &echo)?;
                write_maps(dir, &fused, &reference)?;
            }
            rep
        }
        (None, true) => {
            let (Some(ms_path), Some(pan_path)) = (ms_path, pan_path) else {
                return Err(CliError::Usage("--noref needs --ms and --pan".into()));
            };
            if metric_list.is_some() || maps.is_some() {
                return Err(CliError::Usage("--metrics and --maps need a reference image".into()));
            }
            let ms = read_input(&ms_path, "MS image")?;
            let pan = read_input(&pan_path, "PAN image")?;
            metrics::no_reference_report(&fused, &ms, &pan, r)?
        }
        _ => return Err(CliError::Usage("exactly one of --ref and --noref is required".into())),
    };
    if let Some(dir) = &out {
        write_echo(dir, &echo)?;
        for (name, body) in [("report.txt", report.to_text()), ("report.json", report.to_json())] {
            let p = dir.join(name);
            fs::write(&p, body).map_err(|e| CoreError::io(&p, e))?;
        }
    }
    Ok(report)
}
