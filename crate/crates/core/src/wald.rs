//! Reduced-resolution training data following Wald's protocol.
//!
//! Both inputs are degraded by the resolution ratio `r`; the original MS
//! then serves as the reference for the degraded pair.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use messfn_tensor::{resize_planes, Scale};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::error::{CoreError, Result};
use crate::filter::{gaussian_kernel, separable_filter};
use crate::raster::{patch_origins, read_raster, to_unit, write_raster, DType, RasterImage};

pub const MANIFEST_FILE: &str = "manifest.txt";

#[derive(Clone, Debug, PartialEq)]
pub struct WaldConfig {
    pub r: usize,
    /// Patch edge at PAN resolution.
    pub patch: usize,
    pub stride: usize,
    pub train_fraction: f64,
    pub seed: u64,
}

impl Default for WaldConfig {
    fn default() -> Self {
        WaldConfig {
            r: 4,
            patch: 64,
            stride: 64,
            train_fraction: 0.9,
            seed: 0,
        }
    }
}

impl WaldConfig {
    pub fn validate(&self) -> Result<()> {
        if self.r == 0 || self.patch == 0 || self.stride == 0 {
            return Err(CoreError::Config("r, patch and stride must be positive".into()));
        }
        if self.patch % self.r != 0 {
            return Err(CoreError::Config(format!(
                "patch {} is not divisible by r = {}",
                self.patch, self.r
            )));
        }
        if self.stride % self.r != 0 {
            return Err(CoreError::Config(format!(
                "stride {} is not divisible by r = {}",
                self.stride, self.r
            )));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(CoreError::Config(format!(
                "train fraction {} outside (0, 1)",
                self.train_fraction
            )));
        }
        Ok(())
    }

    /// Number of training samples out of `n`.
    pub fn train_count(&self, n: usize) -> usize {
        ((self.train_fraction * n as f64).round() as usize).min(n)
    }
}

/// One degraded MS/PAN pair and its full-resolution MS reference.
#[derive(Clone, Debug, PartialEq)]
pub struct SamplePair {
    pub ms_lr: RasterImage,
    pub pan_lr: RasterImage,
    pub ms_ref: RasterImage,
    pub source_id: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetManifest {
    pub config: WaldConfig,
    pub train: Vec<SamplePair>,
    pub val: Vec<SamplePair>,
}

/// Gaussian prefilter (sigma `r/2`, radius `2r`) followed by bicubic
/// decimation by `r`.
pub fn degrade(img: &RasterImage, r: usize) -> Result<RasterImage> {
    if r == 0 || img.height % r != 0 || img.width % r != 0 {
        return Err(CoreError::Geometry(format!(
            "{}x{} image is not divisible by r = {r}",
            img.height, img.width
        )));
    }
    if r == 1 {
        return Ok(img.clone());
    }
    let kernel = gaussian_kernel(0.5 * r as f64, 2 * r);
    let mut smooth = Vec::with_capacity(img.data.len());
    for b in 0..img.bands {
        smooth.extend(separable_filter(img.band(b), img.height, img.width, &kernel));
    }
    let (data, h, w) = resize_planes(&smooth, img.bands, img.height, img.width, Scale::down(r))?;
    img.like(img.bands, h, w, data)
}

/// Degrades, normalizes and tiles a co-registered MS/PAN scene, then splits
/// the patches into shuffled training and validation sets.
pub fn make_dataset(ms: &RasterImage, pan: &RasterImage, cfg: &WaldConfig) -> Result<DatasetManifest> {
    cfg.validate()?;
    let r = cfg.r;
    if pan.bands != 1 {
        return Err(CoreError::Geometry(format!("PAN must have 1 band, got {}", pan.bands)));
    }
    if pan.height != r * ms.height || pan.width != r * ms.width {
        return Err(CoreError::Geometry(format!(
            "PAN {}x{} is not {r} times MS {}x{}",
            pan.height, pan.width, ms.height, ms.width
        )));
    }
    let ms = to_unit(ms)?;
    let pan = to_unit(pan)?;
    let clamp = |img: RasterImage| img.map(|v| v.clamp(-1.0, 1.0));
    let ms_low = clamp(degrade(&ms, r)?);
    let pan_low = clamp(degrade(&pan, r)?);

    let p = cfg.patch;
    let mut samples = Vec::new();
    for (y, x) in patch_origins(pan_low.height, pan_low.width, p, cfg.stride)? {
        samples.push(SamplePair {
            ms_lr: ms_low.crop(y / r, x / r, p / r, p / r)?,
            pan_lr: pan_low.crop(y, x, p, p)?,
            ms_ref: ms.crop(y, x, p, p)?,
            source_id: format!("y{y:05}x{x:05}"),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    samples.shuffle(&mut rng);
    let val = samples.split_off(cfg.train_count(samples.len()));
    Ok(DatasetManifest {
        config: cfg.clone(),
        train: samples,
        val,
    })
}

fn sample_paths(split: &str, i: usize) -> [String; 3] {
    ["ms_lr", "pan_lr", "ms_ref"].map(|kind| format!("samples/{split}_{i:05}_{kind}.rst"))
}

impl DatasetManifest {
    pub fn len(&self) -> usize {
        self.train.len() + self.val.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Writes the manifest and every sample raster under `dir`; returns the
    /// manifest path.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<PathBuf> {
        let dir = dir.as_ref();
        let samples_dir = dir.join("samples");
        fs::create_dir_all(&samples_dir).map_err(|e| CoreError::io(&samples_dir, e))?;
        let c = &self.config;
        let mut text = String::from("# messfn dataset manifest\n[config]\n");
        let _ = writeln!(text, "r = {}", c.r);
        let _ = writeln!(text, "patch = {}", c.patch);
        let _ = writeln!(text, "stride = {}", c.stride);
        let _ = writeln!(text, "train_fraction = {}", c.train_fraction);
        let _ = writeln!(text, "seed = {}", c.seed);
        for (split, set) in [("train", &self.train), ("val", &self.val)] {
            let _ = writeln!(text, "[{split}]");
            for (i, s) in set.iter().enumerate() {
                let paths = sample_paths(split, i);
                for (img, rel) in [&s.ms_lr, &s.pan_lr, &s.ms_ref].into_iter().zip(&paths) {
                    write_raster(dir.join(rel), img, DType::F64)?;
                }
                let _ = writeln!(text, "{} {} {} {}", s.source_id, paths[0], paths[1], paths[2]);
            }
        }
        let path = dir.join(MANIFEST_FILE);
        fs::write(&path, text).map_err(|e| CoreError::io(&path, e))?;
        Ok(path)
    }

    /// Loads a manifest file (or a directory containing one).
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = manifest_path(path.as_ref());
        let dir = path.parent().unwrap_or(Path::new("."));
        let text = fs::read_to_string(&path).map_err(|e| CoreError::io(&path, e))?;
        let mut config = WaldConfig::default();
        let (mut train, mut val) = (Vec::new(), Vec::new());
        let mut section = "";
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let bad = |why: &str| CoreError::format(&path, format!("line {}: {why}", lineno + 1));
            if line.starts_with('[') && line.ends_with(']') {
                section = match &line[1..line.len() - 1] {
                    "config" => "config",
                    "train" => "train",
                    "val" => "val",
                    _ => return Err(bad("unknown section")),
                };
                continue;
            }
            match section {
                "config" => {
                    let (k, v) = line.split_once('=').ok_or_else(|| bad("expected key = value"))?;
                    let v = v.trim();
                    let num = || v.parse::<usize>().map_err(|_| bad("expected integer"));
                    match k.trim() {
                        "r" => config.r = num()?,
                        "patch" => config.patch = num()?,
                        "stride" => config.stride = num()?,
                        "seed" => config.seed = v.parse().map_err(|_| bad("expected integer"))?,
                        "train_fraction" => {
                            config.train_fraction = v.parse().map_err(|_| bad("expected number"))?
                        }
                        _ => return Err(bad("unknown config key")),
                    }
                }
                "train" | "val" => {
                    let parts: Vec<&str> = line.split_whitespace().collect();
                    if parts.len() != 4 {
                        return Err(bad("expected: id ms_lr pan_lr ms_ref"));
                    }
                    let sample = SamplePair {
                        source_id: parts[0].to_string(),
                        ms_lr: read_raster(dir.join(parts[1]))?,
                        pan_lr: read_raster(dir.join(parts[2]))?,
                        ms_ref: read_raster(dir.join(parts[3]))?,
                    };
                    check_sample(&sample, config.r).map_err(|e| bad(&e.to_string()))?;
                    if section == "train" {
                        train.push(sample);
                    } else {
                        val.push(sample);
                    }
                }
                _ => return Err(bad("entry outside any section")),
            }
        }
        Ok(DatasetManifest { config, train, val })
    }
}

fn check_sample(s: &SamplePair, r: usize) -> Result<()> {
    let ok = s.pan_lr.bands == 1
        && s.pan_lr.height == r * s.ms_lr.height
        && s.pan_lr.width == r * s.ms_lr.width
        && s.ms_ref.bands == s.ms_lr.bands
        && s.ms_ref.height == s.pan_lr.height
        && s.ms_ref.width == s.pan_lr.width;
    if ok {
        Ok(())
    } else {
        Err(CoreError::Geometry(format!("sample {} has inconsistent geometry", s.source_id)))
    }
}

fn manifest_path(path: &Path) -> PathBuf {
    if path.is_dir() {
        path.join(MANIFEST_FILE)
    } else {
        path.to_path_buf()
    }
}

/// SHA-256 over the manifest text and every sample file it references.
pub fn dataset_digest(path: impl AsRef<Path>) -> Result<String> {
    let path = manifest_path(path.as_ref());
    let dir = path.parent().unwrap_or(Path::new("."));
    let text = fs::read_to_string(&path).map_err(|e| CoreError::io(&path, e))?;
    let mut hasher = Sha256::new();
    hasher.update(text.as_bytes());
    for line in text.lines().map(str::trim) {
        if line.starts_with('#') || line.starts_with('[') {
            continue;
        }
        let parts: Vec<&str> = line.split_whitespace().collect();
        if parts.len() == 4 && !line.contains('=') {
            for rel in &parts[1..] {
                let p = dir.join(rel);
                hasher.update(fs::read(&p).map_err(|e| CoreError::io(&p, e))?);
            }
        }
    }
    Ok(hasher.finalize().iter().map(|b| format!("{b:02x}")).collect())
}
