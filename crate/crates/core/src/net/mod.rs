//! The MESSFN fusion network.
//!
//! Three streams (MS, PAN and a joint spectral-spatial stream) run through two
//! general convolution levels and `B` expert levels. The MS and PAN features
//! of every level are added into the joint stream, all fused levels are
//! aggregated by a 1x1 convolution, and a 3x3 convolution with `tanh`
//! reconstructs the sharpened bands.

pub mod blocks;

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use messfn_tensor::{ConvSpec, ParamStore, Scalar, Tape, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{CoreError, Result};
use crate::raster::RasterImage;
use blocks::*;

/// Multispectral band count handled by the network.
pub const MS_BANDS: usize = 4;

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub enum Ablation {
    #[default]
    None,
    /// MS-stream expert blocks become plain residual blocks.
    NoRsab,
    /// PAN-stream expert blocks become plain residual blocks.
    NoRmsab,
    /// MS and PAN contributions are dropped at these fusion levels.
    Disconnect(BTreeSet<usize>),
}

impl fmt::Display for Ablation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Ablation::None => f.write_str("none"),
            Ablation::NoRsab => f.write_str("no-rsab"),
            Ablation::NoRmsab => f.write_str("no-rmsab"),
            Ablation::Disconnect(levels) => {
                let list: Vec<String> = levels.iter().map(usize::to_string).collect();
                write!(f, "disconnect={}", list.join(","))
            }
        }
    }
}

impl FromStr for Ablation {
    type Err = CoreError;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        match s {
            "none" => return Ok(Ablation::None),
            "no-rsab" | "no_rsab" => return Ok(Ablation::NoRsab),
            "no-rmsab" | "no_rmsab" => return Ok(Ablation::NoRmsab),
            _ => {}
        }
        let list = s
            .strip_prefix("disconnect=")
            .ok_or_else(|| CoreError::Config(format!("unknown ablation {s:?}")))?;
        let levels = list
            .split(',')
            .map(|t| {
                t.trim()
                    .parse::<usize>()
                    .map_err(|_| CoreError::Config(format!("bad disconnect level {t:?} in {s:?}")))
            })
            .collect::<Result<BTreeSet<_>>>()?;
        if levels.is_empty() {
            return Err(CoreError::Config("disconnect needs at least one level".into()));
        }
        Ok(Ablation::Disconnect(levels))
    }
}

/// Architecture hyperparameters.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MessfnConfig {
    /// Number of expert blocks `B`.
    pub blocks: usize,
    pub channels: usize,
    /// Taps of the 1-D convolution in the spectral attention.
    pub spectral_kernel: usize,
    pub r: usize,
    pub ablation: Ablation,
    pub isa_kernel: usize,
}

impl Default for MessfnConfig {
    fn default() -> Self {
        MessfnConfig {
            blocks: 9,
            channels: 64,
            spectral_kernel: 3,
            r: 4,
            ablation: Ablation::None,
            isa_kernel: 7,
        }
    }
}

impl MessfnConfig {
    pub fn new(blocks: usize, channels: usize) -> Self {
        MessfnConfig {
            blocks,
            channels,
            ..Default::default()
        }
    }

    pub fn with_ablation(mut self, ablation: Ablation) -> Self {
        self.ablation = ablation;
        self
    }

    /// Fused levels: two general plus `B` expert levels.
    pub fn levels(&self) -> usize {
        self.blocks + 2
    }

    pub fn validate(&self) -> Result<()> {
        if self.blocks == 0 {
            return Err(CoreError::Config("number of blocks B must be at least 1".into()));
        }
        if self.channels == 0 {
            return Err(CoreError::Config("channel width must be positive".into()));
        }
        if self.spectral_kernel % 2 == 0 {
            return Err(CoreError::Config(format!(
                "spectral kernel size {} must be odd",
                self.spectral_kernel
            )));
        }
        if self.isa_kernel % 2 == 0 {
            return Err(CoreError::Config(format!("ISA kernel size {} must be odd", self.isa_kernel)));
        }
        if self.r == 0 {
            return Err(CoreError::Config("scale factor r must be positive".into()));
        }
        if let Ablation::Disconnect(levels) = &self.ablation {
            if let Some(&bad) = levels.iter().find(|&&l| l >= self.levels()) {
                return Err(CoreError::Config(format!(
                    "disconnect level {bad} outside 0..={} for B = {}",
                    self.levels() - 1,
                    self.blocks
                )));
            }
        }
        Ok(())
    }

    pub fn is_disconnected(&self, level: usize) -> bool {
        matches!(&self.ablation, Ablation::Disconnect(s) if s.contains(&level))
    }

    /// Closed-form parameter count.
    pub fn param_count(&self) -> usize {
        let (c, b, k, s) = (self.channels, self.blocks, self.spectral_kernel, self.isa_kernel);
        let conv = |cin: usize, cout: usize, kh: usize, kw: usize| cout * cin * kh * kw + cout;
        let rb = 2 * conv(c, c, 3, 3);
        let rsab = conv(c, c, 3, 3) + k;
        let rmsab = 20 * c * c + 6 * c + 2 * s * s;
        let ms_block = if self.ablation == Ablation::NoRsab { rb } else { rsab };
        let pan_block = if self.ablation == Ablation::NoRmsab { rb } else { rmsab };
        conv(MS_BANDS, MS_BANDS, 3, 3)
            + conv(MS_BANDS, c, 3, 3)
            + conv(c, c, 3, 3)
            + conv(1, c, 3, 3)
            + conv(c, c, 3, 3)
            + conv(c, c, 3, 3)
            + b * (ms_block + pan_block + rb)
            + conv((b + 2) * c, c, 1, 1)
            + conv(c, MS_BANDS, 3, 3)
    }

    /// `key = value` lines, parseable by [`MessfnConfig::from_echo`].
    pub fn echo(&self) -> String {
        format!(
            "blocks = {}\nchannels = {}\nspectral_kernel = {}\nr = {}\nablation = {}\nisa_kernel = {}\n",
            self.blocks, self.channels, self.spectral_kernel, self.r, self.ablation, self.isa_kernel
        )
    }

    pub fn from_echo(text: &str) -> Result<Self> {
        let mut cfg = MessfnConfig::default();
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')) {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| CoreError::Config(format!("bad config line {line:?}")))?;
            let v = v.trim();
            let num = || {
                v.parse::<usize>()
                    .map_err(|_| CoreError::Config(format!("{}: expected integer, got {v:?}", k.trim())))
            };
            match k.trim() {
                "blocks" => cfg.blocks = num()?,
                "channels" => cfg.channels = num()?,
                "spectral_kernel" => cfg.spectral_kernel = num()?,
                "r" => cfg.r = num()?,
                "isa_kernel" => cfg.isa_kernel = num()?,
                "ablation" => cfg.ablation = v.parse()?,
                other => return Err(CoreError::Config(format!("unknown model key {other:?}"))),
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Every parameter in the fixed storage order.
    pub fn layout(&self) -> Vec<ParamDecl> {
        let c = self.channels;
        let mut out = Vec::new();
        declare_brc(&mut out, "brc.", MS_BANDS);
        declare_conv(&mut out, "ms_general.0", ConvSpec::same(MS_BANDS, c, 3));
        declare_conv(&mut out, "ms_general.1", ConvSpec::same(c, c, 3));
        declare_conv(&mut out, "pan_general.0", ConvSpec::same(1, c, 3));
        declare_conv(&mut out, "pan_general.1", ConvSpec::same(c, c, 3));
        declare_conv(&mut out, "ss_general", ConvSpec::same(c, c, 3));
        for i in 0..self.blocks {
            let ms = format!("ms_expert.{i}.");
            match self.ablation {
                Ablation::NoRsab => declare_rb(&mut out, &ms, c),
                _ => declare_rsab(&mut out, &ms, c, self.spectral_kernel),
            }
            let pan = format!("pan_expert.{i}.");
            match self.ablation {
                Ablation::NoRmsab => declare_rb(&mut out, &pan, c),
                _ => declare_rmsab(&mut out, &pan, c, self.isa_kernel),
            }
            declare_rb(&mut out, &format!("ss_expert.{i}."), c);
        }
        declare_conv(&mut out, "aggregate", ConvSpec::same(self.levels() * c, c, 1));
        declare_conv(&mut out, "reconstruct", ConvSpec::same(c, MS_BANDS, 3));
        out
    }
}

/// Network configuration plus its parameter set.
#[derive(Clone, Debug, PartialEq)]
pub struct MessfnWeights<T> {
    pub config: MessfnConfig,
    pub params: ParamStore<T>,
}

impl<T: Scalar> MessfnWeights<T> {
    /// He-normal kernels `N(0, 2 / fan_in)` and zero biases, deterministic per seed.
    pub fn init(config: &MessfnConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        for (name, shape, fan_in) in config.layout() {
            let n: usize = shape.iter().product();
            let data: Vec<T> = match fan_in {
                Some(fan_in) => {
                    let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt())
                        .map_err(|e| CoreError::Numerical(e.to_string()))?;
                    (0..n).map(|_| T::of(normal.sample(&mut rng))).collect()
                }
                None => vec![T::zero(); n],
            };
            params.add(name, Tensor::new(shape, data)?)?;
        }
        Ok(MessfnWeights {
            config: config.clone(),
            params,
        })
    }

    pub fn zeros(config: &MessfnConfig) -> Result<Self> {
        config.validate()?;
        let mut params = ParamStore::new();
        for (name, shape, _) in config.layout() {
            params.add(name, Tensor::zeros(shape))?;
        }
        Ok(MessfnWeights {
            config: config.clone(),
            params,
        })
    }

    pub fn cast<U: Scalar>(&self) -> MessfnWeights<U> {
        MessfnWeights {
            config: self.config.clone(),
            params: self.params.cast(),
        }
    }

    pub fn param_count(&self) -> usize {
        self.params.numel()
    }

    pub fn forward(&self, tape: &mut Tape<T>, ms: Var, pan: Var) -> Result<Var> {
        forward(tape, &self.config, &self.params, ms, pan)
    }

    /// Inference without keeping a tape around.
    pub fn predict(&self, ms: &Tensor<T>, pan: &Tensor<T>) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let ms = tape.constant(ms.clone())?;
        let pan = tape.constant(pan.clone())?;
        let out = self.forward(&mut tape, ms, pan)?;
        Ok(tape.value(out).clone())
    }

    /// Fuses a full scene tile by tile. Tiles are `tile x tile` MS pixels with
    /// `margin` extra MS pixels of context on each side.
    pub fn predict_scene(&self, ms: &RasterImage, pan: &RasterImage, tile: usize, margin: usize) -> Result<RasterImage> {
        let r = self.config.r;
        check_geometry(ms.bands, pan.bands, (ms.height, ms.width), (pan.height, pan.width), r)?;
        if tile == 0 {
            return Err(CoreError::Config("tile size must be positive".into()));
        }
        let (h, w) = (pan.height, pan.width);
        let mut out = vec![0.0; MS_BANDS * h * w];
        let mut y0 = 0;
        while y0 < ms.height {
            let th = tile.min(ms.height - y0);
            let mut x0 = 0;
            while x0 < ms.width {
                let tw = tile.min(ms.width - x0);
                let (ya, xa) = (y0.saturating_sub(margin), x0.saturating_sub(margin));
                let yb = (y0 + th + margin).min(ms.height);
                let xb = (x0 + tw + margin).min(ms.width);
                let ms_t = ms.crop(ya, xa, yb - ya, xb - xa)?;
                let pan_t = pan.crop(ya * r, xa * r, (yb - ya) * r, (xb - xa) * r)?;
                let pred = self.predict(&raster_batch(&[&ms_t])?, &raster_batch(&[&pan_t])?)?;
                let (ph, pw) = ((yb - ya) * r, (xb - xa) * r);
                let pd = pred.data();
                for b in 0..MS_BANDS {
                    for y in 0..th * r {
                        let src_row = (y + (y0 - ya) * r) * pw + (x0 - xa) * r;
                        let dst_row = b * h * w + (y0 * r + y) * w + x0 * r;
                        for x in 0..tw * r {
                            out[dst_row + x] = pd[b * ph * pw + src_row + x].as_f64();
                        }
                    }
                }
                x0 += tile;
            }
            y0 += tile;
        }
        let mut img = RasterImage::new(MS_BANDS, h, w, out, ms.bit_depth)?;
        img.band_names = ms.band_names.clone();
        img.normalized = true;
        Ok(img)
    }
}

fn check_geometry(ms_bands: usize, pan_bands: usize, ms_hw: (usize, usize), pan_hw: (usize, usize), r: usize) -> Result<()> {
    if ms_bands != MS_BANDS || pan_bands != 1 {
        return Err(CoreError::Geometry(format!(
            "expected {MS_BANDS}-band MS and 1-band PAN, got {ms_bands} and {pan_bands}"
        )));
    }
    if pan_hw != (ms_hw.0 * r, ms_hw.1 * r) {
        return Err(CoreError::Geometry(format!(
            "PAN {}x{} is not r = {r} times MS {}x{}",
            pan_hw.0, pan_hw.1, ms_hw.0, ms_hw.1
        )));
    }
    Ok(())
}

/// Full forward pass: `ms: [N, 4, h, w]`, `pan: [N, 1, r h, r w]` to `[N, 4, r h, r w]`.
pub fn forward<T: Scalar>(tape: &mut Tape<T>, cfg: &MessfnConfig, store: &ParamStore<T>, ms: Var, pan: Var) -> Result<Var> {
    let (ms_s, pan_s) = (tape.shape(ms).to_vec(), tape.shape(pan).to_vec());
    if ms_s.len() != 4 || pan_s.len() != 4 || ms_s[0] != pan_s[0] {
        return Err(CoreError::Geometry(format!("MS {ms_s:?} and PAN {pan_s:?} are not matching batches")));
    }
    check_geometry(ms_s[1], pan_s[1], (ms_s[2], ms_s[3]), (pan_s[2], pan_s[3]), cfg.r)?;
    let c = cfg.channels;

    let ms_up = brc_upsample(tape, store, "brc.", ms, cfg.r)?;
    let m0 = conv_relu(tape, store, "ms_general.0", ms_up, ConvSpec::same(MS_BANDS, c, 3))?;
    let p0 = conv_relu(tape, store, "pan_general.0", pan, ConvSpec::same(1, c, 3))?;
    let f0 = fuse_level(tape, m0, p0, None, cfg.is_disconnected(0))?;

    let m1 = conv_relu(tape, store, "ms_general.1", m0, ConvSpec::same(c, c, 3))?;
    let p1 = conv_relu(tape, store, "pan_general.1", p0, ConvSpec::same(c, c, 3))?;
    let ss1 = conv_relu(tape, store, "ss_general", f0, ConvSpec::same(c, c, 3))?;
    let f1 = fuse_level(tape, m1, p1, Some(ss1), cfg.is_disconnected(1))?;

    let mut fused = vec![f0, f1];
    let (mut m, mut p) = (m1, p1);
    for i in 0..cfg.blocks {
        let level = i + 2;
        let ms_prefix = format!("ms_expert.{i}.");
        m = match cfg.ablation {
            Ablation::NoRsab => rb_forward(tape, store, &ms_prefix, m)?,
            _ => rsab_forward(tape, store, &ms_prefix, m)?,
        };
        let pan_prefix = format!("pan_expert.{i}.");
        p = match cfg.ablation {
            Ablation::NoRmsab => rb_forward(tape, store, &pan_prefix, p)?,
            _ => rmsab_forward(tape, store, &pan_prefix, p)?,
        };
        let prev = *fused.last().expect("two general levels");
        let ss = rb_forward(tape, store, &format!("ss_expert.{i}."), prev)?;
        fused.push(fuse_level(tape, m, p, Some(ss), cfg.is_disconnected(level))?);
    }

    let cat = tape.concat_channels(&fused)?;
    let agg = conv(tape, store, "aggregate", cat, ConvSpec::same(cfg.levels() * c, c, 1))?;
    let rec = conv(tape, store, "reconstruct", agg, ConvSpec::same(c, MS_BANDS, 3))?;
    let out = tape.tanh(rec)?;
    if !tape.value(out).is_finite() {
        return Err(CoreError::NonFinite("network output contains NaN or infinity".into()));
    }
    Ok(out)
}

/// Stacks same-geometry rasters into an `[N, bands, H, W]` tensor.
pub fn raster_batch<T: Scalar>(images: &[&RasterImage]) -> Result<Tensor<T>> {
    let first = images
        .first()
        .ok_or_else(|| CoreError::Config("empty batch".into()))?;
    let mut data = Vec::with_capacity(images.len() * first.data.len());
    for img in images {
        first.check_same_geometry(img, "batch members differ")?;
        data.extend(img.data.iter().map(|&v| T::of(v)));
    }
    Ok(Tensor::new(vec![images.len(), first.bands, first.height, first.width], data)?)
}

/// Splits an `[N, C, H, W]` tensor back into rasters.
pub fn tensor_rasters<T: Scalar>(t: &Tensor<T>, bit_depth: u32) -> Result<Vec<RasterImage>> {
    let (n, c, h, w) = t.dims4()?;
    let mut out = Vec::with_capacity(n);
    for chunk in t.data().chunks(c * h * w) {
        let mut img = RasterImage::new(c, h, w, chunk.iter().map(|v| v.as_f64()).collect(), bit_depth)?;
        img.normalized = true;
        out.push(img);
    }
    Ok(out)
}
