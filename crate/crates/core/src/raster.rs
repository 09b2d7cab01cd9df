//! Multi-band rasters: native file format, radiometric normalization,
//! patch extraction and 8-bit previews.
//!
//! The native format is a short ASCII header terminated by an `end` line,
//! followed by a planar (band-major) little-endian payload:
//!
//! ```text
//! MESSFN-RASTER 1
//! bands 4
//! height 256
//! width 256
//! dtype u16
//! bit_depth 11
//! range raw
//! band_names NIR,R,G,B
//! end
//! ```

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{CoreError, Result};

const MAGIC: &str = "MESSFN-RASTER 1";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DType {
    U16,
    F32,
    F64,
}

impl DType {
    pub fn size(self) -> usize {
        match self {
            DType::U16 => 2,
            DType::F32 => 4,
            DType::F64 => 8,
        }
    }

    fn name(self) -> &'static str {
        match self {
            DType::U16 => "u16",
            DType::F32 => "f32",
            DType::F64 => "f64",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s {
            "u16" => Some(DType::U16),
            "f32" => Some(DType::F32),
            "f64" => Some(DType::F64),
            _ => None,
        }
    }
}

/// Planar multi-band image.
///
/// `normalized` records whether samples are still in sensor units or have
/// been mapped to `[-1, 1]` by [`normalize_to_unit`].
#[derive(Clone, Debug, PartialEq)]
pub struct RasterImage {
    pub bands: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
    pub bit_depth: u32,
    pub band_names: Vec<String>,
    pub normalized: bool,
}

impl RasterImage {
    pub fn new(bands: usize, height: usize, width: usize, data: Vec<f64>, bit_depth: u32) -> Result<Self> {
        if bands == 0 || height == 0 || width == 0 {
            return Err(CoreError::Geometry(format!(
                "raster dimensions must be positive, got {bands}x{height}x{width}"
            )));
        }
        if data.len() != bands * height * width {
            return Err(CoreError::Geometry(format!(
                "buffer of {} samples does not match {bands}x{height}x{width}",
                data.len()
            )));
        }
        Ok(RasterImage {
            bands,
            height,
            width,
            data,
            bit_depth,
            band_names: Vec::new(),
            normalized: false,
        })
    }

    pub fn filled(bands: usize, height: usize, width: usize, value: f64, bit_depth: u32) -> Self {
        RasterImage::new(bands, height, width, vec![value; bands * height * width], bit_depth)
            .expect("positive dimensions")
    }

    /// Copy of `self`'s metadata around new samples of the given geometry.
    pub fn like(&self, bands: usize, height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        let mut out = RasterImage::new(bands, height, width, data, self.bit_depth)?;
        out.normalized = self.normalized;
        if bands == self.bands {
            out.band_names = self.band_names.clone();
        }
        Ok(out)
    }

    pub fn with_band_names(mut self, names: &[&str]) -> Self {
        self.band_names = names.iter().map(|s| s.to_string()).collect();
        self
    }

    pub fn plane_len(&self) -> usize {
        self.height * self.width
    }

    pub fn band(&self, b: usize) -> &[f64] {
        let n = self.plane_len();
        &self.data[b * n..(b + 1) * n]
    }

    pub fn band_mut(&mut self, b: usize) -> &mut [f64] {
        let n = self.plane_len();
        &mut self.data[b * n..(b + 1) * n]
    }

    pub fn same_geometry(&self, other: &RasterImage) -> bool {
        self.bands == other.bands && self.height == other.height && self.width == other.width
    }

    pub fn check_same_geometry(&self, other: &RasterImage, what: &str) -> Result<()> {
        if !self.same_geometry(other) {
            return Err(CoreError::Geometry(format!(
                "{what}: {}x{}x{} vs {}x{}x{}",
                self.bands, self.height, self.width, other.bands, other.height, other.width
            )));
        }
        Ok(())
    }

    /// Single-band image built from band `b`.
    pub fn extract_band(&self, b: usize) -> RasterImage {
        let mut out = self
            .like(1, self.height, self.width, self.band(b).to_vec())
            .expect("same geometry");
        out.band_names = self.band_names.get(b).cloned().into_iter().collect();
        out
    }

    /// Rectangular window `[y, y + h) x [x, x + w)` of every band.
    pub fn crop(&self, y: usize, x: usize, h: usize, w: usize) -> Result<RasterImage> {
        if y + h > self.height || x + w > self.width {
            return Err(CoreError::Geometry(format!(
                "window {h}x{w} at ({y},{x}) exceeds {}x{}",
                self.height, self.width
            )));
        }
        let mut data = Vec::with_capacity(self.bands * h * w);
        for b in 0..self.bands {
            let plane = self.band(b);
            for row in y..y + h {
                data.extend_from_slice(&plane[row * self.width + x..row * self.width + x + w]);
            }
        }
        self.like(self.bands, h, w, data)
    }

    /// Maps every sample through `f`.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> RasterImage {
        let mut out = self.clone();
        out.data.iter_mut().for_each(|v| *v = f(*v));
        out
    }
}

/// Linear radiometric mapping between sensor units and `[-1, 1]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NormalizationParams {
    pub scale: f64,
    pub offset: f64,
}

impl NormalizationParams {
    /// Full-scale value `2^bit_depth - 1`.
    pub fn for_bit_depth(bit_depth: u32) -> Self {
        NormalizationParams {
            scale: (2f64).powi(bit_depth as i32) - 1.0,
            offset: 0.0,
        }
    }

    #[inline]
    pub fn forward(&self, x: f64) -> f64 {
        2.0 * (x - self.offset) / self.scale - 1.0
    }

    #[inline]
    pub fn inverse(&self, y: f64) -> f64 {
        (y + 1.0) * self.scale / 2.0 + self.offset
    }
}

/// `x -> 2 (x - offset) / scale - 1`, mapping `[0, scale]` onto `[-1, 1]`.
pub fn normalize_to_unit(img: &RasterImage, params: NormalizationParams) -> Result<RasterImage> {
    if !(params.scale > 0.0) {
        return Err(CoreError::Config(format!("normalization scale {} must be positive", params.scale)));
    }
    let mut out = img.map(|v| params.forward(v));
    out.normalized = true;
    Ok(out)
}

pub fn denormalize(img: &RasterImage, params: NormalizationParams) -> RasterImage {
    let mut out = img.map(|v| params.inverse(v));
    out.normalized = false;
    out
}

/// Normalizes by the image's own bit depth unless it already is.
pub fn to_unit(img: &RasterImage) -> Result<RasterImage> {
    if img.normalized {
        Ok(img.clone())
    } else {
        normalize_to_unit(img, NormalizationParams::for_bit_depth(img.bit_depth))
    }
}

/// Row-major grid of `patch x patch` windows taken every `stride` pixels;
/// trailing remainders are dropped.
pub fn crop_patches(img: &RasterImage, patch: usize, stride: usize) -> Result<Vec<RasterImage>> {
    Ok(patch_origins(img.height, img.width, patch, stride)?
        .into_iter()
        .map(|(y, x)| img.crop(y, x, patch, patch))
        .collect::<Result<Vec<_>>>()?)
}

/// Top-left corners of the patch grid used by [`crop_patches`].
pub fn patch_origins(height: usize, width: usize, patch: usize, stride: usize) -> Result<Vec<(usize, usize)>> {
    if patch == 0 || stride == 0 {
        return Err(CoreError::Config("patch and stride must be positive".into()));
    }
    if patch > height.min(width) {
        return Err(CoreError::Geometry(format!(
            "patch {patch} larger than image {height}x{width}"
        )));
    }
    let rows = (height - patch) / stride + 1;
    let cols = (width - patch) / stride + 1;
    Ok((0..rows)
        .flat_map(|r| (0..cols).map(move |c| (r * stride, c * stride)))
        .collect())
}

/// Header of the native raster format.
#[derive(Clone, Debug, PartialEq)]
pub struct RasterHeader {
    pub bands: usize,
    pub height: usize,
    pub width: usize,
    pub dtype: DType,
    pub bit_depth: u32,
    pub normalized: bool,
    pub band_names: Vec<String>,
}

impl RasterHeader {
    pub fn payload_bytes(&self) -> usize {
        self.bands * self.height * self.width * self.dtype.size()
    }

    fn render(&self) -> String {
        let mut s = format!(
            "{MAGIC}\nbands {}\nheight {}\nwidth {}\ndtype {}\nbit_depth {}\nrange {}\n",
            self.bands,
            self.height,
            self.width,
            self.dtype.name(),
            self.bit_depth,
            if self.normalized { "unit" } else { "raw" },
        );
        if !self.band_names.is_empty() {
            s.push_str(&format!("band_names {}\n", self.band_names.join(",")));
        }
        s.push_str("end\n");
        s
    }

    fn parse(path: &Path, reader: &mut impl BufRead) -> Result<Self> {
        let mut line = String::new();
        let mut next = |line: &mut String| -> Result<String> {
            line.clear();
            let n = reader.read_line(line).map_err(|e| CoreError::io(path, e))?;
            if n == 0 {
                return Err(CoreError::format(path, "truncated header"));
            }
            Ok(line.trim_end().to_string())
        };
        if next(&mut line)? != MAGIC {
            return Err(CoreError::format(path, "missing raster magic line"));
        }
        let (mut bands, mut height, mut width, mut dtype, mut bit_depth) = (None, None, None, None, None);
        let mut normalized = false;
        let mut band_names = Vec::new();
        loop {
            let l = next(&mut line)?;
            if l == "end" {
                break;
            }
            let (key, value) = l
                .split_once(' ')
                .ok_or_else(|| CoreError::format(path, format!("bad header line {l:?}")))?;
            let num = |v: &str| -> Result<usize> {
                v.parse()
                    .map_err(|_| CoreError::format(path, format!("{key}: not an integer: {v:?}")))
            };
            match key {
                "bands" => bands = Some(num(value)?),
                "height" => height = Some(num(value)?),
                "width" => width = Some(num(value)?),
                "bit_depth" => bit_depth = Some(num(value)? as u32),
                "dtype" => {
                    dtype = Some(DType::parse(value).ok_or_else(|| {
                        CoreError::format(path, format!("unsupported dtype {value:?}"))
                    })?)
                }
                "range" => normalized = value == "unit",
                "band_names" => band_names = value.split(',').map(str::to_string).collect(),
                _ => return Err(CoreError::format(path, format!("unknown header key {key:?}"))),
            }
        }
        let missing = |k: &str| CoreError::format(path, format!("header lacks {k}"));
        Ok(RasterHeader {
            bands: bands.ok_or_else(|| missing("bands"))?,
            height: height.ok_or_else(|| missing("height"))?,
            width: width.ok_or_else(|| missing("width"))?,
            dtype: dtype.ok_or_else(|| missing("dtype"))?,
            bit_depth: bit_depth.ok_or_else(|| missing("bit_depth"))?,
            normalized,
            band_names,
        })
    }
}

fn decode_payload(path: &Path, header: &RasterHeader, bytes: &[u8]) -> Result<RasterImage> {
    let expected = header.payload_bytes();
    if bytes.len() != expected {
        return Err(CoreError::format(
            path,
            format!(
                "payload holds {} bytes, header {}x{}x{} {} expects {expected}",
                bytes.len(),
                header.bands,
                header.height,
                header.width,
                header.dtype.name()
            ),
        ));
    }
    let data: Vec<f64> = match header.dtype {
        DType::U16 => bytes
            .chunks_exact(2)
            .map(|c| u16::from_le_bytes([c[0], c[1]]) as f64)
            .collect(),
        DType::F32 => bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
            .collect(),
        DType::F64 => bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect(),
    };
    let mut img = RasterImage::new(header.bands, header.height, header.width, data, header.bit_depth)?;
    img.band_names = header.band_names.clone();
    img.normalized = header.normalized;
    Ok(img)
}

/// Reads a native raster (header + payload).
pub fn read_raster(path: impl AsRef<Path>) -> Result<RasterImage> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| CoreError::io(path, e))?;
    let mut reader = BufReader::new(file);
    let header = RasterHeader::parse(path, &mut reader)?;
    let mut bytes = Vec::with_capacity(header.payload_bytes());
    reader.read_to_end(&mut bytes).map_err(|e| CoreError::io(path, e))?;
    decode_payload(path, &header, &bytes)
}

/// Reads a headerless planar payload described by `header`.
pub fn load_raster(path: impl AsRef<Path>, header: &RasterHeader) -> Result<RasterImage> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| CoreError::io(path, e))?;
    decode_payload(path, header, &bytes)
}

/// Writes a native raster. `u16` rounds and saturates; `f64` round-trips exactly.
pub fn write_raster(path: impl AsRef<Path>, img: &RasterImage, dtype: DType) -> Result<()> {
    let path = path.as_ref();
    let header = RasterHeader {
        bands: img.bands,
        height: img.height,
        width: img.width,
        dtype,
        bit_depth: img.bit_depth,
        normalized: img.normalized,
        band_names: img.band_names.clone(),
    };
    let mut bytes = Vec::with_capacity(header.payload_bytes() + 128);
    bytes.extend_from_slice(header.render().as_bytes());
    for &v in &img.data {
        match dtype {
            DType::U16 => bytes.extend_from_slice(&(v.round().clamp(0.0, u16::MAX as f64) as u16).to_le_bytes()),
            DType::F32 => bytes.extend_from_slice(&(v as f32).to_le_bytes()),
            DType::F64 => bytes.extend_from_slice(&v.to_le_bytes()),
        }
    }
    std::fs::write(path, bytes).map_err(|e| CoreError::io(path, e))
}

/// Contrast mapping used for 8-bit previews.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub enum Stretch {
    /// `[-1, 1]` maps linearly onto `0..=255`.
    #[default]
    Linear,
    /// Per-band 2nd..98th percentile maps onto `0..=255`.
    Percentile,
}

fn percentile(sorted: &[f64], p: f64) -> f64 {
    let pos = p * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

fn to_u8(v: f64, lo: f64, hi: f64) -> u8 {
    if hi <= lo {
        return 0;
    }
    ((v - lo) / (hi - lo) * 255.0).round().clamp(0.0, 255.0) as u8
}

/// Quantizes one or three bands to 8-bit interleaved samples.
pub fn render_8bit(img: &RasterImage, band_selection: &[usize], stretch: Stretch) -> Result<Vec<u8>> {
    if band_selection.len() != 1 && band_selection.len() != 3 {
        return Err(CoreError::Config(format!(
            "preview needs 1 or 3 bands, got {}",
            band_selection.len()
        )));
    }
    if let Some(&b) = band_selection.iter().find(|&&b| b >= img.bands) {
        return Err(CoreError::Config(format!("band index {b} out of range for {} bands", img.bands)));
    }
    let unit = to_unit(img)?;
    let ranges: Vec<(f64, f64)> = band_selection
        .iter()
        .map(|&b| match stretch {
            Stretch::Linear => (-1.0, 1.0),
            Stretch::Percentile => {
                let mut v = unit.band(b).to_vec();
                v.sort_by(f64::total_cmp);
                (percentile(&v, 0.02), percentile(&v, 0.98))
            }
        })
        .collect();
    let n = img.plane_len();
    let mut out = Vec::with_capacity(n * band_selection.len());
    for p in 0..n {
        for (&b, &(lo, hi)) in band_selection.iter().zip(&ranges) {
            out.push(to_u8(unit.band(b)[p], lo, hi));
        }
    }
    Ok(out)
}

fn write_8bit(path: &Path, width: usize, height: usize, channels: usize, pixels: &[u8]) -> Result<()> {
    let is_pgm = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("pgm"));
    let file = File::create(path).map_err(|e| CoreError::io(path, e))?;
    let mut w = BufWriter::new(file);
    if is_pgm {
        if channels != 1 {
            return Err(CoreError::Config("PGM output holds a single band".into()));
        }
        write!(w, "P5\n{width} {height}\n255\n").map_err(|e| CoreError::io(path, e))?;
        w.write_all(pixels).map_err(|e| CoreError::io(path, e))?;
        return w.flush().map_err(|e| CoreError::io(path, e));
    }
    let mut enc = png::Encoder::new(w, width as u32, height as u32);
    enc.set_color(if channels == 1 { png::ColorType::Grayscale } else { png::ColorType::Rgb });
    enc.set_depth(png::BitDepth::Eight);
    let png_err = |e: png::EncodingError| CoreError::format(path, e.to_string());
    let mut writer = enc.write_header().map_err(png_err)?;
    writer.write_image_data(pixels).map_err(png_err)?;
    writer.finish().map_err(png_err)
}

/// Writes a grayscale (1 band) or RGB (3 bands) preview; `.pgm` paths get a
/// binary PGM, anything else a PNG.
pub fn export_png8(img: &RasterImage, band_selection: &[usize], path: impl AsRef<Path>, stretch: Stretch) -> Result<()> {
    let pixels = render_8bit(img, band_selection, stretch)?;
    write_8bit(path.as_ref(), img.width, img.height, band_selection.len(), &pixels)
}

/// Black-red-yellow-white ramp; `t` is clamped to `[0, 1]`.
pub fn heat_ramp(t: f64) -> [u8; 3] {
    let t = t.clamp(0.0, 1.0);
    let ch = |v: f64| (v.clamp(0.0, 1.0) * 255.0).round() as u8;
    [ch(3.0 * t), ch(3.0 * t - 1.0), ch(3.0 * t - 2.0)]
}

/// Colour-mapped preview of a single-band non-negative map scaled by `max`
/// (zero maps to black).
pub fn export_heatmap_png(map: &RasterImage, max: f64, path: impl AsRef<Path>) -> Result<()> {
    if map.bands != 1 {
        return Err(CoreError::Config(format!("heat map needs 1 band, got {}", map.bands)));
    }
    let pixels: Vec<u8> = map
        .band(0)
        .iter()
        .flat_map(|&v| heat_ramp(if max > 0.0 { v / max } else { 0.0 }))
        .collect();
    write_8bit(path.as_ref(), map.width, map.height, 3, &pixels)
}
