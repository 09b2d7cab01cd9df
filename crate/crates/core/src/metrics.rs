//! Quality indices for fused images and diagnostic maps.
//!
//! The index functions operate on raster values as given. The report
//! builders ([`reference_report`], [`no_reference_report`]) first shift
//! `[-1, 1]` data to `[0, 1]`, so mean-based indices (ERGAS, Q) see
//! nonnegative values and the PSNR/SSIM peak is 1.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::filter::gaussian_kernel;
use crate::raster::{to_unit, RasterImage};
use crate::wald::degrade;

/// Reported PSNR for identical images.
pub const PSNR_CAP_DB: f64 = 150.0;
pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const Q_BLOCK: usize = 32;

fn check(a: &RasterImage, b: &RasterImage, what: &str) -> Result<()> {
    a.check_same_geometry(b, &format!("{what}: geometry mismatch"))
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// `[-1, 1]` (or raw sensor) data mapped to `[0, 1]`.
pub fn shift_to_unit_interval(img: &RasterImage) -> Result<RasterImage> {
    let mut out = to_unit(img)?.map(|v| (v + 1.0) / 2.0);
    out.normalized = true;
    Ok(out)
}

fn band_psnr(a: &[f64], b: &[f64], peak: f64) -> f64 {
    let mse = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64;
    if mse == 0.0 {
        PSNR_CAP_DB
    } else {
        (10.0 * (peak * peak / mse).log10()).min(PSNR_CAP_DB)
    }
}

/// Per-band `10 log10(peak^2 / MSE)`, averaged; identical bands report the cap.
pub fn psnr(fused: &RasterImage, reference: &RasterImage, peak: f64) -> Result<f64> {
    Ok(mean(&psnr_per_band(fused, reference, peak)?))
}

pub fn psnr_per_band(fused: &RasterImage, reference: &RasterImage, peak: f64) -> Result<Vec<f64>> {
    check(fused, reference, "psnr")?;
    if !(peak > 0.0) {
        return Err(CoreError::Config(format!("PSNR peak {peak} must be positive")));
    }
    Ok((0..fused.bands)
        .map(|b| band_psnr(fused.band(b), reference.band(b), peak))
        .collect())
}

/// Valid-mode separable filtering of one plane.
fn filter_valid(plane: &[f64], h: usize, w: usize, k: &[f64]) -> (Vec<f64>, usize, usize) {
    let n = k.len();
    let (oh, ow) = (h + 1 - n, w + 1 - n);
    let mut tmp = vec![0.0; h * ow];
    for y in 0..h {
        for x in 0..ow {
            tmp[y * ow + x] = (0..n).map(|t| k[t] * plane[y * w + x + t]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..n).map(|t| k[t] * tmp[(y + t) * ow + x]).sum();
        }
    }
    (out, oh, ow)
}

/// Mean SSIM of one band pair (11x11 Gaussian window, sigma 1.5, valid positions).
pub fn ssim_band(a: &[f64], b: &[f64], h: usize, w: usize, dynamic_range: f64) -> f64 {
    let k = gaussian_kernel(SSIM_SIGMA, SSIM_WINDOW / 2);
    let c1 = (0.01 * dynamic_range).powi(2);
    let c2 = (0.03 * dynamic_range).powi(2);
    let prod = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(p, q)| p * q).collect::<Vec<_>>();
    let (mu_a, _, _) = filter_valid(a, h, w, &k);
    let (mu_b, _, _) = filter_valid(b, h, w, &k);
    let (aa, _, _) = filter_valid(&prod(a, a), h, w, &k);
    let (bb, _, _) = filter_valid(&prod(b, b), h, w, &k);
    let (ab, _, _) = filter_valid(&prod(a, b), h, w, &k);
    let total: f64 = (0..mu_a.len())
        .map(|i| {
            let (ma, mb) = (mu_a[i], mu_b[i]);
            let va = aa[i] - ma * ma;
            let vb = bb[i] - mb * mb;
            let cov = ab[i] - ma * mb;
            ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2))
        })
        .sum();
    total / mu_a.len() as f64
}

pub fn ssim(fused: &RasterImage, reference: &RasterImage, dynamic_range: f64) -> Result<f64> {
    Ok(mean(&ssim_per_band(fused, reference, dynamic_range)?))
}

pub fn ssim_per_band(fused: &RasterImage, reference: &RasterImage, dynamic_range: f64) -> Result<Vec<f64>> {
    check(fused, reference, "ssim")?;
    if fused.height < SSIM_WINDOW || fused.width < SSIM_WINDOW {
        return Err(CoreError::Geometry(format!(
            "ssim: {}x{} image is smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window",
            fused.height, fused.width
        )));
    }
    Ok((0..fused.bands)
        .map(|b| ssim_band(fused.band(b), reference.band(b), fused.height, fused.width, dynamic_range))
        .collect())
}

fn pixel_angle(img_a: &RasterImage, img_b: &RasterImage, p: usize) -> Option<f64> {
    let (mut na, mut nb) = (0.0, 0.0);
    for b in 0..img_a.bands {
        let (x, y) = (img_a.band(b)[p], img_b.band(b)[p]);
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return None;
    }
    // Half-angle form: exact zero for parallel spectra, unlike acos near 1.
    let (na, nb) = (na.sqrt(), nb.sqrt());
    let (mut diff, mut sum) = (0.0, 0.0);
    for b in 0..img_a.bands {
        let (u, v) = (img_a.band(b)[p] / na, img_b.band(b)[p] / nb);
        diff += (u - v) * (u - v);
        sum += (u + v) * (u + v);
    }
    Some(2.0 * diff.sqrt().atan2(sum.sqrt()))
}

/// Mean spectral angle (radians) over pixels with nonzero spectra.
pub fn sam(fused: &RasterImage, reference: &RasterImage) -> Result<f64> {
    check(fused, reference, "sam")?;
    let (mut total, mut used) = (0.0, 0usize);
    for p in 0..fused.plane_len() {
        if let Some(a) = pixel_angle(fused, reference, p) {
            total += a;
            used += 1;
        }
    }
    let skipped = fused.plane_len() - used;
    if used == 0 {
        return Err(CoreError::Numerical("sam: every pixel has a zero spectrum".into()));
    }
    if skipped > 0 {
        log::debug!("sam: skipped {skipped} zero-norm pixels");
    }
    Ok(total / used as f64)
}

/// `100 ratio sqrt(mean_b (RMSE_b / mu_b)^2)` with `mu_b` the reference band mean.
pub fn ergas(fused: &RasterImage, reference: &RasterImage, ratio: f64) -> Result<f64> {
    check(fused, reference, "ergas")?;
    let mut acc = 0.0;
    for b in 0..fused.bands {
        let (f, r) = (fused.band(b), reference.band(b));
        let mu = mean(r);
        if mu == 0.0 {
            return Err(CoreError::Numerical(format!("ergas: reference band {b} has zero mean")));
        }
        let mse = f.iter().zip(r).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / f.len() as f64;
        acc += mse / (mu * mu);
    }
    Ok(100.0 * ratio * (acc / fused.bands as f64).sqrt())
}

fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    let (ma, mb) = (mean(a), mean(b));
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 {
        None
    } else {
        Some(sab / (saa.sqrt() * sbb.sqrt()))
    }
}

pub fn cc_per_band(fused: &RasterImage, reference: &RasterImage) -> Result<Vec<f64>> {
    check(fused, reference, "cc")?;
    (0..fused.bands)
        .map(|b| {
            pearson(fused.band(b), reference.band(b))
                .ok_or_else(|| CoreError::Numerical(format!("cc: band {b} has zero variance")))
        })
        .collect()
}

/// Per-band Pearson correlation, averaged.
pub fn cc(fused: &RasterImage, reference: &RasterImage) -> Result<f64> {
    Ok(mean(&cc_per_band(fused, reference)?))
}

/// Origins of the `block x block` grid (stride = block) used by Q and Q4.
/// The block is clamped to the image size.
fn q_blocks(h: usize, w: usize, block: usize) -> (usize, Vec<(usize, usize)>) {
    let b = block.min(h).min(w).max(1);
    let rows = (h - b) / b + 1;
    let cols = (w - b) / b + 1;
    let origins = (0..rows).flat_map(|r| (0..cols).map(move |c| (r * b, c * b))).collect();
    (b, origins)
}

fn uiqi(mx: f64, my: f64, vx: f64, vy: f64, cxy: f64) -> f64 {
    let a = vx + vy;
    let m = mx * mx + my * my;
    match (a == 0.0, m == 0.0) {
        (true, true) => 1.0,
        (true, false) => 2.0 * mx * my / m,
        (false, true) => 2.0 * cxy / a,
        (false, false) => 4.0 * cxy * mx * my / (a * m),
    }
}

/// Universal image quality index of two planes, averaged over blocks.
pub fn q_index(a: &[f64], b: &[f64], h: usize, w: usize, block: usize) -> f64 {
    let (bs, origins) = q_blocks(h, w, block);
    let n = (bs * bs) as f64;
    let total: f64 = origins
        .iter()
        .map(|&(y0, x0)| {
            let (mut sx, mut sy) = (0.0, 0.0);
            for y in y0..y0 + bs {
                for x in x0..x0 + bs {
                    sx += a[y * w + x];
                    sy += b[y * w + x];
                }
            }
            let (mx, my) = (sx / n, sy / n);
            let (mut vx, mut vy, mut cxy) = (0.0, 0.0, 0.0);
            for y in y0..y0 + bs {
                for x in x0..x0 + bs {
                    let (dx, dy) = (a[y * w + x] - mx, b[y * w + x] - my);
                    vx += dx * dx;
                    vy += dy * dy;
                    cxy += dx * dy;
                }
            }
            uiqi(mx, my, vx / n, vy / n, cxy / n)
        })
        .sum();
    total / origins.len() as f64
}

type Quat = [f64; 4];

fn qmul(p: Quat, q: Quat) -> Quat {
    [
        p[0] * q[0] - p[1] * q[1] - p[2] * q[2] - p[3] * q[3],
        p[0] * q[1] + p[1] * q[0] + p[2] * q[3] - p[3] * q[2],
        p[0] * q[2] - p[1] * q[3] + p[2] * q[0] + p[3] * q[1],
        p[0] * q[3] + p[1] * q[2] - p[2] * q[1] + p[3] * q[0],
    ]
}

fn qconj(q: Quat) -> Quat {
    [q[0], -q[1], -q[2], -q[3]]
}

fn qnorm2(q: Quat) -> f64 {
    q.iter().map(|v| v * v).sum()
}

/// Quaternion quality index of two 4-band images over `block x block` tiles.
pub fn q4(fused: &RasterImage, reference: &RasterImage, block: usize) -> Result<f64> {
    check(fused, reference, "q4")?;
    if fused.bands != 4 {
        return Err(CoreError::Geometry(format!("q4 needs 4 bands, got {}", fused.bands)));
    }
    let (h, w) = (fused.height, fused.width);
    let (bs, origins) = q_blocks(h, w, block);
    let n = (bs * bs) as f64;
    let at = |img: &RasterImage, p: usize| -> Quat {
        [img.band(0)[p], img.band(1)[p], img.band(2)[p], img.band(3)[p]]
    };
    let total: f64 = origins
        .iter()
        .map(|&(y0, x0)| {
            let pixels: Vec<usize> = (y0..y0 + bs)
                .flat_map(|y| (x0..x0 + bs).map(move |x| y * w + x))
                .collect();
            let (mut mz, mut mv) = ([0.0; 4], [0.0; 4]);
            for &p in &pixels {
                let (z, v) = (at(fused, p), at(reference, p));
                for i in 0..4 {
                    mz[i] += z[i] / n;
                    mv[i] += v[i] / n;
                }
            }
            let (mut vz, mut vv, mut czv) = (0.0, 0.0, [0.0; 4]);
            for &p in &pixels {
                let (mut dz, mut dv) = (at(fused, p), at(reference, p));
                for i in 0..4 {
                    dz[i] -= mz[i];
                    dv[i] -= mv[i];
                }
                vz += qnorm2(dz);
                vv += qnorm2(dv);
                let prod = qmul(dz, qconj(dv));
                for i in 0..4 {
                    czv[i] += prod[i];
                }
            }
            let (vz, vv) = (vz / n, vv / n);
            let cov = qnorm2(czv).sqrt() / n;
            let (az, av) = (qnorm2(mz).sqrt(), qnorm2(mv).sqrt());
            uiqi(az, av, vz, vv, cov)
        })
        .sum();
    Ok(total / origins.len() as f64)
}

/// `(D_lambda, D_s, QNR)` of a full-resolution product.
pub fn qnr_suite(fused: &RasterImage, ms: &RasterImage, pan: &RasterImage, r: usize) -> Result<(f64, f64, f64)> {
    if fused.bands != ms.bands || pan.bands != 1 {
        return Err(CoreError::Geometry(format!(
            "qnr: fused has {} bands, MS {}, PAN {}",
            fused.bands, ms.bands, pan.bands
        )));
    }
    if (fused.height, fused.width) != (pan.height, pan.width)
        || (pan.height, pan.width) != (r * ms.height, r * ms.width)
    {
        return Err(CoreError::Geometry(format!(
            "qnr: fused {}x{}, PAN {}x{} and MS {}x{} are inconsistent with r = {r}",
            fused.height, fused.width, pan.height, pan.width, ms.height, ms.width
        )));
    }
    let (fh, fw) = (fused.height, fused.width);
    let (mh, mw) = (ms.height, ms.width);
    let nb = fused.bands;
    let mut d_lambda = 0.0;
    let mut pairs = 0;
    for i in 0..nb {
        for j in i + 1..nb {
            let qf = q_index(fused.band(i), fused.band(j), fh, fw, Q_BLOCK);
            let qm = q_index(ms.band(i), ms.band(j), mh, mw, Q_BLOCK);
            d_lambda += (qf - qm).abs();
            pairs += 1;
        }
    }
    let d_lambda = if pairs > 0 { d_lambda / pairs as f64 } else { 0.0 };
    let pan_low = degrade(pan, r)?;
    let d_s = (0..nb)
        .map(|b| {
            let qf = q_index(fused.band(b), pan.band(0), fh, fw, Q_BLOCK);
            let qm = q_index(ms.band(b), pan_low.band(0), mh, mw, Q_BLOCK);
            (qf - qm).abs()
        })
        .sum::<f64>()
        / nb as f64;
    Ok((d_lambda, d_s, (1.0 - d_lambda) * (1.0 - d_s)))
}

/// Per-pixel spectral angle (radians); zero-spectrum pixels map to 0.
pub fn sam_map(fused: &RasterImage, reference: &RasterImage) -> Result<RasterImage> {
    check(fused, reference, "sam_map")?;
    let data = (0..fused.plane_len())
        .map(|p| pixel_angle(fused, reference, p).unwrap_or(0.0))
        .collect();
    fused.like(1, fused.height, fused.width, data)
}

/// Sobel gradient magnitude, averaged over bands (clamped borders).
pub fn gradient_map(img: &RasterImage) -> Result<RasterImage> {
    let (h, w) = (img.height, img.width);
    let mut out = vec![0.0; h * w];
    for b in 0..img.bands {
        let plane = img.band(b);
        let px = |y: isize, x: isize| {
            plane[y.clamp(0, h as isize - 1) as usize * w + x.clamp(0, w as isize - 1) as usize]
        };
        for y in 0..h as isize {
            for x in 0..w as isize {
                let gx = (px(y - 1, x + 1) + 2.0 * px(y, x + 1) + px(y + 1, x + 1))
                    - (px(y - 1, x - 1) + 2.0 * px(y, x - 1) + px(y + 1, x - 1));
                let gy = (px(y + 1, x - 1) + 2.0 * px(y + 1, x) + px(y + 1, x + 1))
                    - (px(y - 1, x - 1) + 2.0 * px(y - 1, x) + px(y - 1, x + 1));
                out[y as usize * w + x as usize] += (gx * gx + gy * gy).sqrt() / img.bands as f64;
            }
        }
    }
    img.like(1, h, w, out)
}

/// Mean absolute difference over bands.
pub fn diff_map(a: &RasterImage, b: &RasterImage) -> Result<RasterImage> {
    check(a, b, "diff_map")?;
    let data = (0..a.plane_len())
        .map(|p| (0..a.bands).map(|k| (a.band(k)[p] - b.band(k)[p]).abs()).sum::<f64>() / a.bands as f64)
        .collect();
    a.like(1, a.height, a.width, data)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Metric {
    Psnr,
    Ssim,
    Sam,
    Ergas,
    Cc,
    Q4,
}

impl Metric {
    pub const REFERENCE: [Metric; 6] = [Metric::Psnr, Metric::Ssim, Metric::Sam, Metric::Ergas, Metric::Cc, Metric::Q4];

    pub fn all() -> BTreeSet<Metric> {
        Self::REFERENCE.into_iter().collect()
    }
}

impl FromStr for Metric {
    type Err = CoreError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "psnr" => Ok(Metric::Psnr),
            "ssim" => Ok(Metric::Ssim),
            "sam" => Ok(Metric::Sam),
            "ergas" => Ok(Metric::Ergas),
            "cc" => Ok(Metric::Cc),
            "q4" => Ok(Metric::Q4),
            other => Err(CoreError::Config(format!("unknown metric {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct BandDetail {
    pub band: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub psnr_db: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ssim: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cc: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub psnr_db: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ssim: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sam_rad: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ergas: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cc: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub q4: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub d_lambda: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub d_s: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub qnr: Option<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub per_band: Vec<BandDetail>,
}

impl MetricReport {
    fn scalars(&self) -> [(&'static str, Option<f64>); 9] {
        [
            ("psnr_db", self.psnr_db),
            ("ssim", self.ssim),
            ("sam_rad", self.sam_rad),
            ("ergas", self.ergas),
            ("cc", self.cc),
            ("q4", self.q4),
            ("d_lambda", self.d_lambda),
            ("d_s", self.d_s),
            ("qnr", self.qnr),
        ]
    }

    /// Names of the populated scalar fields.
    pub fn present(&self) -> Vec<&'static str> {
        self.scalars().iter().filter(|(_, v)| v.is_some()).map(|(k, _)| *k).collect()
    }

    /// Flat `key = value` text.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (k, v) in self.scalars() {
            if let Some(v) = v {
                let _ = writeln!(s, "{k} = {v:.6}");
            }
        }
        for d in &self.per_band {
            for (k, v) in [("psnr_db", d.psnr_db), ("ssim", d.ssim), ("cc", d.cc)] {
                if let Some(v) = v {
                    let _ = writeln!(s, "band{}.{k} = {v:.6}", d.band);
                }
            }
        }
        s
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Field-wise mean of the scalar metrics; a field is kept only if every
    /// report carries it.
    pub fn mean(reports: &[MetricReport]) -> Result<MetricReport> {
        if reports.is_empty() {
            return Err(CoreError::Config("cannot average zero metric reports".into()));
        }
        let avg = |f: fn(&MetricReport) -> Option<f64>| -> Option<f64> {
            let vals: Option<Vec<f64>> = reports.iter().map(f).collect();
            vals.map(|v| v.iter().sum::<f64>() / v.len() as f64)
        };
        Ok(MetricReport {
            psnr_db: avg(|r| r.psnr_db),
            ssim: avg(|r| r.ssim),
            sam_rad: avg(|r| r.sam_rad),
            ergas: avg(|r| r.ergas),
            cc: avg(|r| r.cc),
            q4: avg(|r| r.q4),
            d_lambda: avg(|r| r.d_lambda),
            d_s: avg(|r| r.d_s),
            qnr: avg(|r| r.qnr),
            per_band: Vec::new(),
        })
    }
}

/// Reference-mode report on `[0, 1]`-shifted data; `r` is the resolution ratio.
pub fn reference_report(fused: &RasterImage, reference: &RasterImage, r: usize, selection: &BTreeSet<Metric>) -> Result<MetricReport> {
    check(fused, reference, "reference metrics")?;
    let f = shift_to_unit_interval(fused)?;
    let g = shift_to_unit_interval(reference)?;
    let mut rep = MetricReport::default();
    let mut per_band: Vec<BandDetail> = (0..f.bands).map(|band| BandDetail { band, ..Default::default() }).collect();
    if selection.contains(&Metric::Psnr) {
        let v = psnr_per_band(&f, &g, 1.0)?;
        rep.psnr_db = Some(mean(&v));
        per_band.iter_mut().zip(v).for_each(|(d, v)| d.psnr_db = Some(v));
    }
    if selection.contains(&Metric::Ssim) {
        let v = ssim_per_band(&f, &g, 1.0)?;
        rep.ssim = Some(mean(&v));
        per_band.iter_mut().zip(v).for_each(|(d, v)| d.ssim = Some(v));
    }
    if selection.contains(&Metric::Sam) {
        rep.sam_rad = Some(sam(&f, &g)?);
    }
    if selection.contains(&Metric::Ergas) {
        rep.ergas = Some(ergas(&f, &g, 1.0 / r as f64)?);
    }
    if selection.contains(&Metric::Cc) {
        let v = cc_per_band(&f, &g)?;
        rep.cc = Some(mean(&v));
        per_band.iter_mut().zip(v).for_each(|(d, v)| d.cc = Some(v));
    }
    if selection.contains(&Metric::Q4) {
        rep.q4 = Some(q4(&f, &g, Q_BLOCK)?);
    }
    if per_band.iter().any(|d| d.psnr_db.is_some() || d.ssim.is_some() || d.cc.is_some()) {
        rep.per_band = per_band;
    }
    Ok(rep)
}

/// No-reference report (`D_lambda`, `D_s`, QNR) on `[0, 1]`-shifted data.
pub fn no_reference_report(fused: &RasterImage, ms: &RasterImage, pan: &RasterImage, r: usize) -> Result<MetricReport> {
    let f = shift_to_unit_interval(fused)?;
    let m = shift_to_unit_interval(ms)?;
    let p = shift_to_unit_interval(pan)?;
    let (d_lambda, d_s, qnr) = qnr_suite(&f, &m, &p, r)?;
    Ok(MetricReport {
        d_lambda: Some(d_lambda),
        d_s: Some(d_s),
        qnr: Some(qnr),
        ..Default::default()
    })
}
