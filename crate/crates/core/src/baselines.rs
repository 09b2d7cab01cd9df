//! Classical pan-sharpening baselines: generalized IHS, PCA and Gram-Schmidt
//! component substitution, and MTF-matched GLP with high-pass modulation.
//!
//! Inputs are `[-1, 1]` rasters; the computations run on data shifted to
//! `[0, 1]` and results are shifted back.

use messfn_tensor::{resize_planes, Scale};
use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{CoreError, Result};
use crate::filter::{gaussian_kernel, separable_filter};
use crate::raster::{to_unit, RasterImage};

/// Bicubic-upsampled MS co-registered with the PAN band.
#[derive(Clone, Debug)]
pub struct FusionInput {
    pub ms_up: RasterImage,
    pub pan: RasterImage,
    pub r: usize,
}

impl FusionInput {
    /// Upsamples a low-resolution MS image by `r` to the PAN grid.
    pub fn new(ms_lr: &RasterImage, pan: &RasterImage, r: usize) -> Result<Self> {
        if pan.bands != 1 || pan.height != r * ms_lr.height || pan.width != r * ms_lr.width {
            return Err(CoreError::Geometry(format!(
                "PAN {}x{}x{} does not match r = {r} times MS {}x{}",
                pan.bands, pan.height, pan.width, ms_lr.height, ms_lr.width
            )));
        }
        let ms = to_unit(ms_lr)?;
        let (data, h, w) = resize_planes(&ms.data, ms.bands, ms.height, ms.width, Scale::up(r))?;
        Ok(FusionInput {
            ms_up: ms.like(ms.bands, h, w, data)?,
            pan: to_unit(pan)?,
            r,
        })
    }

    pub fn from_upsampled(ms_up: RasterImage, pan: RasterImage, r: usize) -> Result<Self> {
        if pan.bands != 1 || pan.height != ms_up.height || pan.width != ms_up.width {
            return Err(CoreError::Geometry(format!(
                "PAN {}x{}x{} is not co-registered with MS {}x{}",
                pan.bands, pan.height, pan.width, ms_up.height, ms_up.width
            )));
        }
        Ok(FusionInput {
            ms_up: to_unit(&ms_up)?,
            pan: to_unit(&pan)?,
            r,
        })
    }

    fn shifted(&self) -> (Vec<Vec<f64>>, Vec<f64>) {
        let bands = (0..self.ms_up.bands)
            .map(|b| self.ms_up.band(b).iter().map(|v| (v + 1.0) / 2.0).collect())
            .collect();
        let pan = self.pan.band(0).iter().map(|v| (v + 1.0) / 2.0).collect();
        (bands, pan)
    }

    fn unshift(&self, bands: Vec<Vec<f64>>) -> RasterImage {
        let data = bands.into_iter().flatten().map(|v| 2.0 * v - 1.0).collect();
        self.ms_up
            .like(self.ms_up.bands, self.ms_up.height, self.ms_up.width, data)
            .expect("same geometry")
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Baseline {
    Ihs,
    Pca,
    Gs,
    MtfGlpHpm,
}

impl std::str::FromStr for Baseline {
    type Err = CoreError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ihs" => Ok(Baseline::Ihs),
            "pca" => Ok(Baseline::Pca),
            "gs" => Ok(Baseline::Gs),
            "mtf-glp-hpm" | "mtf_glp_hpm" => Ok(Baseline::MtfGlpHpm),
            _ => Err(CoreError::Config(format!(
                "unknown baseline {s:?} (expected ihs, pca, gs or mtf-glp-hpm)"
            ))),
        }
    }
}

impl Baseline {
    pub fn fuse(self, inp: &FusionInput) -> Result<RasterImage> {
        match self {
            Baseline::Ihs => ihs_fuse(inp),
            Baseline::Pca => pca_fuse(inp),
            Baseline::Gs => gs_fuse(inp),
            Baseline::MtfGlpHpm => mtf_glp_hpm_fuse(inp),
        }
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn covariance(a: &[f64], b: &[f64]) -> f64 {
    let (ma, mb) = (mean(a), mean(b));
    a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum::<f64>() / a.len() as f64
}

fn band_mean(bands: &[Vec<f64>]) -> Vec<f64> {
    let n = bands.len() as f64;
    (0..bands[0].len())
        .map(|i| bands.iter().map(|b| b[i]).sum::<f64>() / n)
        .collect()
}

/// Affine map giving `src` the mean and standard deviation of `reference`.
/// A constant `src` yields the constant reference mean.
pub fn hist_match(src: &[f64], reference: &[f64]) -> Vec<f64> {
    let (ms, mr) = (mean(src), mean(reference));
    let ss = covariance(src, src).sqrt();
    let sr = covariance(reference, reference).sqrt();
    if ss <= f64::EPSILON * ms.abs().max(1.0) {
        log::warn!("histogram matching of a constant band; returning the reference mean");
        return vec![mr; src.len()];
    }
    let gain = sr / ss;
    src.iter().map(|&v| (v - ms) * gain + mr).collect()
}

/// Generalized additive IHS: every band receives `P' - I`.
pub fn ihs_fuse(inp: &FusionInput) -> Result<RasterImage> {
    let (bands, pan) = inp.shifted();
    let intensity = band_mean(&bands);
    let matched = hist_match(&pan, &intensity);
    let out = bands
        .into_iter()
        .map(|b| {
            b.iter()
                .zip(matched.iter().zip(&intensity))
                .map(|(&v, (&p, &i))| v + p - i)
                .collect()
        })
        .collect();
    Ok(inp.unshift(out))
}

/// Principal-component basis of the band vectors.
#[derive(Clone, Debug)]
pub struct PcaBasis {
    pub mean: Vec<f64>,
    /// Eigenvectors as columns, ordered by decreasing eigenvalue.
    pub vectors: DMatrix<f64>,
    pub variances: Vec<f64>,
}

impl PcaBasis {
    pub fn fit(bands: &[Vec<f64>]) -> Result<Self> {
        let nb = bands.len();
        let mean: Vec<f64> = bands.iter().map(|b| self::mean(b)).collect();
        let cov = DMatrix::from_fn(nb, nb, |i, j| covariance(&bands[i], &bands[j]));
        let eig = SymmetricEigen::new(cov);
        let mut order: Vec<usize> = (0..nb).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
        let largest = eig.eigenvalues[order[0]];
        let smallest = eig.eigenvalues[order[nb - 1]];
        if !(largest > 0.0) || smallest <= 1e-12 * largest {
            return Err(CoreError::Numerical(format!(
                "band covariance is rank-deficient (eigenvalues {largest:e} .. {smallest:e})"
            )));
        }
        let mut vectors = DMatrix::zeros(nb, nb);
        for (col, &k) in order.iter().enumerate() {
            let mut v = eig.eigenvectors.column(k).clone_owned();
            if v.sum() < 0.0 {
                v = -v;
            }
            vectors.set_column(col, &v);
        }
        Ok(PcaBasis {
            mean,
            vectors,
            variances: order.iter().map(|&k| eig.eigenvalues[k]).collect(),
        })
    }

    pub fn forward(&self, bands: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let nb = bands.len();
        let n = bands[0].len();
        (0..nb)
            .map(|pc| {
                (0..n)
                    .map(|i| (0..nb).map(|b| (bands[b][i] - self.mean[b]) * self.vectors[(b, pc)]).sum())
                    .collect()
            })
            .collect()
    }

    pub fn inverse(&self, pcs: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let nb = pcs.len();
        let n = pcs[0].len();
        (0..nb)
            .map(|b| {
                (0..n)
                    .map(|i| self.mean[b] + (0..nb).map(|pc| pcs[pc][i] * self.vectors[(b, pc)]).sum::<f64>())
                    .collect()
            })
            .collect()
    }
}

/// PCA substitution; with `substitute = false` the first component is kept.
pub fn pca_fuse_with(inp: &FusionInput, substitute: bool) -> Result<RasterImage> {
    let (bands, pan) = inp.shifted();
    let basis = PcaBasis::fit(&bands)?;
    let mut pcs = basis.forward(&bands);
    if substitute {
        pcs[0] = hist_match(&pan, &pcs[0]);
    }
    Ok(inp.unshift(basis.inverse(&pcs)))
}

pub fn pca_fuse(inp: &FusionInput) -> Result<RasterImage> {
    pca_fuse_with(inp, true)
}

/// Gram-Schmidt decomposition seeded with the mean-band intensity.
#[derive(Clone, Debug)]
pub struct GsBasis {
    pub means: Vec<f64>,
    /// Zero-mean components; `components[0]` is the intensity.
    pub components: Vec<Vec<f64>>,
    /// `coeffs[b][j]`: projection of band `b` on component `j <= b`.
    pub coeffs: Vec<Vec<f64>>,
}

impl GsBasis {
    pub fn fit(bands: &[Vec<f64>]) -> Result<Self> {
        let intensity = band_mean(bands);
        let mi = mean(&intensity);
        let gs1: Vec<f64> = intensity.iter().map(|v| v - mi).collect();
        let var1 = covariance(&gs1, &gs1);
        if var1 <= 1e-20 {
            return Err(CoreError::Numerical("synthetic intensity has zero variance".into()));
        }
        let mut components = vec![gs1];
        let mut coeffs = Vec::with_capacity(bands.len());
        let means: Vec<f64> = bands.iter().map(|b| mean(b)).collect();
        for (b, band) in bands.iter().enumerate() {
            let centered: Vec<f64> = band.iter().map(|v| v - means[b]).collect();
            let mut residual = centered.clone();
            let mut phi = Vec::with_capacity(components.len());
            for comp in &components {
                let var = covariance(comp, comp);
                let c = if var > 1e-20 { covariance(&centered, comp) / var } else { 0.0 };
                residual.iter_mut().zip(comp).for_each(|(r, &g)| *r -= c * g);
                phi.push(c);
            }
            coeffs.push(phi);
            components.push(residual);
        }
        Ok(GsBasis {
            means,
            components,
            coeffs,
        })
    }

    /// Rebuilds the bands from (possibly modified) components.
    pub fn inverse(&self, components: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let n = components[0].len();
        self.coeffs
            .iter()
            .enumerate()
            .map(|(b, phi)| {
                (0..n)
                    .map(|i| {
                        self.means[b]
                            + components[b + 1][i]
                            + phi.iter().zip(components).map(|(c, comp)| c * comp[i]).sum::<f64>()
                    })
                    .collect()
            })
            .collect()
    }
}

/// Gram-Schmidt substitution with an unweighted band-mean intensity.
pub fn gs_fuse(inp: &FusionInput) -> Result<RasterImage> {
    let (bands, pan) = inp.shifted();
    let basis = GsBasis::fit(&bands)?;
    let intensity = band_mean(&bands);
    let matched = hist_match(&pan, &intensity);
    let mm = mean(&matched);
    let mut comps = basis.components.clone();
    comps[0] = matched.iter().map(|v| v - mm).collect();
    Ok(inp.unshift(basis.inverse(&comps)))
}

/// Nyquist gain of the MTF-matched Gaussian.
pub const MTF_NYQUIST_GAIN: f64 = 0.3;

/// Standard deviation (PAN pixels) of the Gaussian whose response at the
/// MS Nyquist frequency `1 / (2 r)` equals `gain`.
pub fn mtf_sigma(r: usize, gain: f64) -> f64 {
    r as f64 * (-2.0 * gain.ln()).sqrt() / std::f64::consts::PI
}

pub fn mtf_kernel(r: usize, gain: f64) -> Vec<f64> {
    let sigma = mtf_sigma(r, gain);
    gaussian_kernel(sigma, (4.0 * sigma).ceil() as usize)
}

/// MTF low-pass, decimation by `r` and bicubic re-expansion of one plane.
pub fn mtf_lowpass(plane: &[f64], height: usize, width: usize, r: usize) -> Result<Vec<f64>> {
    let smooth = separable_filter(plane, height, width, &mtf_kernel(r, MTF_NYQUIST_GAIN));
    let (low, lh, lw) = resize_planes(&smooth, 1, height, width, Scale::down(r))?;
    Ok(resize_planes(&low, 1, lh, lw, Scale::up(r))?.0)
}

/// Guard below which the modulation ratio is not applied.
pub const HPM_EPSILON: f64 = 1e-6;

/// High-pass modulation: `out_b = ms_b * PAN / PAN_low`.
pub fn mtf_glp_hpm_fuse(inp: &FusionInput) -> Result<RasterImage> {
    let (bands, pan) = inp.shifted();
    let low = mtf_lowpass(&pan, inp.pan.height, inp.pan.width, inp.r)?;
    let out = bands
        .into_iter()
        .map(|b| {
            b.iter()
                .zip(pan.iter().zip(&low))
                .map(|(&m, (&p, &pl))| if pl.abs() < HPM_EPSILON { m } else { m * p / pl })
                .collect()
        })
        .collect();
    Ok(inp.unshift(out))
}
