//! Seeded synthetic MS/PAN scenes for tests and demos.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::raster::RasterImage;
use crate::wald::degrade;

pub const BIT_DEPTH: u32 = 11;
pub const BAND_NAMES: [&str; 4] = ["B", "G", "R", "NIR"];

/// A co-registered scene: `truth` is the full-resolution 4-band image,
/// `ms` its degraded version and `pan` the band-average at full resolution.
#[derive(Clone, Debug)]
pub struct SyntheticScene {
    pub ms: RasterImage,
    pub pan: RasterImage,
    pub truth: RasterImage,
}

struct Wave {
    fy: f64,
    fx: f64,
    phase: f64,
    amp: [f64; 4],
}

/// Builds an 11-bit scene with MS size `ms_h x ms_w` and PAN `r` times larger.
pub fn synthetic_scene(ms_h: usize, ms_w: usize, r: usize, seed: u64) -> Result<SyntheticScene> {
    let (h, w) = (ms_h * r, ms_w * r);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let waves: Vec<Wave> = (0..12)
        .map(|i| {
            // Low octaves carry most energy, a few high ones add PAN-scale detail.
            let scale = if i < 8 { 0.02 } else { 0.12 };
            Wave {
                fy: rng.random_range(-scale..scale),
                fx: rng.random_range(-scale..scale),
                phase: rng.random_range(0.0..std::f64::consts::TAU),
                amp: std::array::from_fn(|_| rng.random_range(0.02..0.07)),
            }
        })
        .collect();
    let blobs: Vec<(f64, f64, f64, [f64; 4])> = (0..6)
        .map(|_| {
            (
                rng.random_range(0.0..h as f64),
                rng.random_range(0.0..w as f64),
                rng.random_range(2.0..(h.min(w) as f64 / 6.0).max(3.0)),
                std::array::from_fn(|_| rng.random_range(-0.12..0.12)),
            )
        })
        .collect();
    let base = [0.42, 0.47, 0.5, 0.55];
    let full = 2f64.powi(BIT_DEPTH as i32) - 1.0;
    let mut truth = vec![0.0; 4 * h * w];
    for b in 0..4 {
        for y in 0..h {
            for x in 0..w {
                let (yf, xf) = (y as f64, x as f64);
                let mut v = base[b];
                for wv in &waves {
                    v += wv.amp[b] * (std::f64::consts::TAU * (wv.fy * yf + wv.fx * xf) + wv.phase).sin();
                }
                for &(cy, cx, rad, amp) in &blobs {
                    let d2 = ((yf - cy).powi(2) + (xf - cx).powi(2)) / (rad * rad);
                    v += amp[b] / (1.0 + (4.0 * (d2.sqrt() - 1.0)).exp());
                }
                truth[b * h * w + y * w + x] = (v.clamp(0.05, 0.95) * full).round();
            }
        }
    }
    let truth = RasterImage::new(4, h, w, truth, BIT_DEPTH)?.with_band_names(&BAND_NAMES);
    let pan_data = (0..h * w)
        .map(|p| ((0..4).map(|b| truth.band(b)[p]).sum::<f64>() / 4.0).round())
        .collect();
    let pan = RasterImage::new(1, h, w, pan_data, BIT_DEPTH)?.with_band_names(&["PAN"]);
    let ms = degrade(&truth, r)?.map(|v| v.round().clamp(0.0, full));
    Ok(SyntheticScene { ms, pan, truth })
}
