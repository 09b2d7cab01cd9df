//! End-to-end acceptance suite. Prints one PASS/FAIL line per criterion and
//! exits non-zero when any criterion fails or exceeds its time budget.

use std::collections::BTreeSet;
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use messfn_cli::{cmd_simulate, cmd_synth, cmd_train, SimulateArgs, SynthArgs, TrainArgs};
use messfn_core::baselines::{ihs_fuse, mtf_glp_hpm_fuse, pca_fuse_with, FusionInput};
use messfn_core::metrics::{self, Metric, PSNR_CAP_DB, Q_BLOCK};
use messfn_core::net::blocks::*;
use messfn_core::net::{forward, raster_batch, tensor_rasters, Ablation, MessfnConfig, MessfnWeights};
use messfn_core::raster::RasterImage;
use messfn_core::synthetic::synthetic_scene;
use messfn_core::trainer::{self, TrainConfig, TrainOptions};
use messfn_core::wald::{make_dataset, DatasetManifest, WaldConfig};
use messfn_tensor::{
    grad_check, grad_check_params, ConvSpec, GradCheckConfig, GradCheckReport, ParamStore, Scale, Tape, Tensor,
    TensorError, Var,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const PARAMS_B9_C64: usize = 1_900_069;

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn fail<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn random_tensor(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

fn image(bands: usize, h: usize, w: usize, lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> RasterImage {
    let mut img = RasterImage::new(bands, h, w, (0..bands * h * w).map(|_| rng.random_range(lo..hi)).collect(), 11).unwrap();
    img.normalized = true;
    img
}

// ---------------------------------------------------------------- gradients

fn weighted(tape: &mut Tape<f64>, out: Var, seed: u64) -> messfn_tensor::Result<Var> {
    let mut r = rng(seed ^ 0xacce);
    let w = random_tensor(tape.shape(out), &mut r);
    let w = tape.constant(w)?;
    let p = tape.mul(out, w)?;
    tape.sum(p)
}

fn tensor_err(e: messfn_core::CoreError) -> TensorError {
    TensorError::Config(e.to_string())
}

fn passed(label: &str, rep: GradCheckReport) -> Result<f64, String> {
    ensure(rep.passed, || format!("{label}: {rep:?}"))?;
    Ok(rep.max_rel_error)
}

type OpFn = fn(&mut Tape<f64>, &[Var]) -> messfn_tensor::Result<Var>;
type BlockFn = fn(&mut Tape<f64>, &ParamStore<f64>, &str, Var) -> messfn_core::Result<Var>;
type Declare = fn(&mut Vec<ParamDecl>);

fn block_store(declare: Declare, seed: u64) -> ParamStore<f64> {
    let mut r = rng(seed);
    let mut decls = Vec::new();
    declare(&mut decls);
    let mut store = ParamStore::new();
    for (name, shape, fan_in) in decls {
        let n: usize = shape.iter().product();
        let s = fan_in.map_or(0.3, |f| (2.0 / f as f64).sqrt());
        store.add(name, Tensor::new(shape, (0..n).map(|_| r.random_range(-1.7..1.7) * s).collect()).unwrap()).unwrap();
    }
    store
}

fn gradient_suite() -> Outcome {
    let ops: Vec<(&str, Vec<Vec<usize>>, OpFn)> = vec![
        ("add", vec![vec![1, 3, 4, 4], vec![1, 3, 4, 4]], |t, v| t.add(v[0], v[1])),
        ("mul", vec![vec![1, 3, 4, 4], vec![1, 3, 4, 4]], |t, v| t.mul(v[0], v[1])),
        ("sum", vec![vec![1, 2, 3, 3]], |t, v| t.sum(v[0])),
        ("relu", vec![vec![1, 4, 3, 3]], |t, v| t.relu(v[0])),
        ("sigmoid", vec![vec![1, 4, 3, 3]], |t, v| t.sigmoid(v[0])),
        ("tanh", vec![vec![1, 4, 3, 3]], |t, v| t.tanh(v[0])),
        ("conv2d", vec![vec![2, 3, 6, 5], vec![4, 3, 3, 3], vec![4]], |t, v| {
            t.conv2d(v[0], v[1], Some(v[2]), ConvSpec::same(3, 4, 3))
        }),
        ("conv2d_5x1", vec![vec![1, 2, 7, 6], vec![2, 2, 5, 1]], |t, v| {
            t.conv2d(v[0], v[1], None, ConvSpec::same_rect(2, 2, 5, 1).without_bias())
        }),
        ("conv1d", vec![vec![2, 1, 6], vec![3]], |t, v| t.conv1d(v[0], v[1])),
        ("bicubic", vec![vec![1, 2, 3, 4]], |t, v| t.bicubic_resize(v[0], Scale::up(4))),
        ("gap", vec![vec![2, 4, 5, 5]], |t, v| t.global_avg_pool(v[0])),
        ("gvp", vec![vec![2, 4, 5, 5]], |t, v| t.global_var_pool(v[0])),
        ("channel_mean", vec![vec![1, 4, 5, 5]], |t, v| t.channel_mean(v[0])),
        ("concat", vec![vec![1, 2, 3, 3], vec![1, 3, 3, 3]], |t, v| t.concat_channels(&[v[0], v[1]])),
        ("mul_channel", vec![vec![2, 4, 3, 3], vec![2, 4]], |t, v| t.mul_channel(v[0], v[1])),
        ("mul_spatial", vec![vec![1, 4, 3, 3], vec![1, 1, 3, 3]], |t, v| t.mul_spatial(v[0], v[1])),
        ("reshape", vec![vec![2, 4]], |t, v| t.reshape(v[0], vec![2, 1, 4])),
        ("l1", vec![vec![1, 2, 3, 3], vec![1, 2, 3, 3]], |t, v| t.l1_loss(v[0], v[1])),
    ];
    let mut worst = 0.0f64;
    let mut checks = 0;
    for (name, shapes, op) in &ops {
        for seed in 0..20u64 {
            let mut r = rng(seed * 131 + 1);
            let inputs: Vec<Tensor<f64>> = shapes.iter().map(|s| random_tensor(s, &mut r)).collect();
            let rep = grad_check(
                |t, v| {
                    let y = op(t, v)?;
                    weighted(t, y, seed)
                },
                &inputs,
                &GradCheckConfig::default(),
            )
            .map_err(fail)?;
            worst = worst.max(passed(&format!("{name} seed {seed}"), rep)?);
            checks += 1;
        }
    }

    // Relu-heavy graphs use a finer step so kinks rarely fall inside it.
    let fine = GradCheckConfig { rel_step: 1e-6, ..Default::default() };
    let blocks: [(&str, Declare, BlockFn, GradCheckConfig); 3] = [
        ("rsab", |d| declare_rsab(d, "blk.", 4, 3), rsab_forward, GradCheckConfig::default()),
        ("rmsab", |d| declare_rmsab(d, "blk.", 4, 3), rmsab_forward, fine.clone()),
        ("ss-rb", |d| declare_rb(d, "blk.", 4), rb_forward, GradCheckConfig::default()),
    ];
    for (label, declare, block, gc) in blocks {
        for seed in 0..20u64 {
            let mut r = rng(1000 + seed);
            let x = random_tensor(&[1, 4, 5, 6], &mut r);
            let mut store = block_store(declare, seed);
            let rep = grad_check_params(
                &mut store,
                |tape, s| {
                    let xv = tape.constant(x.clone())?;
                    let y = block(tape, s, "blk.", xv).map_err(tensor_err)?;
                    weighted(tape, y, seed)
                },
                &gc,
            )
            .map_err(fail)?;
            worst = worst.max(passed(&format!("{label} params seed {seed}"), rep)?);
            let frozen = store.clone();
            let rep = grad_check(
                |tape, xs| {
                    let y = block(tape, &frozen, "blk.", xs[0]).map_err(tensor_err)?;
                    weighted(tape, y, seed)
                },
                std::slice::from_ref(&x),
                &gc,
            )
            .map_err(fail)?;
            worst = worst.max(passed(&format!("{label} input seed {seed}"), rep)?);
            checks += 2;
        }
    }

    let cfg = MessfnConfig::new(2, 8);
    for seed in 0..20u64 {
        let mut r = rng(5000 + seed);
        let ms = random_tensor(&[1, 4, 8, 8], &mut r);
        let pan = random_tensor(&[1, 1, 32, 32], &mut r);
        let mut w = MessfnWeights::<f64>::init(&cfg, seed).map_err(fail)?;
        let rep = grad_check_params(
            &mut w.params,
            |tape, s| {
                let m = tape.constant(ms.clone())?;
                let p = tape.constant(pan.clone())?;
                let out = forward(tape, &cfg, s, m, p).map_err(tensor_err)?;
                weighted(tape, out, seed)
            },
            &fine.clone().sampled(2, seed),
        )
        .map_err(fail)?;
        worst = worst.max(passed(&format!("network params seed {seed}"), rep)?);
        let store = w.params.clone();
        let rep = grad_check(
            |tape, xs| {
                let out = forward(tape, &cfg, &store, xs[0], xs[1]).map_err(tensor_err)?;
                weighted(tape, out, seed)
            },
            &[ms.clone(), pan.clone()],
            &fine.clone().sampled(24, seed),
        )
        .map_err(fail)?;
        worst = worst.max(passed(&format!("network inputs seed {seed}"), rep)?);
        checks += 2;
    }
    Ok(format!("{checks} checks, max rel err {worst:.2e}"))
}

// ----------------------------------------------------------- metric identity

fn identity_suite() -> Outcome {
    let mut r = rng(2);
    for i in 0..10 {
        let x = image(4, 48, 40, 0.02, 1.0, &mut r);
        let p = metrics::psnr(&x, &x, 1.0).map_err(fail)?;
        let s = metrics::ssim(&x, &x, 1.0).map_err(fail)?;
        let a = metrics::sam(&x, &x).map_err(fail)?;
        let e = metrics::ergas(&x, &x, 0.25).map_err(fail)?;
        let c = metrics::cc(&x, &x).map_err(fail)?;
        let q = metrics::q4(&x, &x, Q_BLOCK).map_err(fail)?;
        ensure(p == PSNR_CAP_DB, || format!("image {i}: psnr {p}"))?;
        ensure((s - 1.0).abs() <= 1e-9, || format!("image {i}: ssim {s}"))?;
        ensure(a.abs() <= 1e-12, || format!("image {i}: sam {a}"))?;
        ensure(e == 0.0, || format!("image {i}: ergas {e}"))?;
        ensure((c - 1.0).abs() <= 1e-12, || format!("image {i}: cc {c}"))?;
        ensure((q - 1.0).abs() <= 1e-9, || format!("image {i}: q4 {q}"))?;

        let fused = image(4, 64, 64, 0.0, 1.0, &mut r);
        let ms = image(4, 16, 16, 0.0, 1.0, &mut r);
        let pan = image(1, 64, 64, 0.0, 1.0, &mut r);
        let (dl, ds, qnr) = metrics::qnr_suite(&fused, &ms, &pan, 4).map_err(fail)?;
        ensure(qnr == (1.0 - dl) * (1.0 - ds), || format!("image {i}: qnr {qnr} vs ({dl}, {ds})"))?;
    }
    Ok("10 images".into())
}

// ------------------------------------------------------------------ oracles

fn conv_oracle(x: &Tensor<f64>, w: &Tensor<f64>, b: &[f64], pad: usize) -> Vec<f64> {
    let (n, c, h, wd) = x.dims4().unwrap();
    let (o, _, kh, kw) = w.dims4().unwrap();
    let (xd, wdat) = (x.data(), w.data());
    let mut out = Vec::with_capacity(n * o * h * wd);
    for ni in 0..n {
        for oi in 0..o {
            for y in 0..h {
                for xx in 0..wd {
                    let mut acc = b[oi];
                    for ci in 0..c {
                        for i in 0..kh {
                            for j in 0..kw {
                                let (sy, sx) = (y as isize + i as isize - pad as isize, xx as isize + j as isize - pad as isize);
                                if sy >= 0 && sx >= 0 && (sy as usize) < h && (sx as usize) < wd {
                                    acc += wdat[((oi * c + ci) * kh + i) * kw + j]
                                        * xd[((ni * c + ci) * h + sy as usize) * wd + sx as usize];
                                }
                            }
                        }
                    }
                    out.push(acc);
                }
            }
        }
    }
    out
}

fn gvp_oracle(x: &Tensor<f64>) -> Vec<f64> {
    let (n, c, h, w) = x.dims4().unwrap();
    let d = x.data();
    let mut out = Vec::new();
    for ni in 0..n {
        for p in 0..h * w {
            let vals: Vec<f64> = (0..c).map(|ci| d[(ni * c + ci) * h * w + p]).collect();
            let m = vals.iter().sum::<f64>() / c as f64;
            out.push(vals.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / c as f64);
        }
    }
    out
}

fn ssim_oracle(a: &[f64], b: &[f64], h: usize, w: usize) -> f64 {
    let mut win = [[0.0; 11]; 11];
    let mut total = 0.0;
    for (i, row) in win.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            let (dy, dx) = (i as f64 - 5.0, j as f64 - 5.0);
            *v = (-(dy * dy + dx * dx) / 4.5).exp();
            total += *v;
        }
    }
    let (c1, c2) = (1e-4, 9e-4);
    let mut sum = 0.0;
    let mut count = 0.0;
    for y in 0..=h - 11 {
        for x in 0..=w - 11 {
            let at = |img: &[f64], i: usize, j: usize| img[(y + i) * w + x + j];
            let (mut ma, mut mb) = (0.0, 0.0);
            for i in 0..11 {
                for j in 0..11 {
                    ma += win[i][j] / total * at(a, i, j);
                    mb += win[i][j] / total * at(b, i, j);
                }
            }
            let (mut va, mut vb, mut cv) = (0.0, 0.0, 0.0);
            for i in 0..11 {
                for j in 0..11 {
                    let g = win[i][j] / total;
                    let (da, db) = (at(a, i, j) - ma, at(b, i, j) - mb);
                    va += g * da * da;
                    vb += g * db * db;
                    cv += g * da * db;
                }
            }
            sum += (2.0 * ma * mb + c1) * (2.0 * cv + c2) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
            count += 1.0;
        }
    }
    sum / count
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

fn qnorm2(q: Quat) -> f64 {
    q.iter().map(|v| v * v).sum()
}

fn q4_block(f: &RasterImage, g: &RasterImage, y0: usize, x0: usize, bs: usize) -> f64 {
    let pix = |m: &RasterImage, y: usize, x: usize| -> Quat { std::array::from_fn(|b| m.band(b)[y * m.width + x]) };
    let n = (bs * bs) as f64;
    let (mut mf, mut mg) = ([0.0; 4], [0.0; 4]);
    for y in y0..y0 + bs {
        for x in x0..x0 + bs {
            for b in 0..4 {
                mf[b] += pix(f, y, x)[b] / n;
                mg[b] += pix(g, y, x)[b] / n;
            }
        }
    }
    let (mut cov, mut vf, mut vg) = ([0.0; 4], 0.0, 0.0);
    for y in y0..y0 + bs {
        for x in x0..x0 + bs {
            let df: Quat = std::array::from_fn(|b| pix(f, y, x)[b] - mf[b]);
            let dg: Quat = std::array::from_fn(|b| pix(g, y, x)[b] - mg[b]);
            let prod = qmul(df, [dg[0], -dg[1], -dg[2], -dg[3]]);
            for b in 0..4 {
                cov[b] += prod[b] / n;
            }
            vf += qnorm2(df) / n;
            vg += qnorm2(dg) / n;
        }
    }
    let (nf, ng) = (qnorm2(mf), qnorm2(mg));
    4.0 * qnorm2(cov).sqrt() * nf.sqrt() * ng.sqrt() / ((vf + vg) * (nf + ng))
}

fn q4_oracle(f: &RasterImage, g: &RasterImage, bs: usize) -> f64 {
    let mut vals = Vec::new();
    for y0 in (0..=f.height - bs).step_by(bs) {
        for x0 in (0..=f.width - bs).step_by(bs) {
            vals.push(q4_block(f, g, y0, x0, bs));
        }
    }
    vals.iter().sum::<f64>() / vals.len() as f64
}

fn uiqi_oracle(a: &[f64], b: &[f64], h: usize, w: usize) -> f64 {
    let bs = Q_BLOCK.min(h).min(w);
    let mut vals = Vec::new();
    for y0 in (0..=h - bs).step_by(bs) {
        for x0 in (0..=w - bs).step_by(bs) {
            let idx: Vec<usize> = (y0..y0 + bs).flat_map(|y| (x0..x0 + bs).map(move |x| y * w + x)).collect();
            let n = idx.len() as f64;
            let ma = idx.iter().map(|&i| a[i]).sum::<f64>() / n;
            let mb = idx.iter().map(|&i| b[i]).sum::<f64>() / n;
            let va = idx.iter().map(|&i| (a[i] - ma).powi(2)).sum::<f64>() / n;
            let vb = idx.iter().map(|&i| (b[i] - mb).powi(2)).sum::<f64>() / n;
            let c = idx.iter().map(|&i| (a[i] - ma) * (b[i] - mb)).sum::<f64>() / n;
            vals.push(4.0 * c * ma * mb / ((va + vb) * (ma * ma + mb * mb)));
        }
    }
    vals.iter().sum::<f64>() / vals.len() as f64
}

fn keys(x: f64) -> f64 {
    let x = x.abs();
    if x <= 1.0 {
        1.5 * x.powi(3) - 2.5 * x * x + 1.0
    } else if x < 2.0 {
        -0.5 * x.powi(3) + 2.5 * x * x - 4.0 * x + 2.0
    } else {
        0.0
    }
}

/// Gaussian blur (sigma r/2, radius 2r, clamped) and bicubic decimation by r.
fn degrade_oracle(plane: &[f64], h: usize, w: usize, r: usize) -> Vec<f64> {
    let sigma = r as f64 / 2.0;
    let rad = 2 * r as isize;
    let clamp = |y: isize, x: isize| y.clamp(0, h as isize - 1) as usize * w + x.clamp(0, w as isize - 1) as usize;
    let mut norm = 0.0;
    for dy in -rad..=rad {
        for dx in -rad..=rad {
            norm += (-((dy * dy + dx * dx) as f64) / (2.0 * sigma * sigma)).exp();
        }
    }
    let mut blur = vec![0.0; h * w];
    for y in 0..h as isize {
        for x in 0..w as isize {
            let mut acc = 0.0;
            for dy in -rad..=rad {
                for dx in -rad..=rad {
                    acc += (-((dy * dy + dx * dx) as f64) / (2.0 * sigma * sigma)).exp() * plane[clamp(y + dy, x + dx)];
                }
            }
            blur[y as usize * w + x as usize] = acc / norm;
        }
    }
    let mut out = Vec::new();
    for oy in 0..h / r {
        for ox in 0..w / r {
            let sy = (oy as f64 + 0.5) * r as f64 - 0.5;
            let sx = (ox as f64 + 0.5) * r as f64 - 0.5;
            let (fy, fx) = (sy.floor() as isize, sx.floor() as isize);
            let mut acc = 0.0;
            for ty in fy - 1..=fy + 2 {
                for tx in fx - 1..=fx + 2 {
                    acc += keys(sy - ty as f64) * keys(sx - tx as f64) * blur[clamp(ty, tx)];
                }
            }
            out.push(acc);
        }
    }
    out
}

fn qnr_oracle(f: &RasterImage, ms: &RasterImage, pan: &RasterImage, r: usize) -> (f64, f64, f64) {
    let mut dl = 0.0;
    let mut pairs = 0.0;
    for i in 0..4 {
        for j in i + 1..4 {
            dl += (uiqi_oracle(f.band(i), f.band(j), f.height, f.width)
                - uiqi_oracle(ms.band(i), ms.band(j), ms.height, ms.width))
            .abs();
            pairs += 1.0;
        }
    }
    let low = degrade_oracle(pan.band(0), pan.height, pan.width, r);
    let mut ds = 0.0;
    for b in 0..4 {
        ds += (uiqi_oracle(f.band(b), pan.band(0), f.height, f.width) - uiqi_oracle(ms.band(b), &low, ms.height, ms.width))
            .abs();
    }
    let (dl, ds) = (dl / pairs, ds / 4.0);
    (dl, ds, (1.0 - dl) * (1.0 - ds))
}

fn oracle_suite() -> Outcome {
    let mut r = rng(3);
    let mut worst = [0.0f64; 5];

    for _ in 0..3 {
        let x = random_tensor(&[2, 3, 16, 16], &mut r);
        let w = random_tensor(&[5, 3, 3, 3], &mut r);
        let b = random_tensor(&[5], &mut r);
        let mut tape = Tape::new();
        let (xv, wv, bv) = (
            tape.constant(x.clone()).map_err(fail)?,
            tape.constant(w.clone()).map_err(fail)?,
            tape.constant(b.clone()).map_err(fail)?,
        );
        let y = tape.conv2d(xv, wv, Some(bv), ConvSpec::same(3, 5, 3)).map_err(fail)?;
        let expect = conv_oracle(&x, &w, b.data(), 1);
        worst[0] = tape.value(y).data().iter().zip(&expect).map(|(a, e)| (a - e).abs()).fold(worst[0], f64::max);

        let g = random_tensor(&[2, 7, 12, 10], &mut r);
        let gv = tape.constant(g.clone()).map_err(fail)?;
        let v = tape.global_var_pool(gv).map_err(fail)?;
        worst[1] = tape.value(v).data().iter().zip(&gvp_oracle(&g)).map(|(a, e)| (a - e).abs()).fold(worst[1], f64::max);
    }

    for _ in 0..2 {
        let x = image(4, 64, 64, 0.0, 1.0, &mut r);
        let mut y = x.clone();
        y.data.iter_mut().for_each(|v| *v = (*v + r.random_range(-0.2..0.2)).clamp(0.0, 1.0));
        let got = metrics::ssim_per_band(&y, &x, 1.0).map_err(fail)?;
        for (b, g) in got.iter().enumerate() {
            worst[2] = worst[2].max((g - ssim_oracle(y.band(b), x.band(b), 64, 64)).abs());
        }
        let q = metrics::q4(&y, &x, Q_BLOCK).map_err(fail)?;
        worst[3] = worst[3].max((q - q4_oracle(&y, &x, Q_BLOCK)).abs());
    }

    let truth = image(4, 64, 64, 0.1, 0.9, &mut r);
    let ms = RasterImage {
        height: 16,
        width: 16,
        data: (0..4).flat_map(|b| degrade_oracle(truth.band(b), 64, 64, 4)).collect(),
        ..truth.clone()
    };
    let pan_data: Vec<f64> = (0..64 * 64).map(|p| (0..4).map(|b| truth.band(b)[p]).sum::<f64>() / 4.0).collect();
    let pan = RasterImage { bands: 1, data: pan_data, band_names: Vec::new(), ..truth.clone() };
    let fused = truth.map(|v| v + 0.03 * (v * 91.0).sin());
    let got = metrics::qnr_suite(&fused, &ms, &pan, 4).map_err(fail)?;
    let exp = qnr_oracle(&fused, &ms, &pan, 4);
    worst[4] = [(got.0 - exp.0).abs(), (got.1 - exp.1).abs(), (got.2 - exp.2).abs()].into_iter().fold(0.0, f64::max);

    let names = ["conv2d", "gvp", "ssim", "q4", "qnr"];
    let limits = [1e-6, 1e-6, 1e-6, 1e-6, 1e-4];
    for i in 0..5 {
        ensure(worst[i] <= limits[i], || format!("{} off by {:.3e}", names[i], worst[i]))?;
    }
    Ok(names.iter().zip(worst).map(|(n, w)| format!("{n} {w:.1e}")).collect::<Vec<_>>().join(", "))
}

// ------------------------------------------------------------- architecture

fn names(cfg: &MessfnConfig) -> BTreeSet<String> {
    cfg.layout().into_iter().map(|(n, _, _)| n).collect()
}

fn architecture_suite() -> Outcome {
    let count = MessfnConfig::default().param_count();
    ensure(count == PARAMS_B9_C64, || format!("B=9 C=64 has {count} parameters"))?;

    let base = names(&MessfnConfig::new(3, 8));
    for (ab, stream) in [(Ablation::NoRsab, "ms_expert."), (Ablation::NoRmsab, "pan_expert.")] {
        let other = names(&MessfnConfig::new(3, 8).with_ablation(ab.clone()));
        let changed: BTreeSet<&String> = base.symmetric_difference(&other).collect();
        ensure(!changed.is_empty() && changed.iter().all(|n| n.starts_with(stream)), || {
            format!("{ab} changed {changed:?}")
        })?;
    }

    let blocks = 3;
    let cfg = MessfnConfig::new(blocks, 8).with_ablation(Ablation::Disconnect((0..blocks + 2).collect()));
    let w = MessfnWeights::<f32>::init(&cfg, 1).map_err(fail)?;
    let mut r = rng(4);
    let ms = Tensor::<f32>::from_f64(vec![2, 4, 6, 6], &random_tensor(&[288], &mut r).data().to_vec()).map_err(fail)?;
    let pan = Tensor::<f32>::from_f64(vec![2, 1, 24, 24], &random_tensor(&[1152], &mut r).data().to_vec()).map_err(fail)?;
    let before = w.predict(&ms, &pan).map_err(fail)?;
    let mut perturbed = w.clone();
    for p in perturbed.params.iter_mut() {
        if p.name.starts_with("ms_") || p.name.starts_with("pan_") {
            p.value.data_mut().iter_mut().for_each(|v| *v += r.random_range(-0.5..0.5));
        }
    }
    let after = perturbed.predict(&ms, &pan).map_err(fail)?;
    ensure(before.data().iter().zip(after.data()).all(|(a, b)| a.to_bits() == b.to_bits()), || {
        "disconnected output depends on stream weights".into()
    })?;

    let w = MessfnWeights::<f32>::init(&MessfnConfig::new(2, 8), 2).map_err(fail)?;
    let ms = Tensor::<f32>::from_f64(vec![3, 4, 5, 7], &random_tensor(&[420], &mut r).data().to_vec()).map_err(fail)?;
    let pan = Tensor::<f32>::from_f64(vec![3, 1, 20, 28], &random_tensor(&[1680], &mut r).data().to_vec()).map_err(fail)?;
    let out = w.predict(&ms, &pan).map_err(fail)?;
    ensure(out.shape() == [3, 4, 20, 28], || format!("output shape {:?}", out.shape()))?;
    ensure(out.data().iter().all(|&v| v > -1.0 && v < 1.0), || "output outside (-1, 1)".into())?;
    Ok(format!("{PARAMS_B9_C64} parameters"))
}

// ------------------------------------------------------------------ overfit

fn overfit_fixture() -> Outcome {
    let scene = synthetic_scene(192, 192, 4, 11).map_err(fail)?;
    let manifest = make_dataset(&scene.ms, &scene.pan, &WaldConfig { seed: 3, ..Default::default() }).map_err(fail)?;
    ensure(manifest.train.len() == 8, || format!("{} training patches", manifest.train.len()))?;
    ensure(manifest.train[0].ms_ref.height == 64, || "patches are not 64x64".into())?;
    let cfg = MessfnConfig::new(3, 16);
    let tc = TrainConfig {
        epochs: 500,
        batch_size: 8,
        lr0: 4e-3,
        decay_epoch: 450,
        decay_factor: 0.1,
        seed: 1,
        ..Default::default()
    };
    let out = trainer::train(&manifest, &cfg, &tc, TrainOptions::default()).map_err(fail)?;
    ensure(out.global_step == 500, || format!("{} Adam steps", out.global_step))?;

    let mut l1 = 0.0;
    let mut n = 0.0;
    for s in &manifest.train {
        let pred = out.weights.predict(&raster_batch(&[&s.ms_lr]).map_err(fail)?, &raster_batch(&[&s.pan_lr]).map_err(fail)?);
        let fused = tensor_rasters(&pred.map_err(fail)?, 11).map_err(fail)?.remove(0);
        l1 += fused.data.iter().zip(&s.ms_ref.data).map(|(a, b)| (a - b).abs()).sum::<f64>();
        n += fused.data.len() as f64;
    }
    let l1 = l1 / n;
    let sam = trainer::evaluate(&out.weights, &manifest.train, &[Metric::Sam].into_iter().collect())
        .map_err(fail)?
        .sam_rad
        .unwrap_or(f64::NAN);
    let detail = format!("train L1 {l1:.5}, SAM {sam:.5}");
    ensure(l1 < 0.02 && sam < 0.01, || detail.clone())?;
    Ok(detail)
}

// ------------------------------------------------------------------- recipe

fn recipe_suite() -> Outcome {
    let tc = TrainConfig::default();
    ensure(tc.epochs == 350 && tc.decay_epoch == 150, || format!("{} epochs, decay at {}", tc.epochs, tc.decay_epoch))?;
    for e in 0..150 {
        ensure(tc.lr_at(e) == 1e-4, || format!("epoch {e}: lr {}", tc.lr_at(e)))?;
    }
    for e in 150..350 {
        ensure((tc.lr_at(e) - 1e-5).abs() < 1e-18, || format!("epoch {e}: lr {}", tc.lr_at(e)))?;
    }
    let events = (1..350).filter(|&e| tc.lr_at(e) != tc.lr_at(e - 1)).count();
    ensure(events == 1, || format!("{events} decay events"))?;
    Ok("1 decay event at epoch 150".into())
}

// ---------------------------------------------------------------- baselines

fn baseline_suite() -> Outcome {
    let mut r = rng(7);
    let max_diff = |a: &RasterImage, b: &RasterImage| a.data.iter().zip(&b.data).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    let ms_up = image(4, 32, 32, -0.8, 0.8, &mut r);
    let intensity: Vec<f64> = (0..32 * 32).map(|p| (0..4).map(|b| ms_up.band(b)[p]).sum::<f64>() / 4.0).collect();
    let pan = RasterImage { bands: 1, data: intensity, band_names: Vec::new(), ..ms_up.clone() };
    let inp = FusionInput::from_upsampled(ms_up.clone(), pan, 4).map_err(fail)?;
    let ihs = max_diff(&ihs_fuse(&inp).map_err(fail)?, &ms_up);
    let pca = max_diff(&pca_fuse_with(&inp, false).map_err(fail)?, &ms_up);
    let flat = RasterImage { bands: 1, data: vec![0.3; 32 * 32], band_names: Vec::new(), ..ms_up.clone() };
    let inp = FusionInput::from_upsampled(ms_up.clone(), flat, 4).map_err(fail)?;
    let hpm = max_diff(&mtf_glp_hpm_fuse(&inp).map_err(fail)?, &ms_up);
    let detail = format!("ihs {ihs:.1e}, pca {pca:.1e}, hpm {hpm:.1e}");
    ensure(ihs <= 1e-5 && pca <= 1e-5 && hpm <= 1e-5, || detail.clone())?;
    Ok(detail)
}

// -------------------------------------------------------------- determinism

fn train_args(manifest: &Path, out: &Path) -> TrainArgs {
    TrainArgs {
        config: None,
        manifest: Some(manifest.to_path_buf()),
        out: Some(out.to_path_buf()),
        blocks: Some(2),
        channels: Some(8),
        epochs: Some(4),
        batch_size: Some(4),
        lr: Some(1e-3),
        decay_epoch: Some(2),
        decay_factor: None,
        beta1: None,
        beta2: None,
        seed: Some(9),
        checkpoint_every: Some(1),
        max_patches: None,
        ablate: None,
        spectral_kernel: None,
        isa_kernel: None,
        resume: false,
        stop_after_epoch: None,
    }
}

fn determinism_suite() -> Outcome {
    let dir = tempfile::tempdir().map_err(fail)?;
    let root = dir.path();
    let scene = cmd_synth(&SynthArgs { config: None, out: Some(root.join("scene")), size: Some(64), r: Some(4), seed: Some(2) })
        .map_err(fail)?;
    cmd_simulate(&SimulateArgs {
        config: None,
        ms: Some(scene.ms),
        pan: Some(scene.pan),
        out: Some(root.join("data")),
        r: None,
        patch: Some(16),
        stride: None,
        seed: Some(1),
        train_frac: None,
    })
    .map_err(fail)?;
    let data = root.join("data");
    let ck = |d: &str| fs::read(root.join(d).join("checkpoint.ck")).map_err(fail);

    cmd_train(&train_args(&data, &root.join("a"))).map_err(fail)?;
    cmd_train(&train_args(&data, &root.join("b"))).map_err(fail)?;
    ensure(ck("a")? == ck("b")?, || "same-seed runs differ".into())?;

    let first = TrainArgs { stop_after_epoch: Some(2), ..train_args(&data, &root.join("c")) };
    cmd_train(&first).map_err(fail)?;
    let rest = TrainArgs { resume: true, ..train_args(&data, &root.join("c")) };
    cmd_train(&rest).map_err(fail)?;
    ensure(ck("a")? == ck("c")?, || "resumed run differs from uninterrupted run".into())?;
    let log = |d: &str| fs::read_to_string(root.join(d).join("loss_log.txt")).map_err(fail);
    let strip = |s: String| s.lines().map(|l| l.split(" wall_time_s").next().unwrap_or("").to_string()).collect::<Vec<_>>();
    ensure(strip(log("a")?) == strip(log("c")?), || "loss logs differ".into())?;
    Ok(format!("{} checkpoint bytes identical", ck("a")?.len()))
}

// --------------------------------------------------------------------- wald

fn wald_suite() -> Outcome {
    let dir = tempfile::tempdir().map_err(fail)?;
    let root = dir.path();
    let scene = cmd_synth(&SynthArgs { config: None, out: Some(root.join("scene")), size: Some(256), r: Some(4), seed: Some(0) })
        .map_err(fail)?;
    let run = |out: &str| {
        cmd_simulate(&SimulateArgs {
            config: None,
            ms: Some(scene.ms.clone()),
            pan: Some(scene.pan.clone()),
            out: Some(root.join(out)),
            r: None,
            patch: None,
            stride: None,
            seed: None,
            train_frac: None,
        })
        .map_err(fail)
    };
    let a = run("a")?;
    let b = run("b")?;
    ensure((a.train, a.val) == (14, 2), || format!("split {}/{}", a.train, a.val))?;
    ensure(a.digest == b.digest, || "manifest digest differs between runs".into())?;
    let m = DatasetManifest::load(&a.manifest).map_err(fail)?;
    let dims = |i: &RasterImage| (i.height, i.width, i.bands);
    for s in m.train.iter().chain(&m.val) {
        ensure(
            dims(&s.ms_lr) == (16, 16, 4) && dims(&s.pan_lr) == (64, 64, 1) && dims(&s.ms_ref) == (64, 64, 4),
            || format!("{}: shapes {:?} {:?} {:?}", s.source_id, dims(&s.ms_lr), dims(&s.pan_lr), dims(&s.ms_ref)),
        )?;
    }
    Ok(format!("16 samples, digest {}", &a.digest[..12]))
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome, u64); 9] = [
        ("gradient suite", gradient_suite, 120),
        ("identity metrics", identity_suite, 30),
        ("oracle equivalence", oracle_suite, 120),
        ("architecture contracts", architecture_suite, 60),
        ("overfit fixture", overfit_fixture, 600),
        ("recipe conformance", recipe_suite, 10),
        ("baseline identities", baseline_suite, 30),
        ("determinism", determinism_suite, 300),
        ("wald pipeline", wald_suite, 120),
    ];
    let only: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failures = 0;
    for (i, (name, f, budget)) in criteria.iter().enumerate() {
        let id = i + 1;
        if !only.is_empty() && !only.contains(&id) {
            continue;
        }
        let t0 = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
            Err(e.downcast_ref::<String>().cloned().or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_default())
        });
        let took = t0.elapsed();
        let over = took > Duration::from_secs(*budget);
        let (tag, detail) = match (&result, over) {
            (Ok(d), false) => ("PASS", d.clone()),
            (Ok(d), true) => ("FAIL", format!("{d}; over the {budget} s budget")),
            (Err(e), _) => ("FAIL", e.clone()),
        };
        if tag == "FAIL" {
            failures += 1;
        }
        println!("{tag} criterion {id} {name}: {detail} [{:.1} s]", took.as_secs_f64());
    }
    if failures == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failures} criteria failed");
        ExitCode::FAILURE
    }
}
