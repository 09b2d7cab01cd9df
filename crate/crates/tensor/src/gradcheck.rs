//! Central finite-difference verification of tape gradients (f64 only).

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::param::ParamStore;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct GradCheckConfig {
    /// Step is `rel_step * max(1, |x|)` per coordinate.
    pub rel_step: f64,
    /// Pass threshold on the maximum relative error.
    pub tolerance: f64,
    /// Denominator floor so vanishing gradients compare absolutely.
    pub abs_floor: f64,
    /// Probe at most this many random coordinates per tensor.
    pub max_coords_per_tensor: Option<usize>,
    pub seed: u64,
    /// Coordinates whose finite differences straddle a kink (relu, |.|) are
    /// skipped; the check fails if more than this fraction is skipped.
    pub max_nonsmooth_fraction: f64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            rel_step: 1e-5,
            tolerance: 1e-4,
            abs_floor: 1e-6,
            max_coords_per_tensor: None,
            seed: 0,
            max_nonsmooth_fraction: 0.05,
        }
    }
}

impl GradCheckConfig {
    pub fn with_tolerance(mut self, tol: f64) -> Self {
        self.tolerance = tol;
        self
    }

    pub fn sampled(mut self, per_tensor: usize, seed: u64) -> Self {
        self.max_coords_per_tensor = Some(per_tensor);
        self.seed = seed;
        self
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct WorstCoordinate {
    pub tensor: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel_error: f64,
    pub worst: Option<WorstCoordinate>,
    pub nonsmooth_skipped: usize,
    pub tolerance: f64,
    pub passed: bool,
}

trait Probe {
    fn tensors(&self) -> Vec<(String, Vec<f64>)>;
    fn set(&mut self, tensor: usize, index: usize, value: f64);
    fn loss(&mut self) -> Result<f64>;
}

struct InputProbe<'f, F> {
    inputs: Vec<Tensor<f64>>,
    f: &'f F,
}

impl<F> Probe for InputProbe<'_, F>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    fn tensors(&self) -> Vec<(String, Vec<f64>)> {
        self.inputs
            .iter()
            .enumerate()
            .map(|(i, t)| (format!("input{i}"), t.data().to_vec()))
            .collect()
    }

    fn set(&mut self, tensor: usize, index: usize, value: f64) {
        self.inputs[tensor].data_mut()[index] = value;
    }

    fn loss(&mut self) -> Result<f64> {
        let mut tape = Tape::new();
        let vars = self
            .inputs
            .iter()
            .map(|t| tape.constant(t.clone()))
            .collect::<Result<Vec<_>>>()?;
        let out = (self.f)(&mut tape, &vars)?;
        Ok(tape.value(out).data()[0])
    }
}

struct ParamProbe<'a, 'f, F> {
    store: &'a mut ParamStore<f64>,
    f: &'f F,
}

impl<F> Probe for ParamProbe<'_, '_, F>
where
    F: Fn(&mut Tape<f64>, &ParamStore<f64>) -> Result<Var>,
{
    fn tensors(&self) -> Vec<(String, Vec<f64>)> {
        self.store
            .iter()
            .map(|p| (p.name.clone(), p.value.data().to_vec()))
            .collect()
    }

    fn set(&mut self, tensor: usize, index: usize, value: f64) {
        let p = self.store.iter_mut().nth(tensor).expect("tensor index");
        p.value.data_mut()[index] = value;
    }

    fn loss(&mut self) -> Result<f64> {
        let mut tape = Tape::new();
        let out = (self.f)(&mut tape, self.store)?;
        Ok(tape.value(out).data()[0])
    }
}

/// Checks gradients of a scalar function w.r.t. each of its input tensors.
pub fn grad_check<F>(f: F, inputs: &[Tensor<f64>], cfg: &GradCheckConfig) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars = inputs
        .iter()
        .map(|t| tape.leaf(t.clone().with_grad()))
        .collect::<Result<Vec<_>>>()?;
    let out = f(&mut tape, &vars)?;
    tape.backward(out)?;
    let analytic = vars
        .iter()
        .map(|&v| tape.grad(v).map(<[f64]>::to_vec).unwrap_or_default())
        .collect::<Vec<_>>();
    let mut probe = InputProbe {
        inputs: inputs.to_vec(),
        f: &f,
    };
    run(&mut probe, &analytic, cfg)
}

/// Checks gradients of a scalar function w.r.t. every stored parameter.
pub fn grad_check_params<F>(store: &mut ParamStore<f64>, f: F, cfg: &GradCheckConfig) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape<f64>, &ParamStore<f64>) -> Result<Var>,
{
    store.zero_grads();
    let mut tape = Tape::new();
    let out = f(&mut tape, store)?;
    tape.backward_into(out, store)?;
    let analytic = store.iter().map(|p| p.grad().to_vec()).collect::<Vec<_>>();
    store.zero_grads();
    let mut probe = ParamProbe { store, f: &f };
    run(&mut probe, &analytic, cfg)
}

fn run(probe: &mut dyn Probe, analytic: &[Vec<f64>], cfg: &GradCheckConfig) -> Result<GradCheckReport> {
    let tensors = probe.tensors();
    let mut report = GradCheckReport {
        checked: 0,
        max_rel_error: 0.0,
        worst: None,
        nonsmooth_skipped: 0,
        tolerance: cfg.tolerance,
        passed: false,
    };
    let rel = |a: f64, b: f64| (a - b).abs() / a.abs().max(b.abs()).max(cfg.abs_floor);
    for (t, (name, values)) in tensors.iter().enumerate() {
        let coords: Vec<usize> = match cfg.max_coords_per_tensor {
            Some(k) if k < values.len() => {
                let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_mul(1_000_003).wrapping_add(t as u64));
                let mut idx = sample(&mut rng, values.len(), k).into_vec();
                idx.sort_unstable();
                idx
            }
            _ => (0..values.len()).collect(),
        };
        for i in coords {
            let x = values[i];
            let h = cfg.rel_step * x.abs().max(1.0);
            let at = |probe: &mut dyn Probe, v: f64| -> Result<f64> {
                probe.set(t, i, v);
                let l = probe.loss();
                probe.set(t, i, x);
                l
            };
            let (fp, fm) = (at(probe, x + h)?, at(probe, x - h)?);
            let numeric = (fp - fm) / (2.0 * h);
            let a = analytic[t].get(i).copied().unwrap_or(0.0);
            let mut err = rel(a, numeric);
            if err > cfg.tolerance {
                // Distinguish a kink inside [x - h, x + h] from a wrong gradient:
                // a halved step or the second difference disagree at kinks only.
                let half = (at(probe, x + h / 2.0)? - at(probe, x - h / 2.0)?) / h;
                let f0 = at(probe, x)?;
                let curvature = (fp - 2.0 * f0 + fm).abs() / h;
                let scale = numeric.abs().max(half.abs()).max(cfg.abs_floor);
                if rel(numeric, half) > cfg.tolerance || curvature / scale > cfg.tolerance {
                    report.nonsmooth_skipped += 1;
                    continue;
                }
                err = rel(a, numeric);
            }
            report.checked += 1;
            if err > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = report.max_rel_error.max(err);
                report.worst = Some(WorstCoordinate {
                    tensor: name.clone(),
                    index: i,
                    analytic: a,
                    numeric,
                });
            }
        }
    }
    let total = report.checked + report.nonsmooth_skipped;
    let skipped_ok = (report.nonsmooth_skipped as f64) <= cfg.max_nonsmooth_fraction * total as f64;
    report.passed = report.max_rel_error < cfg.tolerance && skipped_ok;
    Ok(report)
}
