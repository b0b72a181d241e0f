//! Central finite-difference gradient checking.
//!
//! The scalar probed is `L = <r, f(params)>` for a fixed random `r`, summed in
//! `f64` outside the tape so the only `f32` rounding is in the forward pass
//! itself. The analytic side is the tape's vector-Jacobian product with
//! seed `r`. The error of a check is norm-wise over every probed coordinate
//! of every tensor, `|g_analytic - g_fd| / max(|g_analytic|, |g_fd|)`; the
//! same quantity per tensor is reported alongside as a diagnostic. Tensors
//! whose gradient is orders of magnitude below the rest (squeeze-excitation
//! weights behind a global pool, for instance) sit at the `f32` noise floor
//! and can show per-tensor errors above the check's tolerance without
//! anything being wrong.
//!
//! Numeric derivatives use the five-point central stencil. Because the
//! forward pass runs in `f32`, no single step suits every tensor: small
//! gradients drown in rounding noise at small steps while strongly curved
//! paths pick up truncation error at large ones. Each tensor is therefore
//! probed at a ladder of steps `step * 2^k` and the estimate that agrees best
//! with its neighbour on the ladder is kept. The choice never looks at the
//! analytic gradient.

mod suites;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Tape, Var};
use crate::error::Result;
use crate::params::ParamStore;
use crate::tensor::Tensor;

pub use suites::{corrupted_vjp_check, run_scope, CorruptedSquare, Scope};

pub const DEFAULT_STEP: f32 = 5e-3;
pub const DEFAULT_TOLERANCE: f64 = 1e-3;

#[derive(Clone, Debug)]
pub struct GradCheckOptions {
    /// Smallest finite-difference step.
    pub step: f32,
    /// Number of doubling steps tried per tensor.
    pub step_levels: usize,
    pub tolerance: f64,
    /// Coordinates probed per tensor; larger tensors are subsampled.
    pub max_coords: usize,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            step: DEFAULT_STEP,
            step_levels: 6,
            tolerance: DEFAULT_TOLERANCE,
            max_coords: 48,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TensorCheck {
    pub name: String,
    pub coords: usize,
    /// Step whose estimate was kept.
    pub step: f32,
    pub rel_error: f64,
    pub max_abs_error: f64,
    /// Norms over the probed coordinates.
    pub grad_norm: f64,
    pub numeric_norm: f64,
    pub diff_norm: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub label: String,
    pub tolerance: f64,
    pub tensors: Vec<TensorCheck>,
}

impl GradCheckReport {
    /// Norm-wise relative error over all probed coordinates.
    pub fn rel_error(&self) -> f64 {
        let norm = |f: fn(&TensorCheck) -> f64| {
            self.tensors.iter().map(|t| f(t).powi(2)).sum::<f64>().sqrt()
        };
        let scale = norm(|t| t.grad_norm).max(norm(|t| t.numeric_norm));
        if scale < 1e-12 {
            0.0
        } else {
            norm(|t| t.diff_norm) / scale
        }
    }

    pub fn worst_tensor(&self) -> Option<&TensorCheck> {
        self.tensors.iter().max_by(|a, b| a.rel_error.total_cmp(&b.rel_error))
    }

    pub fn passed(&self) -> bool {
        self.rel_error() < self.tolerance
    }
}

fn probe(
    store: &ParamStore,
    forward: &impl Fn(&mut Tape, &ParamStore) -> Result<Var>,
    weights: &Tensor,
) -> Result<f64> {
    let mut tape = Tape::new();
    let out = forward(&mut tape, store)?;
    tape.value(out).dot(weights)
}

/// Checks d<r, forward(store)>/d(param) for every parameter in `store`.
pub fn check_gradients<F>(
    label: impl Into<String>,
    store: &mut ParamStore,
    forward: F,
    opts: &GradCheckOptions,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &ParamStore) -> Result<Var>,
{
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0x9e37_79b9_7f4a_7c15);
    let mut tape = Tape::new();
    let out = forward(&mut tape, store)?;
    let weights = Tensor::from_fn(tape.shape(out), |_| rng.gen_range(-1.0..1.0))?;
    store.zero_grad();
    tape.backward_with_grad(out, weights.clone(), store)?;
    drop(tape);

    let ids: Vec<_> = store.iter().map(|(id, _)| id).collect();
    let mut tensors = Vec::with_capacity(ids.len());
    for id in ids {
        let len = store.value(id).len();
        let coords: Vec<usize> = if len <= opts.max_coords {
            (0..len).collect()
        } else {
            let mut picked = index::sample(&mut rng, len, opts.max_coords).into_vec();
            picked.sort_unstable();
            picked
        };
        let analytic: Vec<f64> = coords
            .iter()
            .map(|&i| store.grad(id).data()[i] as f64)
            .collect();
        let levels = opts.step_levels.max(2);
        // estimates[k][j]: derivative at coordinate j with step `step * 2^k`.
        let mut estimates = vec![Vec::with_capacity(coords.len()); levels];
        for &i in &coords {
            let orig = store.value(id).data()[i];
            let mut diffs = Vec::with_capacity(levels + 1);
            for j in 0..=levels {
                let h = opts.step * (1u32 << j) as f32;
                store.value_mut(id).data_mut()[i] = orig + h;
                let hi = probe(store, &forward, &weights)?;
                store.value_mut(id).data_mut()[i] = orig - h;
                let lo = probe(store, &forward, &weights)?;
                diffs.push(hi - lo);
            }
            store.value_mut(id).data_mut()[i] = orig;
            for (k, est) in estimates.iter_mut().enumerate() {
                let h = opts.step as f64 * (1u32 << k) as f64;
                est.push((8.0 * diffs[k] - diffs[k + 1]) / (12.0 * h));
            }
        }
        let best = (0..levels - 1)
            .min_by(|&a, &b| {
                let d = |k: usize| distance(&estimates[k], &estimates[k + 1]);
                d(a).total_cmp(&d(b))
            })
            .expect("at least two levels");
        let numeric = &estimates[best];
        let diff_norm = analytic
            .iter()
            .zip(numeric.iter())
            .map(|(a, n)| (a - n).powi(2))
            .sum::<f64>()
            .sqrt();
        let a_norm = analytic.iter().map(|a| a * a).sum::<f64>().sqrt();
        let n_norm = numeric.iter().map(|a| a * a).sum::<f64>().sqrt();
        let scale = a_norm.max(n_norm);
        let rel_error = if scale < 1e-12 { 0.0 } else { diff_norm / scale };
        let max_abs_error = analytic
            .iter()
            .zip(numeric.iter())
            .map(|(a, n)| (a - n).abs())
            .fold(0.0, f64::max);
        tensors.push(TensorCheck {
            name: store.get(id).name.clone(),
            coords: coords.len(),
            step: opts.step * (1u32 << best) as f32,
            rel_error,
            max_abs_error,
            grad_norm: a_norm,
            numeric_norm: n_norm,
            diff_norm,
        });
    }
    Ok(GradCheckReport {
        label: label.into(),
        tolerance: opts.tolerance,
        tensors,
    })
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

/// Random tensor with entries uniform in `[-scale, scale)`.
pub fn random_tensor<R: Rng + ?Sized>(shape: &[usize], scale: f32, rng: &mut R) -> Tensor {
    Tensor::from_fn(shape, |_| rng.gen_range(-scale..scale)).expect("valid shape")
}

/// Formats reports as one line per check, stable for a fixed seed.
pub fn render_reports(reports: &[GradCheckReport]) -> String {
    let mut out = String::new();
    for r in reports {
        let status = if r.passed() { "PASS" } else { "FAIL" };
        let worst = r.worst_tensor().map_or(0.0, |t| t.rel_error);
        out.push_str(&format!(
            "{status} {:<40} rel_err={:.3e} worst_tensor={:.3e}\n",
            r.label,
            r.rel_error(),
            worst
        ));
        for t in &r.tensors {
            out.push_str(&format!(
                "    {:<36} coords={:<4} step={:<8} rel_err={:.3e} max_abs={:.3e}\n",
                t.name, t.coords, t.step, t.rel_error, t.max_abs_error
            ));
        }
    }
    let failed = reports.iter().filter(|r| !r.passed()).count();
    out.push_str(&format!(
        "{} checks, {} passed, {} failed\n",
        reports.len(),
        reports.len() - failed,
        failed
    ));
    out
}
