//! Finite-difference verification of tape gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

use super::tape::{Tape, Var};

#[derive(Clone, Copy, Debug)]
pub struct GradCheckOptions {
    /// Central-difference step.
    pub step: f64,
    /// Maximum accepted relative error.
    pub tol: f64,
    /// Check at most this many coordinates per input (all when `None`).
    pub max_coords: Option<usize>,
    /// Seeds the projection weights and coordinate sampling.
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            step: 1e-5,
            tol: 1e-4,
            max_coords: None,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    /// Relative error per input, `max|analytic - numeric| / max(|analytic|, |numeric|)`
    /// over the checked coordinates.
    pub per_input: Vec<f64>,
    pub max_rel_error: f64,
    pub coords_checked: usize,
    pub passed: bool,
}

/// Compares tape gradients of `f` against central differences.
///
/// `f` may return a tensor of any shape; it is reduced to a scalar by a dot
/// product with fixed random weights so every output element contributes.
pub fn grad_check<F>(f: F, inputs: &[Tensor], opts: GradCheckOptions) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);

    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let out = f(&mut tape, &vars)?;
    let projection = Tensor::random_uniform(tape.shape(out), 0.5, 1.5, &mut rng);
    let root = tape.dot_const(out, &projection)?;
    if !tape.value(root).item().is_finite() {
        return Err(Error::NonFinite("grad_check objective".into()));
    }
    let grads = tape.backward(root)?;

    let eval = |xs: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = xs.iter().map(|t| tape.constant(t.clone())).collect();
        let out = f(&mut tape, &vars)?;
        let root = tape.dot_const(out, &projection)?;
        Ok(tape.value(root).item())
    };

    let mut per_input = Vec::with_capacity(inputs.len());
    let mut coords_checked = 0;
    let mut work = inputs.to_vec();
    for (i, input) in inputs.iter().enumerate() {
        let analytic = grads.get_or_zeros(vars[i], input.shape());
        let n = input.numel();
        let coords: Vec<usize> = match opts.max_coords {
            Some(k) if k < n => {
                let mut c = sample(&mut rng, n, k).into_vec();
                c.sort_unstable();
                c
            }
            _ => (0..n).collect(),
        };
        let mut max_diff: f64 = 0.0;
        let mut scale: f64 = 0.0;
        for &j in &coords {
            let orig = input.data()[j];
            work[i].data_mut()[j] = orig + opts.step;
            let plus = eval(&work)?;
            work[i].data_mut()[j] = orig - opts.step;
            let minus = eval(&work)?;
            work[i].data_mut()[j] = orig;
            let numeric = (plus - minus) / (2.0 * opts.step);
            if !numeric.is_finite() {
                return Err(Error::NonFinite(format!("finite difference at input {i}[{j}]")));
            }
            let a = analytic.data()[j];
            max_diff = max_diff.max((a - numeric).abs());
            scale = scale.max(a.abs()).max(numeric.abs());
        }
        coords_checked += coords.len();
        per_input.push(if scale > 0.0 { max_diff / scale } else { 0.0 });
    }
    let max_rel_error = per_input.iter().copied().fold(0.0, f64::max);
    Ok(GradCheckReport {
        per_input,
        max_rel_error,
        coords_checked,
        passed: max_rel_error <= opts.tol,
    })
}
