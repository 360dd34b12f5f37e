//! Central finite-difference gradient checking.
//!
//! The numeric side only ever reads forward values, so it is independent of
//! the backward rules it checks.

use rayon::prelude::*;

use crate::autodiff::{Matrix, Tape, Var};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug)]
pub struct GradCheckOptions {
    /// Base step; the actual step is `step * max(1, |x|)`.
    pub step: f64,
    pub rel_tol: f64,
    pub abs_tol: f64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            step: 1e-6,
            rel_tol: 1e-4,
            abs_tol: 1e-8,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Mismatch {
    pub input: usize,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Clone, Debug, Default)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_abs_err: f64,
    /// Largest `|a - n| / max(|a|, |n|)` among entries above the absolute floor.
    pub max_rel_err: f64,
    pub mismatches: Vec<Mismatch>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.checked > 0 && self.mismatches.is_empty()
    }
}

fn eval_scalar<F>(inputs: &[Matrix], f: &F) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|m| tape.param(m.clone())).collect();
    let out = f(&mut tape, &vars)?;
    if out.shape() != (1, 1) {
        return Err(Error::Backward(format!(
            "gradient check needs a scalar output, got {}x{}",
            out.rows(),
            out.cols()
        )));
    }
    Ok(tape.value(out).get(0, 0))
}

/// Compares the tape gradient of `f` at `inputs` with central differences,
/// entry by entry.
pub fn check_gradients<F>(
    inputs: &[Matrix],
    f: F,
    opts: GradCheckOptions,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var> + Sync,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|m| tape.param(m.clone())).collect();
    let out = f(&mut tape, &vars)?;
    tape.backward(out)?;
    let analytic: Vec<Matrix> = vars
        .iter()
        .map(|&v| {
            tape.grad(v)
                .cloned()
                .unwrap_or_else(|| Matrix::zeros(v.rows(), v.cols()))
        })
        .collect();

    let coords: Vec<(usize, usize)> = inputs
        .iter()
        .enumerate()
        .flat_map(|(i, m)| (0..m.len()).map(move |k| (i, k)))
        .collect();

    let numeric: Vec<Result<f64>> = coords
        .par_iter()
        .map(|&(i, k)| {
            let x = inputs[i].as_slice()[k];
            let h = opts.step * x.abs().max(1.0);
            let mut shifted = inputs.to_vec();
            shifted[i].as_mut_slice()[k] = x + h;
            let plus = eval_scalar(&shifted, &f)?;
            shifted[i].as_mut_slice()[k] = x - h;
            let minus = eval_scalar(&shifted, &f)?;
            Ok((plus - minus) / (2.0 * h))
        })
        .collect();

    let mut report = GradCheckReport::default();
    for (&(i, k), n) in coords.iter().zip(numeric) {
        let n = n?;
        let a = analytic[i].as_slice()[k];
        let err = (a - n).abs();
        let scale = a.abs().max(n.abs());
        report.checked += 1;
        report.max_abs_err = report.max_abs_err.max(err);
        if err > opts.abs_tol {
            report.max_rel_err = report.max_rel_err.max(err / scale);
        }
        if err > (opts.rel_tol * scale).max(opts.abs_tol) {
            report.mismatches.push(Mismatch {
                input: i,
                index: k,
                analytic: a,
                numeric: n,
            });
        }
    }
    Ok(report)
}
