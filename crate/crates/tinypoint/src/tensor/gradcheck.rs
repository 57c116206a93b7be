//! Central-difference gradient checking in double precision.
//!
//! Used by unit and acceptance tests to validate every backward
//! implementation against a derivative-free oracle: perturb one input element
//! at a time, evaluate the scalar function twice, and compare
//! `(f(x+h) - f(x-h)) / 2h` with the analytic gradient.

use super::Tensor;
use crate::error::{Error, Result};

/// Result of one gradient check.
#[derive(Debug, Clone, Copy)]
pub struct GradCheckReport {
    /// Largest normalized deviation over all input elements.
    pub max_rel_err: f64,
    /// Input index and element index where it occurred.
    pub worst: (usize, usize),
}

/// Normalized error: absolute for small magnitudes, relative for large.
fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / f64::max(1.0, f64::max(a.abs(), b.abs()))
}

/// Check the analytic gradient of `f` at `inputs` (shape, data pairs).
///
/// `f` must be deterministic: stochastic ops must be driven by a fixed seed
/// inside the closure. Inputs the function never differentiates through get
/// an implicit zero analytic gradient, which the finite difference must
/// confirm.
pub fn gradcheck<F>(f: F, inputs: &[(Vec<usize>, Vec<f64>)], h: f64) -> Result<GradCheckReport>
where
    F: Fn(&[Tensor<f64>]) -> Result<Tensor<f64>>,
{
    if h <= 0.0 {
        return Err(Error::Contract(format!(
            "gradcheck: step size must be positive, got {h}"
        )));
    }
    let build = |bufs: &[Vec<f64>]| -> Result<Vec<Tensor<f64>>> {
        inputs
            .iter()
            .zip(bufs)
            .map(|((shape, _), data)| Tensor::leaf(shape, data.clone()))
            .collect()
    };

    let base: Vec<Vec<f64>> = inputs.iter().map(|(_, d)| d.clone()).collect();
    let leaves = build(&base)?;
    let loss = f(&leaves)?;
    loss.backward()?;
    let analytic: Vec<Vec<f64>> = leaves
        .iter()
        .map(|l| l.grad().unwrap_or_else(|| vec![0.0; l.numel()]))
        .collect();

    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        worst: (0, 0),
    };
    for i in 0..inputs.len() {
        for j in 0..base[i].len() {
            let mut plus = base.clone();
            plus[i][j] += h;
            let mut minus = base.clone();
            minus[i][j] -= h;
            let fp = f(&build(&plus)?)?.item()?;
            let fm = f(&build(&minus)?)?.item()?;
            let fd = (fp - fm) / (2.0 * h);
            let err = rel_err(analytic[i][j], fd);
            if err > report.max_rel_err {
                report.max_rel_err = err;
                report.worst = (i, j);
            }
        }
    }
    Ok(report)
}
