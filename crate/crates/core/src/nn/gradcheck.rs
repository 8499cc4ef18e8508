//! Central finite-difference verification of analytic gradients (64-bit).

use rand::seq::index::sample;

use crate::error::Result;
use crate::nn::params::{Gradients, ParamSet};
use crate::rng;

#[derive(Clone, Debug)]
pub struct FdOptions {
    pub eps: f64,
    /// Entries checked per tensor; tensors with fewer entries are checked exhaustively.
    pub per_tensor: usize,
    pub seed: u64,
    /// Lower bound on the relative-error denominator. Structurally zero
    /// gradients (a bias feeding batch norm) leave only central-difference
    /// roundoff, of order `ε_mach·|loss|/eps`, which must not read as a
    /// relative error of 1.
    pub abs_floor: f64,
}

impl Default for FdOptions {
    fn default() -> Self {
        Self {
            eps: 1e-3,
            per_tensor: 24,
            seed: 0,
            abs_floor: 1e-6,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FdReport {
    /// `max |analytic − fd| / max(|analytic|, |fd|, abs_floor)` over checked entries.
    pub max_rel_error: f64,
    pub checked: usize,
    /// Tensor name and flat index of the worst entry.
    pub worst: Option<(String, usize)>,
    /// Set when any evaluated loss was NaN/Inf; the check counts as failed.
    pub non_finite: bool,
}

impl FdReport {
    pub fn passed(&self, tol: f64) -> bool {
        !self.non_finite && self.max_rel_error < tol
    }
}

pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Compares `analytic` against central differences of `loss_fn` at a seeded
/// sample of parameter entries.
pub fn finite_difference_check<F>(
    params: &ParamSet<f64>,
    analytic: &Gradients<f64>,
    mut loss_fn: F,
    opts: &FdOptions,
) -> Result<FdReport>
where
    F: FnMut(&ParamSet<f64>) -> Result<f64>,
{
    let mut report = FdReport {
        max_rel_error: 0.0,
        checked: 0,
        worst: None,
        non_finite: false,
    };
    let mut probe = params.clone();
    let mut stream = rng::stream(opts.seed, "gradcheck");
    for (t, param) in params.iter().enumerate() {
        let n = param.value.len();
        let picks: Vec<usize> = if n <= opts.per_tensor {
            (0..n).collect()
        } else {
            let mut v = sample(&mut stream, n, opts.per_tensor).into_vec();
            v.sort_unstable();
            v
        };
        let id = crate::nn::params::ParamId(t);
        for idx in picks {
            let orig = param.value.as_slice()[idx];
            probe.get_mut(id).as_mut_slice()[idx] = orig + opts.eps;
            let up = loss_fn(&probe)?;
            probe.get_mut(id).as_mut_slice()[idx] = orig - opts.eps;
            let down = loss_fn(&probe)?;
            probe.get_mut(id).as_mut_slice()[idx] = orig;

            report.checked += 1;
            if !up.is_finite() || !down.is_finite() {
                report.non_finite = true;
                report.max_rel_error = f64::INFINITY;
                report.worst = Some((param.name.clone(), idx));
                continue;
            }
            let numeric = (up - down) / (2.0 * opts.eps);
            let err = relative_error(analytic.get(id).as_slice()[idx], numeric, opts.abs_floor);
            if err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst = Some((param.name.clone(), idx));
            }
        }
    }
    Ok(report)
}
