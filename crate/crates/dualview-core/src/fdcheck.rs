//! Central finite-difference gradient oracle.
//!
//! The analytic backward pass is only trusted to the extent it agrees with
//! this check. Callers populate registry gradients, then hand the same loss
//! function here; every scalar parameter is perturbed both ways in `f64`.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::params::ParameterRegistry;

#[derive(Debug, Clone)]
pub struct FdParamReport {
    pub name: String,
    pub max_rel_err: f64,
    pub worst_analytic: f64,
    pub worst_numeric: f64,
}

#[derive(Debug, Clone)]
pub struct FdReport {
    pub per_param: Vec<FdParamReport>,
    pub max_rel_err: f64,
    /// parameters whose max relative error exceeded the tolerance
    pub failures: Vec<String>,
}

#[derive(Debug, Clone)]
pub enum FdError {
    /// the loss evaluated to NaN/inf at or near the base point
    NonFiniteLoss { param: String, index: usize },
}

impl core::fmt::Display for FdError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            FdError::NonFiniteLoss { param, index } => write!(
                f,
                "finite-difference check aborted: non-finite loss while perturbing {param}[{index}]"
            ),
        }
    }
}

/// Relative error with a floor so that near-zero gradients compare on an
/// absolute scale instead of dividing by noise.
fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-6)
}

/// Compares registry gradients against `(f(p+h) - f(p-h)) / 2h` for every
/// scalar parameter. `loss_fn` must be deterministic.
pub fn fd_gradient_check(
    registry: &ParameterRegistry<f64>,
    mut loss_fn: impl FnMut(&ParameterRegistry<f64>) -> f64,
    h: f64,
    tol: f64,
) -> Result<FdReport, FdError> {
    let mut work = registry.clone();
    let mut per_param = Vec::with_capacity(registry.len());
    let mut failures = Vec::new();
    let mut global_max = 0.0f64;

    for slot in 0..registry.len() {
        let name = String::from(registry.name(slot));
        let mut report = FdParamReport {
            name: name.clone(),
            max_rel_err: 0.0,
            worst_analytic: 0.0,
            worst_numeric: 0.0,
        };
        let len = registry.value(slot).len();
        for i in 0..len {
            let base = registry.value(slot).data()[i];
            work.value_mut(slot).data_mut()[i] = base + h;
            let plus = loss_fn(&work);
            work.value_mut(slot).data_mut()[i] = base - h;
            let minus = loss_fn(&work);
            work.value_mut(slot).data_mut()[i] = base;
            if !plus.is_finite() || !minus.is_finite() {
                return Err(FdError::NonFiniteLoss {
                    param: name,
                    index: i,
                });
            }
            let numeric = (plus - minus) / (2.0 * h);
            let analytic = registry.grad(slot).data()[i];
            let err = rel_err(analytic, numeric);
            if err > report.max_rel_err {
                report.max_rel_err = err;
                report.worst_analytic = analytic;
                report.worst_numeric = numeric;
            }
        }
        global_max = global_max.max(report.max_rel_err);
        if report.max_rel_err > tol {
            failures.push(format!(
                "{}: rel err {:.3e} (analytic {:.6e} vs numeric {:.6e})",
                report.name, report.max_rel_err, report.worst_analytic, report.worst_numeric
            ));
        }
        per_param.push(report);
    }

    Ok(FdReport {
        per_param,
        max_rel_err: global_max,
        failures,
    })
}

/// Plain central difference of a scalar function; the textbook oracle the
/// registry-level check is built from.
pub fn central_difference(f: impl Fn(f64) -> f64, x: f64, h: f64) -> f64 {
    (f(x + h) - f(x - h)) / (2.0 * h)
}
