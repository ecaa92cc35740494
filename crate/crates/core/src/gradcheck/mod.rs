//! Central finite-difference verification of analytic gradients.

use crate::error::{Error, Result};
use crate::optim::{zero_grads, Param};
use crate::rng::Rng;
use crate::scalar::Scalar;

mod suite;

pub use suite::{check_case, check_network, op_cases, CaseReport, OpCase, OpKind};

pub const MAX_COORDS_PER_PARAM: usize = 256;

/// Relative error with a floor on the denominator, so coordinates whose
/// gradients are both tiny compare on an absolute scale.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-4)
}

/// One loss evaluation. `pattern` fingerprints the non-smooth regime the
/// evaluation passed through (see [`crate::Tape::probe`]); use 0 for smooth
/// losses.
#[derive(Clone, Copy, Debug)]
pub struct Probe {
    pub loss: f64,
    pub pattern: u64,
}

impl Probe {
    pub fn smooth(loss: f64) -> Self {
        Probe { loss, pattern: 0 }
    }
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// `(param name, flat index)` of the worst coordinate.
    pub worst: Option<(String, usize)>,
    pub coords_checked: usize,
    /// Coordinates whose `+-eps` probes crossed a relu or pooling kink;
    /// central differences are not an oracle there.
    pub coords_skipped: usize,
}

/// Compare analytic gradients against central differences.
///
/// `loss` evaluates the scalar loss at the current parameter values; when
/// its flag is true it must also back-propagate, accumulating into the
/// parameters' `grad` fields. Up to [`MAX_COORDS_PER_PARAM`] coordinates per
/// parameter are drawn with `rng`. Coordinates whose perturbed evaluations
/// report a different pattern than the unperturbed one are skipped.
pub fn grad_check<T, F>(params: &mut [Param<T>], eps: f64, rng: &mut Rng, mut loss: F) -> Result<GradCheckReport>
where
    T: Scalar,
    F: FnMut(&mut [Param<T>], bool) -> Result<Probe>,
{
    if !(eps > 0.0) {
        return Err(Error::invalid("grad_check", "eps must be > 0"));
    }
    let first = loss(params, false)?;
    let second = loss(params, false)?;
    if first.loss.to_bits() != second.loss.to_bits() || first.pattern != second.pattern {
        return Err(Error::NonDeterministic {
            first: first.loss,
            second: second.loss,
        });
    }

    zero_grads(params);
    loss(params, true)?;
    let analytic: Vec<Vec<f64>> = params
        .iter()
        .map(|p| p.grad.data().iter().map(|v| v.f64()).collect())
        .collect();
    zero_grads(params);

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        coords_checked: 0,
        coords_skipped: 0,
    };
    for pi in 0..params.len() {
        let n = params[pi].numel();
        let coords: Vec<usize> = if n <= MAX_COORDS_PER_PARAM {
            (0..n).collect()
        } else {
            let mut perm = rng.permutation(n);
            perm.truncate(MAX_COORDS_PER_PARAM);
            perm
        };
        for idx in coords {
            let orig = params[pi].value.data()[idx];
            let plus = T::of(orig.f64() + eps);
            let minus = T::of(orig.f64() - eps);
            params[pi].value.data_mut()[idx] = plus;
            let lp = loss(params, false)?;
            params[pi].value.data_mut()[idx] = minus;
            let lm = loss(params, false)?;
            params[pi].value.data_mut()[idx] = orig;
            if lp.pattern != first.pattern || lm.pattern != first.pattern {
                report.coords_skipped += 1;
                continue;
            }
            // divide by the step actually representable in T
            let numeric = (lp.loss - lm.loss) / (plus.f64() - minus.f64());
            let err = relative_error(analytic[pi][idx], numeric);
            report.coords_checked += 1;
            if err > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = report.max_rel_error.max(err);
                report.worst = Some((params[pi].name.clone(), idx));
            }
        }
    }
    Ok(report)
}
