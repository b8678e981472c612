//! Central finite-difference gradient checking.

use super::tensor::Tensor;
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// (tensor index, element index) of the worst entry.
    pub worst: (usize, usize),
    pub checked: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct GradCheckConfig {
    pub h: f64,
    /// Entries whose analytic and numeric magnitudes are both below this are
    /// compared absolutely.
    pub floor: f64,
    /// Check at most this many entries per tensor (evenly strided).
    pub max_per_tensor: usize,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self { h: 1e-6, floor: 1e-5, max_per_tensor: usize::MAX }
    }
}

/// Compare the analytic gradient returned by `loss_fn` against central
/// differences of its loss value. Returns the maximum relative error.
pub fn grad_check<T, F>(params: &[Tensor<T>], loss_fn: F, cfg: GradCheckConfig) -> GradCheckReport
where
    T: Real,
    F: Fn(&[Tensor<T>]) -> (T, Vec<Tensor<T>>),
{
    let (_, analytic) = loss_fn(params);
    let mut work: Vec<Tensor<T>> = params.to_vec();
    let mut report = GradCheckReport { max_rel_error: 0.0, worst: (0, 0), checked: 0 };
    let h = T::of(cfg.h);
    for ti in 0..params.len() {
        let n = params[ti].len();
        let stride = n.div_ceil(cfg.max_per_tensor.min(n).max(1)).max(1);
        for ei in (0..n).step_by(stride) {
            let orig = work[ti].data()[ei];
            work[ti].data_mut()[ei] = orig + h;
            let (lp, _) = loss_fn(&work);
            work[ti].data_mut()[ei] = orig - h;
            let (lm, _) = loss_fn(&work);
            work[ti].data_mut()[ei] = orig;
            let numeric = (lp.as_f64() - lm.as_f64()) / (2.0 * cfg.h);
            let a = analytic[ti].data()[ei].as_f64();
            let denom = a.abs().max(numeric.abs()).max(cfg.floor);
            let rel = (a - numeric).abs() / denom;
            report.checked += 1;
            if rel > report.max_rel_error || rel.is_nan() {
                report.max_rel_error = if rel.is_nan() { f64::INFINITY } else { rel };
                report.worst = (ti, ei);
            }
        }
    }
    report
}
