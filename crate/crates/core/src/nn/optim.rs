use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamWConfig<T> {
    pub lr: T,
    pub beta1: T,
    pub beta2: T,
    pub eps: T,
    pub weight_decay: T,
}

impl<T: Real> AdamWConfig<T> {
    pub fn with_lr(lr: T) -> Self {
        Self { lr, beta1: T::of(0.9), beta2: T::of(0.999), eps: T::of(1e-8), weight_decay: T::of(0.01) }
    }
}

/// First and second moment estimates, one pair per parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamWState<T> {
    pub step: u64,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

impl<T: Real> AdamWState<T> {
    pub fn new(params: &[Tensor<T>]) -> Self {
        Self {
            step: 0,
            m: params.iter().map(|p| vec![T::zero(); p.len()]).collect(),
            v: params.iter().map(|p| vec![T::zero(); p.len()]).collect(),
        }
    }
}

/// AdamW with bias correction and decoupled weight decay:
/// `p ← p(1 − lr·wd) − lr·m̂/(√v̂ + eps)`.
pub fn adamw_step<T: Real>(
    params: &mut [Tensor<T>],
    grads: &[Tensor<T>],
    state: &mut AdamWState<T>,
    cfg: &AdamWConfig<T>,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::dim("optimizer tensors", params.len(), grads.len()));
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = T::one() - cfg.beta1.powi(t);
    let bc2 = T::one() - cfg.beta2.powi(t);
    let shrink = T::one() - cfg.lr * cfg.weight_decay;
    for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
        if p.len() != g.len() {
            return Err(Error::dim("gradient tensor", p.len(), g.len()));
        }
        let (m, v) = (&mut state.m[i], &mut state.v[i]);
        for (k, (pv, &gv)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
            m[k] = cfg.beta1 * m[k] + (T::one() - cfg.beta1) * gv;
            v[k] = cfg.beta2 * v[k] + (T::one() - cfg.beta2) * gv * gv;
            let mh = m[k] / bc1;
            let vh = v[k] / bc2;
            *pv = *pv * shrink - cfg.lr * mh / (vh.sqrt() + cfg.eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(v: f64) -> Vec<Tensor<f64>> {
        vec![Tensor::from_vec(&[1], vec![v]).unwrap()]
    }

    #[test]
    fn zero_gradient_and_decay_leave_params_unchanged() {
        let mut p = scalar(1.5);
        let g = scalar(0.0);
        let mut st = AdamWState::new(&p);
        let cfg = AdamWConfig { weight_decay: 0.0, ..AdamWConfig::with_lr(0.1) };
        for _ in 0..5 {
            adamw_step(&mut p, &g, &mut st, &cfg).unwrap();
        }
        assert_eq!(p[0].data()[0], 1.5);
    }

    #[test]
    fn first_step_is_sign_scaled() {
        // m̂ = g, v̂ = g² after one bias-corrected step
        for g in [0.3, -2.0, 1e-3] {
            let mut p = scalar(0.0);
            let mut st = AdamWState::new(&p);
            let cfg = AdamWConfig { weight_decay: 0.0, ..AdamWConfig::with_lr(0.01) };
            adamw_step(&mut p, &scalar(g), &mut st, &cfg).unwrap();
            let expect = -0.01 * g / (g.abs() + 1e-8);
            assert!((p[0].data()[0] - expect).abs() < 1e-15);
        }
    }

    #[test]
    fn decay_alone_shrinks_exponentially() {
        let mut p = scalar(2.0);
        let mut st = AdamWState::new(&p);
        let cfg = AdamWConfig { weight_decay: 0.5, ..AdamWConfig::with_lr(0.1) };
        for k in 1..=10 {
            adamw_step(&mut p, &scalar(0.0), &mut st, &cfg).unwrap();
            let expect = 2.0 * (1.0f64 - 0.05).powi(k);
            assert!((p[0].data()[0] - expect).abs() < 1e-14);
        }
    }

    #[test]
    fn mismatched_tensors_are_rejected() {
        let mut p = scalar(0.0);
        let mut st = AdamWState::new(&p);
        let g = vec![Tensor::<f64>::zeros(&[2])];
        assert!(adamw_step(&mut p, &g, &mut st, &AdamWConfig::with_lr(0.1)).is_err());
    }
}
