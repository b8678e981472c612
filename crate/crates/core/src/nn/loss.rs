use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Real;

/// Mean over rows of the masked squared error summed over columns, and its
/// gradient with respect to `pred`. `mask` (if any) has one weight per entry.
pub fn mse<T: Real>(pred: &Tensor<T>, target: &Tensor<T>, mask: Option<&[T]>) -> Result<(T, Tensor<T>)> {
    if pred.shape() != target.shape() {
        return Err(Error::dim("loss target", pred.len(), target.len()));
    }
    if let Some(m) = mask {
        if m.len() != pred.len() {
            return Err(Error::dim("loss mask", pred.len(), m.len()));
        }
    }
    let rows = T::of(pred.rows().max(1) as f64);
    let mut grad = Tensor::zeros(pred.shape());
    let mut loss = T::zero();
    for (i, ((&p, &t), g)) in pred.data().iter().zip(target.data()).zip(grad.data_mut()).enumerate() {
        let w = mask.map_or(T::one(), |m| m[i]);
        let d = p - t;
        loss += w * d * d;
        *g = T::of(2.0) * w * d / rows;
    }
    Ok((loss / rows, grad))
}

/// Softmax over each consecutive group of `k` logits in a row; returns the
/// mean (over rows) of summed per-group cross-entropy and the logit gradient.
pub fn grouped_cross_entropy<T: Real>(logits: &Tensor<T>, k: usize, labels: &[usize]) -> Result<(T, Tensor<T>)> {
    let cols = logits.cols();
    if k == 0 || !cols.is_multiple_of(k) {
        return Err(Error::invalid("group size", format!("{k} does not divide {cols}")));
    }
    let groups = cols / k;
    if labels.len() != logits.rows() * groups {
        return Err(Error::dim("class labels", logits.rows() * groups, labels.len()));
    }
    let rows = T::of(logits.rows().max(1) as f64);
    let mut grad = Tensor::zeros(logits.shape());
    let mut loss = T::zero();
    for r in 0..logits.rows() {
        for gi in 0..groups {
            let label = labels[r * groups + gi];
            if label >= k {
                return Err(Error::invalid("class label", format!("{label} >= {k}")));
            }
            let z = &logits.row(r)[gi * k..(gi + 1) * k];
            let probs = softmax(z);
            loss -= probs[label].max(T::of(1e-300)).ln();
            let g = &mut grad.row_mut(r)[gi * k..(gi + 1) * k];
            for (j, gv) in g.iter_mut().enumerate() {
                let onehot = if j == label { T::one() } else { T::zero() };
                *gv = (probs[j] - onehot) / rows;
            }
        }
    }
    Ok((loss / rows, grad))
}

pub fn softmax<T: Real>(z: &[T]) -> Vec<T> {
    let m = z.iter().copied().fold(T::neg_infinity(), T::max);
    let e: Vec<T> = z.iter().map(|&v| (v - m).exp()).collect();
    let s: T = e.iter().copied().sum();
    e.into_iter().map(|v| v / s).collect()
}

pub fn argmax<T: Real>(z: &[T]) -> usize {
    let mut best = 0;
    for (i, &v) in z.iter().enumerate() {
        if v > z[best] {
            best = i;
        }
    }
    best
}
