use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Tanh,
    None,
}

impl Activation {
    pub fn name(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
            Activation::None => "none",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "relu" => Some(Activation::Relu),
            "tanh" => Some(Activation::Tanh),
            "none" => Some(Activation::None),
            _ => None,
        }
    }
}

/// Layer widths `[input, hidden.., output]` and the activation applied after
/// each linear layer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MlpSpec {
    pub widths: Vec<usize>,
    pub activations: Vec<Activation>,
    pub seed: u64,
}

impl MlpSpec {
    pub fn new(widths: Vec<usize>, activations: Vec<Activation>, seed: u64) -> Result<Self> {
        if widths.len() < 3 {
            return Err(Error::invalid("mlp spec", "needs at least two linear layers"));
        }
        if widths.contains(&0) {
            return Err(Error::invalid("mlp spec", "widths must be positive"));
        }
        if activations.len() != widths.len() - 1 {
            return Err(Error::dim("mlp activations", widths.len() - 1, activations.len()));
        }
        Ok(Self { widths, activations, seed })
    }

    /// ReLU between linear layers, linear output.
    pub fn relu(widths: &[usize], seed: u64) -> Result<Self> {
        let n = widths.len().saturating_sub(1);
        let mut acts = vec![Activation::Relu; n];
        if let Some(last) = acts.last_mut() {
            *last = Activation::None;
        }
        Self::new(widths.to_vec(), acts, seed)
    }

    pub fn n_layers(&self) -> usize {
        self.widths.len() - 1
    }

    pub fn input_dim(&self) -> usize {
        self.widths[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.widths.last().unwrap()
    }

    pub fn n_params(&self) -> usize {
        self.widths.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    pub fn param_shapes(&self) -> Vec<Vec<usize>> {
        self.widths.windows(2).flat_map(|w| [vec![w[0], w[1]], vec![w[1]]]).collect()
    }
}

/// Multi-layer perceptron; parameters are `[w0, b0, w1, b1, ..]` with
/// weights stored `in × out`.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp<T> {
    spec: MlpSpec,
    params: Vec<Tensor<T>>,
}

/// Layer inputs and activated outputs kept for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache<T> {
    inputs: Vec<Tensor<T>>,
    outputs: Vec<Tensor<T>>,
}

#[derive(Debug, Clone)]
pub struct Gradients<T> {
    pub params: Vec<Tensor<T>>,
    pub input: Tensor<T>,
}

impl<T: Real> Mlp<T> {
    /// He-uniform for ReLU layers, Xavier-uniform otherwise; zero biases.
    pub fn init(spec: &MlpSpec) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let mut params = Vec::with_capacity(2 * spec.n_layers());
        for (w, act) in spec.widths.windows(2).zip(&spec.activations) {
            let (fan_in, fan_out) = (w[0] as f64, w[1] as f64);
            let bound = match act {
                Activation::Relu => (6.0 / fan_in).sqrt(),
                _ => (6.0 / (fan_in + fan_out)).sqrt(),
            };
            let data = (0..w[0] * w[1]).map(|_| T::of(rng.gen_range(-bound..bound))).collect();
            params.push(Tensor::from_vec(&[w[0], w[1]], data).unwrap());
            params.push(Tensor::zeros(&[w[1]]));
        }
        Self { spec: spec.clone(), params }
    }

    pub fn from_params(spec: &MlpSpec, params: Vec<Tensor<T>>) -> Result<Self> {
        let shapes = spec.param_shapes();
        if shapes.len() != params.len() {
            return Err(Error::dim("mlp parameter tensors", shapes.len(), params.len()));
        }
        for (s, p) in shapes.iter().zip(&params) {
            if s.as_slice() != p.shape() {
                return Err(Error::invalid("mlp parameters", format!("expected shape {s:?}, got {:?}", p.shape())));
            }
        }
        Ok(Self { spec: spec.clone(), params })
    }

    /// Same weights under different activations.
    pub fn with_activations(&self, activations: Vec<Activation>) -> Result<Self> {
        let spec = MlpSpec::new(self.spec.widths.clone(), activations, self.spec.seed)?;
        Ok(Self { spec, params: self.params.clone() })
    }

    pub fn spec(&self) -> &MlpSpec {
        &self.spec
    }

    pub fn params(&self) -> &[Tensor<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.params
    }

    pub fn into_params(self) -> Vec<Tensor<T>> {
        self.params
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<(Tensor<T>, ForwardCache<T>)> {
        if x.cols() != self.spec.input_dim() || x.shape().len() != 2 {
            return Err(Error::dim("mlp input width", self.spec.input_dim(), x.cols()));
        }
        if !x.all_finite() {
            return Err(Error::NonFinite("mlp input".into()));
        }
        let batch = x.rows();
        let mut inputs = Vec::with_capacity(self.spec.n_layers());
        let mut outputs = Vec::with_capacity(self.spec.n_layers());
        let mut cur = x.clone();
        for (layer, act) in self.spec.activations.iter().enumerate() {
            let (w, b) = (&self.params[2 * layer], &self.params[2 * layer + 1]);
            let (n_in, n_out) = (w.shape()[0], w.shape()[1]);
            let mut z = Tensor::zeros(&[batch, n_out]);
            for r in 0..batch {
                z.row_mut(r).copy_from_slice(b.data());
            }
            T::gemm(batch, n_in, n_out, T::one(), cur.data(), false, w.data(), false, T::one(), z.data_mut());
            match act {
                Activation::Relu => z.data_mut().iter_mut().for_each(|v| *v = v.max(T::zero())),
                Activation::Tanh => z.data_mut().iter_mut().for_each(|v| *v = v.tanh()),
                Activation::None => {}
            }
            if !z.all_finite() {
                return Err(Error::NonFinite(format!("mlp layer {layer} output")));
            }
            inputs.push(cur);
            cur = z.clone();
            outputs.push(z);
        }
        Ok((cur, ForwardCache { inputs, outputs }))
    }

    pub fn predict(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.forward(x).map(|(y, _)| y)
    }

    /// Single-row convenience wrapper.
    pub fn predict_one(&self, x: &[T]) -> Result<Vec<T>> {
        let t = Tensor::from_vec(&[1, x.len()], x.to_vec())?;
        Ok(self.predict(&t)?.into_data())
    }

    pub fn backward(&self, cache: &ForwardCache<T>, dy: &Tensor<T>) -> Result<Gradients<T>> {
        let last = cache.outputs.last().expect("non-empty cache");
        if dy.shape() != last.shape() {
            return Err(Error::dim("mlp output gradient", last.len(), dy.len()));
        }
        let batch = dy.rows();
        let mut grads: Vec<Tensor<T>> = self.params.iter().map(|p| Tensor::zeros(p.shape())).collect();
        let mut upstream = dy.clone();
        for layer in (0..self.spec.n_layers()).rev() {
            let out = &cache.outputs[layer];
            match self.spec.activations[layer] {
                Activation::Relu => {
                    for (g, &a) in upstream.data_mut().iter_mut().zip(out.data()) {
                        if a <= T::zero() {
                            *g = T::zero();
                        }
                    }
                }
                Activation::Tanh => {
                    for (g, &a) in upstream.data_mut().iter_mut().zip(out.data()) {
                        *g *= T::one() - a * a;
                    }
                }
                Activation::None => {}
            }
            let w = &self.params[2 * layer];
            let (n_in, n_out) = (w.shape()[0], w.shape()[1]);
            let input = &cache.inputs[layer];
            T::gemm(n_in, batch, n_out, T::one(), input.data(), true, upstream.data(), false, T::zero(), grads[2 * layer].data_mut());
            let gb = grads[2 * layer + 1].data_mut();
            for r in 0..batch {
                for (acc, &g) in gb.iter_mut().zip(upstream.row(r)) {
                    *acc += g;
                }
            }
            let mut down = Tensor::zeros(&[batch, n_in]);
            T::gemm(batch, n_out, n_in, T::one(), upstream.data(), false, w.data(), true, T::zero(), down.data_mut());
            upstream = down;
        }
        if let Some((i, _)) = grads.iter().enumerate().find(|(_, g)| !g.all_finite()) {
            return Err(Error::NonFinite(format!("gradient of parameter tensor {i}")));
        }
        Ok(Gradients { params: grads, input: upstream })
    }
}
