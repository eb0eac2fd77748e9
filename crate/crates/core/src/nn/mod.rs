//! Minimal dense/conv neural-net primitives with manual backprop.
//!
//! Everything runs in f64 on CPU. Layers cache what they need during
//! `forward` and accumulate parameter gradients during `backward`; an
//! [`Adam`] optimizer steps every [`Param`] a network exposes. No external
//! ML framework is involved, which keeps runs bit-reproducible.

mod conv;

pub use conv::{im2col, BatchNorm2d, Conv2d, GlobalAvgPool, MaxPool2d};

use ndarray::{Array2, ArrayD, IxDyn};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// A trainable tensor: value, gradient accumulator, and Adam moments.
#[derive(Debug, Clone)]
pub struct Param {
    pub value: ArrayD<f64>,
    pub grad: ArrayD<f64>,
    m: ArrayD<f64>,
    v: ArrayD<f64>,
}

impl Param {
    pub fn new(value: ArrayD<f64>) -> Self {
        let shape = IxDyn(value.shape());
        Param {
            grad: ArrayD::zeros(shape.clone()),
            m: ArrayD::zeros(shape.clone()),
            v: ArrayD::zeros(shape),
            value,
        }
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(0.0);
    }

    /// Adam first/second moment estimates (serialized for exact resume).
    pub fn moments(&self) -> (&ArrayD<f64>, &ArrayD<f64>) {
        (&self.m, &self.v)
    }

    pub fn set_moments(&mut self, m: ArrayD<f64>, v: ArrayD<f64>) {
        assert_eq!(m.shape(), self.value.shape());
        assert_eq!(v.shape(), self.value.shape());
        self.m = m;
        self.v = v;
    }

    fn adam_step(&mut self, lr: f64, beta1: f64, beta2: f64, eps: f64, t: u64) {
        let bc1 = 1.0 - beta1.powi(t as i32);
        let bc2 = 1.0 - beta2.powi(t as i32);
        ndarray::Zip::from(&mut self.value)
            .and(&mut self.m)
            .and(&mut self.v)
            .and(&self.grad)
            .for_each(|w, m, v, &g| {
                *m = beta1 * *m + (1.0 - beta1) * g;
                *v = beta2 * *v + (1.0 - beta2) * g * g;
                let m_hat = *m / bc1;
                let v_hat = *v / bc2;
                *w -= lr * m_hat / (v_hat.sqrt() + eps);
            });
    }
}

/// Adam optimizer state shared across all params of a model.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub t: u64,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Adam { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, t: 0 }
    }

    pub fn step(&mut self, params: &mut [&mut Param]) {
        self.t += 1;
        for p in params.iter_mut() {
            p.adam_step(self.lr, self.beta1, self.beta2, self.eps, self.t);
        }
    }
}

/// Kaiming-uniform init for a weight of shape `(fan_out, fan_in)`-like layout.
pub fn kaiming_uniform(shape: &[usize], fan_in: usize, rng: &mut ChaCha8Rng) -> ArrayD<f64> {
    let bound = (6.0 / fan_in as f64).sqrt();
    ArrayD::from_shape_fn(IxDyn(shape), |_| rng.gen_range(-bound..bound))
}

/// Fully-connected layer `y = x W^T + b` with input cache.
#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: Param, // (out, in)
    pub bias: Param,   // (out,)
    cached_input: Option<Array2<f64>>,
}

impl Linear {
    pub fn new(in_dim: usize, out_dim: usize, rng: &mut ChaCha8Rng) -> Self {
        Linear {
            weight: Param::new(kaiming_uniform(&[out_dim, in_dim], in_dim, rng)),
            bias: Param::new(ArrayD::zeros(IxDyn(&[out_dim]))),
            cached_input: None,
        }
    }

    pub fn in_dim(&self) -> usize {
        self.weight.value.shape()[1]
    }

    pub fn out_dim(&self) -> usize {
        self.weight.value.shape()[0]
    }

    /// x: (B, in) -> (B, out)
    pub fn forward(&mut self, x: &Array2<f64>, train: bool) -> Array2<f64> {
        let w = self.weight.value.view().into_dimensionality::<ndarray::Ix2>().unwrap();
        let b = self.bias.value.view().into_dimensionality::<ndarray::Ix1>().unwrap();
        let mut y = x.dot(&w.t());
        y += &b;
        if train {
            self.cached_input = Some(x.clone());
        }
        y
    }

    /// dy: (B, out) -> dx: (B, in); accumulates dW, db.
    pub fn backward(&mut self, dy: &Array2<f64>) -> Array2<f64> {
        let x = self.cached_input.as_ref().expect("backward before forward");
        let w = self.weight.value.view().into_dimensionality::<ndarray::Ix2>().unwrap();
        let dw = dy.t().dot(x);
        let db = dy.sum_axis(ndarray::Axis(0));
        let dx = dy.dot(&w);
        self.weight.grad += &dw;
        self.bias.grad += &db;
        dx
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.weight, &mut self.bias]
    }
}

/// Elementwise ReLU over a 2D batch, caching the activation mask.
#[derive(Debug, Clone, Default)]
pub struct Relu2 {
    mask: Option<Array2<f64>>,
}

impl Relu2 {
    pub fn new() -> Self {
        Relu2 { mask: None }
    }

    pub fn forward(&mut self, x: &Array2<f64>, train: bool) -> Array2<f64> {
        let y = x.mapv(|v| v.max(0.0));
        if train {
            self.mask = Some(x.mapv(|v| if v > 0.0 { 1.0 } else { 0.0 }));
        }
        y
    }

    pub fn backward(&mut self, dy: &Array2<f64>) -> Array2<f64> {
        dy * self.mask.as_ref().expect("backward before forward")
    }
}

/// Two-layer perceptron with a ReLU in between.
#[derive(Debug, Clone)]
pub struct Mlp {
    pub fc1: Linear,
    pub relu: Relu2,
    pub fc2: Linear,
}

impl Mlp {
    pub fn new(in_dim: usize, hidden_dim: usize, out_dim: usize, rng: &mut ChaCha8Rng) -> Self {
        Mlp {
            fc1: Linear::new(in_dim, hidden_dim, rng),
            relu: Relu2::new(),
            fc2: Linear::new(hidden_dim, out_dim, rng),
        }
    }

    pub fn forward(&mut self, x: &Array2<f64>, train: bool) -> Array2<f64> {
        let h = self.fc1.forward(x, train);
        let a = self.relu.forward(&h, train);
        self.fc2.forward(&a, train)
    }

    pub fn backward(&mut self, dy: &Array2<f64>) -> Array2<f64> {
        let da = self.fc2.backward(dy);
        let dh = self.relu.backward(&da);
        self.fc1.backward(&dh)
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut p = self.fc1.params_mut();
        p.extend(self.fc2.params_mut());
        p
    }
}
