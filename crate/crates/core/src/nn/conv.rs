//! Convolutional layers via im2col + GEMM, with max/avg pooling and batch norm.

use super::Param;
use ndarray::{s, Array1, Array2, Array3, Array4, ArrayD, ArrayView3, Axis, IxDyn};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

/// Unfolds one image `(C, H, W)` into columns `(C*k*k, OH*OW)`.
pub fn im2col(x: ArrayView3<f64>, k: usize, stride: usize, pad: usize) -> Array2<f64> {
    let (c, h, w) = x.dim();
    let oh = (h + 2 * pad - k) / stride + 1;
    let ow = (w + 2 * pad - k) / stride + 1;
    let mut cols = Array2::zeros((c * k * k, oh * ow));
    for ci in 0..c {
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                for oy in 0..oh {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for ox in 0..ow {
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        cols[[row, oy * ow + ox]] = x[[ci, iy as usize, ix as usize]];
                    }
                }
            }
        }
    }
    cols
}

/// Folds column gradients back into an image gradient `(C, H, W)`.
fn col2im(
    dcols: &Array2<f64>,
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
) -> Array3<f64> {
    let oh = (h + 2 * pad - k) / stride + 1;
    let ow = (w + 2 * pad - k) / stride + 1;
    let mut dx = Array3::zeros((c, h, w));
    for ci in 0..c {
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                for oy in 0..oh {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for ox in 0..ow {
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        dx[[ci, iy as usize, ix as usize]] += dcols[[row, oy * ow + ox]];
                    }
                }
            }
        }
    }
    dx
}

/// 2D convolution. Weight layout `(C_out, C_in*k*k)`.
#[derive(Debug, Clone)]
pub struct Conv2d {
    pub weight: Param,
    pub bias: Param,
    pub c_in: usize,
    pub c_out: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    cached_cols: Option<Vec<Array2<f64>>>,
    cached_in_hw: (usize, usize),
    /// When set, the layer keeps its last output and output-gradient around
    /// (used by gradient-based attention maps).
    pub capture: bool,
    pub captured_output: Option<Array4<f64>>,
    pub captured_grad: Option<Array4<f64>>,
}

impl Conv2d {
    pub fn new(
        c_in: usize,
        c_out: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let fan_in = c_in * kernel * kernel;
        Conv2d {
            weight: Param::new(super::kaiming_uniform(&[c_out, fan_in], fan_in, rng)),
            bias: Param::new(ArrayD::zeros(IxDyn(&[c_out]))),
            c_in,
            c_out,
            kernel,
            stride,
            pad,
            cached_cols: None,
            cached_in_hw: (0, 0),
            capture: false,
            captured_output: None,
            captured_grad: None,
        }
    }

    pub fn out_hw(&self, h: usize, w: usize) -> (usize, usize) {
        (
            (h + 2 * self.pad - self.kernel) / self.stride + 1,
            (w + 2 * self.pad - self.kernel) / self.stride + 1,
        )
    }

    /// x: (B, C_in, H, W) -> (B, C_out, OH, OW)
    pub fn forward(&mut self, x: &Array4<f64>, train: bool) -> Array4<f64> {
        let (b, _, h, w) = x.dim();
        let (oh, ow) = self.out_hw(h, w);
        let wmat = self.weight.value.view().into_dimensionality::<ndarray::Ix2>().unwrap();
        let bias = self.bias.value.view().into_dimensionality::<ndarray::Ix1>().unwrap();

        let per_image: Vec<(Array2<f64>, Array2<f64>)> = (0..b)
            .into_par_iter()
            .map(|i| {
                let cols = im2col(x.index_axis(Axis(0), i), self.kernel, self.stride, self.pad);
                let mut y = wmat.dot(&cols); // (C_out, OH*OW)
                for (mut row, &bv) in y.axis_iter_mut(Axis(0)).zip(bias.iter()) {
                    row += bv;
                }
                (y, cols)
            })
            .collect();

        let mut out = Array4::zeros((b, self.c_out, oh, ow));
        let mut cols_cache = Vec::with_capacity(b);
        for (i, (y, cols)) in per_image.into_iter().enumerate() {
            let y3 = y.into_shape((self.c_out, oh, ow)).unwrap();
            out.index_axis_mut(Axis(0), i).assign(&y3);
            if train {
                cols_cache.push(cols);
            }
        }
        if train {
            self.cached_cols = Some(cols_cache);
            self.cached_in_hw = (h, w);
        }
        if self.capture {
            self.captured_output = Some(out.clone());
        }
        out
    }

    /// dy: (B, C_out, OH, OW) -> dx: (B, C_in, H, W); accumulates dW, db.
    pub fn backward(&mut self, dy: &Array4<f64>) -> Array4<f64> {
        if self.capture {
            self.captured_grad = Some(dy.clone());
        }
        let cols_cache = self.cached_cols.take().expect("backward before forward");
        let (b, _, oh, ow) = dy.dim();
        let (h, w) = self.cached_in_hw;
        let wmat = self.weight.value.view().into_dimensionality::<ndarray::Ix2>().unwrap();

        let per_image: Vec<(Array3<f64>, Array2<f64>, Array1<f64>)> = (0..b)
            .into_par_iter()
            .map(|i| {
                let dyi = dy
                    .index_axis(Axis(0), i)
                    .to_shape((self.c_out, oh * ow))
                    .unwrap()
                    .to_owned();
                let dw = dyi.dot(&cols_cache[i].t());
                let db = dyi.sum_axis(Axis(1));
                let dcols = wmat.t().dot(&dyi);
                let dx = col2im(&dcols, self.c_in, h, w, self.kernel, self.stride, self.pad);
                (dx, dw, db)
            })
            .collect();

        let mut dx = Array4::zeros((b, self.c_in, h, w));
        let mut dw_view =
            self.weight.grad.view_mut().into_dimensionality::<ndarray::Ix2>().unwrap();
        let mut db_view = self.bias.grad.view_mut().into_dimensionality::<ndarray::Ix1>().unwrap();
        for (i, (dxi, dw, db)) in per_image.into_iter().enumerate() {
            dx.index_axis_mut(Axis(0), i).assign(&dxi);
            dw_view += &dw;
            db_view += &db;
        }
        dx
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.weight, &mut self.bias]
    }
}

/// Max pooling with argmax caching for backprop.
#[derive(Debug, Clone)]
pub struct MaxPool2d {
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    argmax: Option<Array4<usize>>, // flat input index per output element
    cached_in_dim: (usize, usize, usize, usize),
}

impl MaxPool2d {
    pub fn new(kernel: usize, stride: usize, pad: usize) -> Self {
        MaxPool2d { kernel, stride, pad, argmax: None, cached_in_dim: (0, 0, 0, 0) }
    }

    pub fn forward(&mut self, x: &Array4<f64>, train: bool) -> Array4<f64> {
        let (b, c, h, w) = x.dim();
        let oh = (h + 2 * self.pad - self.kernel) / self.stride + 1;
        let ow = (w + 2 * self.pad - self.kernel) / self.stride + 1;
        let mut out = Array4::zeros((b, c, oh, ow));
        let mut arg = Array4::zeros((b, c, oh, ow));
        for bi in 0..b {
            for ci in 0..c {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut best = f64::NEG_INFINITY;
                        let mut best_idx = 0usize;
                        for ky in 0..self.kernel {
                            let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            for kx in 0..self.kernel {
                                let ix = (ox * self.stride + kx) as isize - self.pad as isize;
                                if ix < 0 || ix >= w as isize {
                                    continue;
                                }
                                let v = x[[bi, ci, iy as usize, ix as usize]];
                                if v > best {
                                    best = v;
                                    best_idx = iy as usize * w + ix as usize;
                                }
                            }
                        }
                        out[[bi, ci, oy, ox]] = best;
                        arg[[bi, ci, oy, ox]] = best_idx;
                    }
                }
            }
        }
        if train {
            self.argmax = Some(arg);
            self.cached_in_dim = (b, c, h, w);
        }
        out
    }

    pub fn backward(&mut self, dy: &Array4<f64>) -> Array4<f64> {
        let arg = self.argmax.take().expect("backward before forward");
        let (b, c, h, w) = self.cached_in_dim;
        let mut dx = Array4::zeros((b, c, h, w));
        let (_, _, oh, ow) = dy.dim();
        for bi in 0..b {
            for ci in 0..c {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let idx = arg[[bi, ci, oy, ox]];
                        dx[[bi, ci, idx / w, idx % w]] += dy[[bi, ci, oy, ox]];
                    }
                }
            }
        }
        dx
    }
}

/// Global average pool: (B, C, H, W) -> (B, C).
#[derive(Debug, Clone, Default)]
pub struct GlobalAvgPool {
    cached_in_dim: (usize, usize, usize, usize),
}

impl GlobalAvgPool {
    pub fn new() -> Self {
        GlobalAvgPool::default()
    }

    pub fn forward(&mut self, x: &Array4<f64>, train: bool) -> Array2<f64> {
        let (b, c, h, w) = x.dim();
        if train {
            self.cached_in_dim = (b, c, h, w);
        }
        let mut out = Array2::zeros((b, c));
        let scale = 1.0 / (h * w) as f64;
        for bi in 0..b {
            for ci in 0..c {
                out[[bi, ci]] = x.slice(s![bi, ci, .., ..]).sum() * scale;
            }
        }
        out
    }

    pub fn backward(&mut self, dy: &Array2<f64>) -> Array4<f64> {
        let (b, c, h, w) = self.cached_in_dim;
        let scale = 1.0 / (h * w) as f64;
        let mut dx = Array4::zeros((b, c, h, w));
        for bi in 0..b {
            for ci in 0..c {
                dx.slice_mut(s![bi, ci, .., ..]).fill(dy[[bi, ci]] * scale);
            }
        }
        dx
    }
}

/// Per-channel batch normalization over (B, H, W).
#[derive(Debug, Clone)]
pub struct BatchNorm2d {
    pub gamma: Param,
    pub beta: Param,
    pub running_mean: Array1<f64>,
    pub running_var: Array1<f64>,
    pub momentum: f64,
    pub eps: f64,
    cache: Option<(Array4<f64>, Array1<f64>)>, // (x_hat, inv_std)
}

impl BatchNorm2d {
    pub fn new(c: usize) -> Self {
        BatchNorm2d {
            gamma: Param::new(ArrayD::from_elem(IxDyn(&[c]), 1.0)),
            beta: Param::new(ArrayD::zeros(IxDyn(&[c]))),
            running_mean: Array1::zeros(c),
            running_var: Array1::from_elem(c, 1.0),
            momentum: 0.1,
            eps: 1e-5,
            cache: None,
        }
    }

    pub fn forward(&mut self, x: &Array4<f64>, train: bool) -> Array4<f64> {
        let (b, c, h, w) = x.dim();
        let n = (b * h * w) as f64;
        let gamma = self.gamma.value.view().into_dimensionality::<ndarray::Ix1>().unwrap();
        let beta = self.beta.value.view().into_dimensionality::<ndarray::Ix1>().unwrap();
        let mut out = Array4::zeros((b, c, h, w));
        if train {
            let mut x_hat = Array4::zeros((b, c, h, w));
            let mut inv_stds = Array1::zeros(c);
            for ci in 0..c {
                let slice = x.slice(s![.., ci, .., ..]);
                let mean = slice.sum() / n;
                let var = slice.mapv(|v| (v - mean) * (v - mean)).sum() / n;
                let inv_std = 1.0 / (var + self.eps).sqrt();
                inv_stds[ci] = inv_std;
                self.running_mean[ci] =
                    (1.0 - self.momentum) * self.running_mean[ci] + self.momentum * mean;
                self.running_var[ci] =
                    (1.0 - self.momentum) * self.running_var[ci] + self.momentum * var;
                for bi in 0..b {
                    for y in 0..h {
                        for xx in 0..w {
                            let xh = (x[[bi, ci, y, xx]] - mean) * inv_std;
                            x_hat[[bi, ci, y, xx]] = xh;
                            out[[bi, ci, y, xx]] = gamma[ci] * xh + beta[ci];
                        }
                    }
                }
            }
            self.cache = Some((x_hat, inv_stds));
        } else {
            for ci in 0..c {
                let inv_std = 1.0 / (self.running_var[ci] + self.eps).sqrt();
                let mean = self.running_mean[ci];
                for bi in 0..b {
                    for y in 0..h {
                        for xx in 0..w {
                            out[[bi, ci, y, xx]] =
                                gamma[ci] * (x[[bi, ci, y, xx]] - mean) * inv_std + beta[ci];
                        }
                    }
                }
            }
        }
        out
    }

    pub fn backward(&mut self, dy: &Array4<f64>) -> Array4<f64> {
        let (x_hat, inv_stds) = self.cache.take().expect("backward before forward");
        let (b, c, h, w) = dy.dim();
        let n = (b * h * w) as f64;
        let gamma = self.gamma.value.view().into_dimensionality::<ndarray::Ix1>().unwrap();
        let mut dx = Array4::zeros((b, c, h, w));
        let mut dgamma = self.gamma.grad.view_mut().into_dimensionality::<ndarray::Ix1>().unwrap();
        let mut dbeta = self.beta.grad.view_mut().into_dimensionality::<ndarray::Ix1>().unwrap();
        for ci in 0..c {
            let dy_c = dy.slice(s![.., ci, .., ..]);
            let xh_c = x_hat.slice(s![.., ci, .., ..]);
            let sum_dy = dy_c.sum();
            let sum_dy_xh = (&dy_c * &xh_c).sum();
            dgamma[ci] += sum_dy_xh;
            dbeta[ci] += sum_dy;
            let scale = gamma[ci] * inv_stds[ci] / n;
            for bi in 0..b {
                for y in 0..h {
                    for xx in 0..w {
                        dx[[bi, ci, y, xx]] = scale
                            * (n * dy[[bi, ci, y, xx]]
                                - sum_dy
                                - x_hat[[bi, ci, y, xx]] * sum_dy_xh);
                    }
                }
            }
        }
        dx
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.gamma, &mut self.beta]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;

    #[test]
    fn conv_identity_kernel_preserves_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut conv = Conv2d::new(1, 1, 3, 1, 1, &mut rng);
        conv.weight.value.fill(0.0);
        conv.weight.value[[0, 4]] = 1.0; // center tap
        conv.bias.value.fill(0.0);
        let x = Array4::from_shape_fn((2, 1, 5, 5), |_| rng.gen_range(-1.0..1.0));
        let y = conv.forward(&x, false);
        assert!(x.iter().zip(y.iter()).all(|(a, b)| (a - b).abs() < 1e-12));
    }

    #[test]
    fn conv_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut conv = Conv2d::new(2, 3, 3, 2, 1, &mut rng);
        let x = Array4::from_shape_fn((1, 2, 6, 6), |_| rng.gen_range(-1.0..1.0));
        let y = conv.forward(&x, true);
        let weighting = Array4::from_shape_fn(y.dim(), |_| rng.gen_range(-1.0..1.0));
        let dx = conv.backward(&weighting);
        let eps = 1e-6;
        for idx in [[0, 0, 0, 0], [0, 1, 3, 2], [0, 0, 5, 5], [0, 1, 2, 4]] {
            let mut xp = x.clone();
            xp[idx] += eps;
            let mut xm = x.clone();
            xm[idx] -= eps;
            let fp = (conv.forward(&xp, false) * &weighting).sum();
            let fm = (conv.forward(&xm, false) * &weighting).sum();
            let num = (fp - fm) / (2.0 * eps);
            let rel = (dx[idx] - num).abs() / num.abs().max(1e-8);
            assert!(rel < 1e-5, "conv fd mismatch at {idx:?}: {} vs {num}", dx[idx]);
        }
    }

    #[test]
    fn maxpool_forward_and_backward_route_to_argmax() {
        let mut pool = MaxPool2d::new(2, 2, 0);
        let mut x = Array4::zeros((1, 1, 4, 4));
        x[[0, 0, 1, 1]] = 5.0;
        x[[0, 0, 2, 3]] = 3.0;
        let y = pool.forward(&x, true);
        assert_eq!(y[[0, 0, 0, 0]], 5.0);
        assert_eq!(y[[0, 0, 1, 1]], 3.0);
        let mut dy = Array4::zeros((1, 1, 2, 2));
        dy[[0, 0, 0, 0]] = 1.0;
        let dx = pool.backward(&dy);
        assert_eq!(dx[[0, 0, 1, 1]], 1.0);
        assert_eq!(dx.sum(), 1.0);
    }

    #[test]
    fn batchnorm_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut bn = BatchNorm2d::new(2);
        let x = Array4::from_shape_fn((2, 2, 3, 3), |_| rng.gen_range(-1.0..1.0));
        let weighting = Array4::from_shape_fn((2, 2, 3, 3), |_| rng.gen_range(-1.0..1.0));
        let _ = bn.forward(&x, true);
        // fresh instance per eval keeps running stats out of the check
        let f = |x: &Array4<f64>| {
            let mut b2 = BatchNorm2d::new(2);
            (b2.forward(x, true) * &weighting).sum()
        };
        let _ = bn.forward(&x, true);
        let dx = bn.backward(&weighting);
        let eps = 1e-6;
        for idx in [[0, 0, 0, 0], [1, 1, 2, 2], [0, 1, 1, 0]] {
            let mut xp = x.clone();
            xp[idx] += eps;
            let mut xm = x.clone();
            xm[idx] -= eps;
            let num = (f(&xp) - f(&xm)) / (2.0 * eps);
            let rel = (dx[idx] - num).abs() / num.abs().max(1e-8);
            assert!(rel < 1e-4, "bn fd mismatch at {idx:?}: {} vs {num}", dx[idx]);
        }
    }
}
