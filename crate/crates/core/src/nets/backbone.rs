//! Shared feature extractor F: a desk-scale tiny conv net and a ResNet-18
//! variant with the dense layer removed.

use super::resnet::ResNet18;
use crate::error::{Error, Result};
use crate::nn::{BatchNorm2d, Conv2d, GlobalAvgPool, Param};
use ndarray::{Array2, Array4};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackboneVariant {
    Resnet18NoDense,
    TinyConv,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BackboneConfig {
    pub variant: BackboneVariant,
    pub input_size: (usize, usize),
    pub feature_dim: usize,
}

impl BackboneConfig {
    pub fn tiny() -> Self {
        BackboneConfig {
            variant: BackboneVariant::TinyConv,
            input_size: (64, 64),
            feature_dim: 128,
        }
    }

    pub fn resnet18() -> Self {
        BackboneConfig {
            variant: BackboneVariant::Resnet18NoDense,
            input_size: (224, 224),
            feature_dim: 512,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.feature_dim == 0 {
            return Err(Error::validation("feature_dim must be positive"));
        }
        match self.variant {
            BackboneVariant::TinyConv if self.input_size != (64, 64) => {
                Err(Error::validation("tiny_conv accepts 64x64 input"))
            }
            BackboneVariant::Resnet18NoDense if self.input_size != (224, 224) => {
                Err(Error::validation("resnet18_no_dense accepts 224x224 input"))
            }
            _ => Ok(()),
        }
    }
}

/// Four stride-2 conv-bn-relu blocks, then global average pooling.
/// 64x64 input -> 32 -> 16 -> 8 -> 4 spatial, feature dim 128. The batch
/// norms keep feature magnitudes bounded under the scale-invariant
/// contrastive objective.
#[derive(Debug, Clone)]
pub struct TinyConv {
    convs: Vec<Conv2d>,
    bns: Vec<BatchNorm2d>,
    relu_masks: Vec<Array4<f64>>,
    gap: GlobalAvgPool,
}

const TINY_CHANNELS: [usize; 4] = [16, 32, 64, 128];

impl TinyConv {
    pub fn new(rng: &mut ChaCha8Rng) -> Self {
        let mut convs = Vec::new();
        let mut bns = Vec::new();
        let mut c_in = 3;
        for &c_out in &TINY_CHANNELS {
            convs.push(Conv2d::new(c_in, c_out, 3, 2, 1, rng));
            bns.push(BatchNorm2d::new(c_out));
            c_in = c_out;
        }
        TinyConv { convs, bns, relu_masks: Vec::new(), gap: GlobalAvgPool::new() }
    }

    pub fn forward(&mut self, x: &Array4<f64>, train: bool) -> Array2<f64> {
        let mut cur = x.clone();
        self.relu_masks.clear();
        for (conv, bn) in self.convs.iter_mut().zip(self.bns.iter_mut()) {
            let y = bn.forward(&conv.forward(&cur, train), train);
            if train {
                self.relu_masks.push(y.mapv(|v| if v > 0.0 { 1.0 } else { 0.0 }));
            }
            cur = y.mapv(|v| v.max(0.0));
        }
        self.gap.forward(&cur, train)
    }

    pub fn backward(&mut self, dh: &Array2<f64>) -> Array4<f64> {
        let mut grad = self.gap.backward(dh);
        let masks: Vec<Array4<f64>> = self.relu_masks.drain(..).collect();
        for ((conv, bn), mask) in
            self.convs.iter_mut().zip(self.bns.iter_mut()).rev().zip(masks.into_iter().rev())
        {
            grad = conv.backward(&bn.backward(&(&grad * &mask)));
        }
        grad
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut p: Vec<&mut Param> = Vec::new();
        for (conv, bn) in self.convs.iter_mut().zip(self.bns.iter_mut()) {
            p.extend(conv.params_mut());
            p.extend(bn.params_mut());
        }
        p
    }

    pub fn named_params_mut(&mut self) -> Vec<(String, &mut Param)> {
        let mut out = Vec::new();
        for (i, (c, bn)) in self.convs.iter_mut().zip(self.bns.iter_mut()).enumerate() {
            out.push((format!("conv{}.weight", i + 1), &mut c.weight));
            out.push((format!("conv{}.bias", i + 1), &mut c.bias));
            out.push((format!("bn{}.gamma", i + 1), &mut bn.gamma));
            out.push((format!("bn{}.beta", i + 1), &mut bn.beta));
        }
        out
    }

    pub fn named_buffers_mut(&mut self) -> Vec<(String, &mut ndarray::Array1<f64>)> {
        let mut out = Vec::new();
        for (i, bn) in self.bns.iter_mut().enumerate() {
            out.push((format!("bn{}.running_mean", i + 1), &mut bn.running_mean));
            out.push((format!("bn{}.running_var", i + 1), &mut bn.running_var));
        }
        out
    }

    pub fn conv_layers_mut(&mut self) -> Vec<&mut Conv2d> {
        self.convs.iter_mut().collect()
    }
}

/// The shared feature extractor, selected by [`BackboneConfig`].
#[derive(Debug, Clone)]
pub enum Backbone {
    Tiny(TinyConv),
    Resnet(ResNet18),
}

impl Backbone {
    pub fn new(config: &BackboneConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        config.validate()?;
        Ok(match config.variant {
            BackboneVariant::TinyConv => Backbone::Tiny(TinyConv::new(rng)),
            BackboneVariant::Resnet18NoDense => Backbone::Resnet(ResNet18::new(rng)),
        })
    }

    pub fn config(&self) -> BackboneConfig {
        match self {
            Backbone::Tiny(_) => BackboneConfig::tiny(),
            Backbone::Resnet(_) => BackboneConfig::resnet18(),
        }
    }

    /// `(B, 3, H, W)` -> `(B, D_h)`. Validates spatial size against the config.
    pub fn forward(&mut self, x: &Array4<f64>, train: bool) -> Result<Array2<f64>> {
        let cfg = self.config();
        let (_, c, h, w) = x.dim();
        if c != 3 || (h, w) != cfg.input_size {
            return Err(Error::validation(format!(
                "backbone expects 3x{}x{} input, got {c}x{h}x{w}",
                cfg.input_size.0, cfg.input_size.1
            )));
        }
        Ok(match self {
            Backbone::Tiny(t) => t.forward(x, train),
            Backbone::Resnet(r) => r.forward(x, train),
        })
    }

    pub fn backward(&mut self, dh: &Array2<f64>) -> Array4<f64> {
        match self {
            Backbone::Tiny(t) => t.backward(dh),
            Backbone::Resnet(r) => r.backward(dh),
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        match self {
            Backbone::Tiny(t) => t.params_mut(),
            Backbone::Resnet(r) => r.params_mut(),
        }
    }

    pub fn named_params_mut(&mut self) -> Vec<(String, &mut Param)> {
        match self {
            Backbone::Tiny(t) => t.named_params_mut(),
            Backbone::Resnet(r) => r.named_params_mut(),
        }
    }

    /// Non-trainable persistent state (batch-norm running statistics).
    pub fn named_buffers_mut(&mut self) -> Vec<(String, &mut ndarray::Array1<f64>)> {
        match self {
            Backbone::Tiny(t) => t.named_buffers_mut(),
            Backbone::Resnet(r) => r.named_buffers_mut(),
        }
    }

    /// Conv layers addressable by 1-based index (17 for resnet18, 4 for tiny).
    pub fn conv_layers_mut(&mut self) -> Vec<&mut Conv2d> {
        match self {
            Backbone::Tiny(t) => t.conv_layers_mut(),
            Backbone::Resnet(r) => r.conv_layers_mut(),
        }
    }

    pub fn conv_layer_count(&self) -> usize {
        match self {
            Backbone::Tiny(_) => 4,
            Backbone::Resnet(_) => 17,
        }
    }

    pub fn feature_dim(&self) -> usize {
        self.config().feature_dim
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;

    #[test]
    fn tiny_conv_shape_and_determinism() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut net = Backbone::new(&BackboneConfig::tiny(), &mut rng).unwrap();
        let x0 = Array4::from_shape_fn((1, 3, 64, 64), |_| rng.gen_range(0.0..1.0));
        // duplicate image in one batch -> identical rows
        let mut x = Array4::zeros((2, 3, 64, 64));
        x.index_axis_mut(ndarray::Axis(0), 0).assign(&x0.index_axis(ndarray::Axis(0), 0));
        x.index_axis_mut(ndarray::Axis(0), 1).assign(&x0.index_axis(ndarray::Axis(0), 0));
        let h = net.forward(&x, false).unwrap();
        assert_eq!(h.dim(), (2, 128));
        assert!(h.iter().all(|v| v.is_finite()));
        assert!(h.iter().any(|&v| v != 0.0));
        for j in 0..128 {
            assert_eq!(h[[0, j]], h[[1, j]]);
        }
    }

    #[test]
    fn shape_mismatch_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut net = Backbone::new(&BackboneConfig::tiny(), &mut rng).unwrap();
        let x = Array4::zeros((1, 3, 32, 32));
        assert!(net.forward(&x, false).is_err());
    }

    #[test]
    fn tiny_conv_exposes_four_indexed_conv_layers() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut net = Backbone::new(&BackboneConfig::tiny(), &mut rng).unwrap();
        assert_eq!(net.conv_layer_count(), 4);
        assert_eq!(net.conv_layers_mut().len(), 4);
    }
}
