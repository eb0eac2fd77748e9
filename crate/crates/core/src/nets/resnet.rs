//! ResNet-18 feature extractor with the dense layer removed.
//!
//! The stem conv plus the 16 convolutions inside the eight basic blocks give
//! 17 conv layers addressable by index 1..=17; the 1x1 projection shortcuts
//! are not part of that numbering.

use crate::nn::{BatchNorm2d, Conv2d, GlobalAvgPool, MaxPool2d, Param};
use ndarray::{Array2, Array4};
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone)]
struct BasicBlock {
    conv1: Conv2d,
    bn1: BatchNorm2d,
    conv2: Conv2d,
    bn2: BatchNorm2d,
    downsample: Option<(Conv2d, BatchNorm2d)>,
    mask1: Option<Array4<f64>>,
    mask2: Option<Array4<f64>>,
}

impl BasicBlock {
    fn new(c_in: usize, c_out: usize, stride: usize, rng: &mut ChaCha8Rng) -> Self {
        let downsample = if stride != 1 || c_in != c_out {
            Some((Conv2d::new(c_in, c_out, 1, stride, 0, rng), BatchNorm2d::new(c_out)))
        } else {
            None
        };
        BasicBlock {
            conv1: Conv2d::new(c_in, c_out, 3, stride, 1, rng),
            bn1: BatchNorm2d::new(c_out),
            conv2: Conv2d::new(c_out, c_out, 3, 1, 1, rng),
            bn2: BatchNorm2d::new(c_out),
            downsample,
            mask1: None,
            mask2: None,
        }
    }

    fn forward(&mut self, x: &Array4<f64>, train: bool) -> Array4<f64> {
        let mut main = self.bn1.forward(&self.conv1.forward(x, train), train);
        if train {
            self.mask1 = Some(main.mapv(|v| if v > 0.0 { 1.0 } else { 0.0 }));
        }
        main.mapv_inplace(|v| v.max(0.0));
        let main = self.bn2.forward(&self.conv2.forward(&main, train), train);
        let identity = match &mut self.downsample {
            Some((conv, bn)) => bn.forward(&conv.forward(x, train), train),
            None => x.clone(),
        };
        let mut y = main + identity;
        if train {
            self.mask2 = Some(y.mapv(|v| if v > 0.0 { 1.0 } else { 0.0 }));
        }
        y.mapv_inplace(|v| v.max(0.0));
        y
    }

    fn backward(&mut self, dy: &Array4<f64>) -> Array4<f64> {
        let dsum = dy * &self.mask2.take().expect("backward before forward");
        let dmain1 = self.bn2.backward(&dsum);
        let dmain1 = self.conv2.backward(&dmain1);
        let dmain1 = &dmain1 * &self.mask1.take().expect("backward before forward");
        let dx_main = self.conv1.backward(&self.bn1.backward(&dmain1));
        let dx_skip = match &mut self.downsample {
            Some((conv, bn)) => conv.backward(&bn.backward(&dsum)),
            None => dsum,
        };
        dx_main + dx_skip
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut p = self.conv1.params_mut();
        p.extend(self.bn1.params_mut());
        p.extend(self.conv2.params_mut());
        p.extend(self.bn2.params_mut());
        if let Some((conv, bn)) = &mut self.downsample {
            p.extend(conv.params_mut());
            p.extend(bn.params_mut());
        }
        p
    }

    fn named_params_mut(&mut self, prefix: &str) -> Vec<(String, &mut Param)> {
        let mut out = vec![
            (format!("{prefix}.conv1.weight"), &mut self.conv1.weight),
            (format!("{prefix}.conv1.bias"), &mut self.conv1.bias),
            (format!("{prefix}.bn1.gamma"), &mut self.bn1.gamma),
            (format!("{prefix}.bn1.beta"), &mut self.bn1.beta),
            (format!("{prefix}.conv2.weight"), &mut self.conv2.weight),
            (format!("{prefix}.conv2.bias"), &mut self.conv2.bias),
            (format!("{prefix}.bn2.gamma"), &mut self.bn2.gamma),
            (format!("{prefix}.bn2.beta"), &mut self.bn2.beta),
        ];
        if let Some((conv, bn)) = &mut self.downsample {
            out.push((format!("{prefix}.down.conv.weight"), &mut conv.weight));
            out.push((format!("{prefix}.down.conv.bias"), &mut conv.bias));
            out.push((format!("{prefix}.down.bn.gamma"), &mut bn.gamma));
            out.push((format!("{prefix}.down.bn.beta"), &mut bn.beta));
        }
        out
    }

    fn named_buffers_mut(&mut self, prefix: &str) -> Vec<(String, &mut ndarray::Array1<f64>)> {
        let mut out = vec![
            (format!("{prefix}.bn1.running_mean"), &mut self.bn1.running_mean),
            (format!("{prefix}.bn1.running_var"), &mut self.bn1.running_var),
            (format!("{prefix}.bn2.running_mean"), &mut self.bn2.running_mean),
            (format!("{prefix}.bn2.running_var"), &mut self.bn2.running_var),
        ];
        if let Some((_, bn)) = &mut self.downsample {
            out.push((format!("{prefix}.down.bn.running_mean"), &mut bn.running_mean));
            out.push((format!("{prefix}.down.bn.running_var"), &mut bn.running_var));
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct ResNet18 {
    stem_conv: Conv2d,
    stem_bn: BatchNorm2d,
    stem_mask: Option<Array4<f64>>,
    pool: MaxPool2d,
    blocks: Vec<BasicBlock>,
    gap: GlobalAvgPool,
}

impl ResNet18 {
    pub fn new(rng: &mut ChaCha8Rng) -> Self {
        let mut blocks = Vec::new();
        let stage_channels = [64usize, 128, 256, 512];
        let mut c_in = 64;
        for (si, &c_out) in stage_channels.iter().enumerate() {
            let first_stride = if si == 0 { 1 } else { 2 };
            blocks.push(BasicBlock::new(c_in, c_out, first_stride, rng));
            blocks.push(BasicBlock::new(c_out, c_out, 1, rng));
            c_in = c_out;
        }
        ResNet18 {
            stem_conv: Conv2d::new(3, 64, 7, 2, 3, rng),
            stem_bn: BatchNorm2d::new(64),
            stem_mask: None,
            pool: MaxPool2d::new(3, 2, 1),
            blocks,
            gap: GlobalAvgPool::new(),
        }
    }

    pub fn forward(&mut self, x: &Array4<f64>, train: bool) -> Array2<f64> {
        let mut cur = self.stem_bn.forward(&self.stem_conv.forward(x, train), train);
        if train {
            self.stem_mask = Some(cur.mapv(|v| if v > 0.0 { 1.0 } else { 0.0 }));
        }
        cur.mapv_inplace(|v| v.max(0.0));
        cur = self.pool.forward(&cur, train);
        for block in &mut self.blocks {
            cur = block.forward(&cur, train);
        }
        self.gap.forward(&cur, train)
    }

    pub fn backward(&mut self, dh: &Array2<f64>) -> Array4<f64> {
        let mut grad = self.gap.backward(dh);
        for block in self.blocks.iter_mut().rev() {
            grad = block.backward(&grad);
        }
        grad = self.pool.backward(&grad);
        grad = &grad * &self.stem_mask.take().expect("backward before forward");
        self.stem_conv.backward(&self.stem_bn.backward(&grad))
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut p = self.stem_conv.params_mut();
        p.extend(self.stem_bn.params_mut());
        for b in &mut self.blocks {
            p.extend(b.params_mut());
        }
        p
    }

    pub fn named_params_mut(&mut self) -> Vec<(String, &mut Param)> {
        let mut out = vec![
            ("stem.conv.weight".to_string(), &mut self.stem_conv.weight),
            ("stem.conv.bias".to_string(), &mut self.stem_conv.bias),
            ("stem.bn.gamma".to_string(), &mut self.stem_bn.gamma),
            ("stem.bn.beta".to_string(), &mut self.stem_bn.beta),
        ];
        for (i, b) in self.blocks.iter_mut().enumerate() {
            out.extend(b.named_params_mut(&format!("block{i}")));
        }
        out
    }

    /// Batch-norm running statistics — persisted alongside params so a
    /// checkpoint restores inference behavior exactly.
    pub fn named_buffers_mut(&mut self) -> Vec<(String, &mut ndarray::Array1<f64>)> {
        let mut out = vec![
            ("stem.bn.running_mean".to_string(), &mut self.stem_bn.running_mean),
            ("stem.bn.running_var".to_string(), &mut self.stem_bn.running_var),
        ];
        for (i, b) in self.blocks.iter_mut().enumerate() {
            out.extend(b.named_buffers_mut(&format!("block{i}")));
        }
        out
    }

    /// The 17 indexed conv layers: stem conv, then conv1/conv2 of each block.
    pub fn conv_layers_mut(&mut self) -> Vec<&mut Conv2d> {
        let mut out: Vec<&mut Conv2d> = vec![&mut self.stem_conv];
        for b in &mut self.blocks {
            out.push(&mut b.conv1);
            out.push(&mut b.conv2);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_chacha::rand_core::SeedableRng;

    #[test]
    fn exposes_seventeen_indexed_conv_layers() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut net = ResNet18::new(&mut rng);
        assert_eq!(net.conv_layers_mut().len(), 17);
    }

    #[test]
    fn forward_shape_on_224() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut net = ResNet18::new(&mut rng);
        let x = Array4::from_elem((1, 3, 224, 224), 0.5);
        let h = net.forward(&x, false);
        assert_eq!(h.dim(), (1, 512));
        assert!(h.iter().all(|v| v.is_finite()));
    }
}
