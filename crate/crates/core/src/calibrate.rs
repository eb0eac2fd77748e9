//! Few-shot supervised calibration.
//!
//! Starting from a pretrained feature extractor, a small two-layer gaze
//! estimator is fitted on a handful of labeled samples. `head_only` freezes
//! the extractor (its weights stay bit-identical to the checkpoint);
//! `full_finetune` updates the extractor and the estimator jointly.

use crate::datamodel::{Dataset, FaceSample, GazeDirection, Image};
use crate::error::{Error, Result};
use crate::nets::{
    images_to_batch, Backbone, Checkpoint, CheckpointMeta, GazeEstimator,
};
use crate::nn::{Adam, Param};
use crate::seed::{self, DOMAIN_CALIBRATE};
use crate::train::load_backbone;
use ndarray::Array2;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::Path;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CalibrationMode {
    /// Fine-tune the extractor and the estimator together.
    FullFinetune,
    /// Fit the estimator only; the extractor stays frozen.
    HeadOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegressionLoss {
    /// Mean absolute error on (pitch, yaw) in radians.
    Mae,
    /// Mean squared error alternative.
    Mse,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationConfig {
    pub mode: CalibrationMode,
    pub n_samples: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub loss: RegressionLoss,
    pub seed: u64,
}

impl CalibrationConfig {
    pub fn new(mode: CalibrationMode, n_samples: usize, seed: u64) -> Self {
        CalibrationConfig {
            mode,
            n_samples,
            epochs: 150,
            learning_rate: 1e-3,
            loss: RegressionLoss::Mae,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_samples < 1 {
            return Err(Error::validation("n_samples must be >= 1"));
        }
        if self.epochs < 1 {
            return Err(Error::validation("epochs must be >= 1"));
        }
        if self.learning_rate < 0.0 {
            return Err(Error::validation("learning_rate must be non-negative"));
        }
        Ok(())
    }
}

/// A calibrated model: extractor plus fitted estimator.
#[derive(Debug, Clone)]
pub struct CalibratedModel {
    pub backbone: Backbone,
    pub estimator: GazeEstimator,
}

impl CalibratedModel {
    /// Predicts gaze for a batch of images (inference mode).
    pub fn predict(&mut self, images: &[&Image]) -> Result<Vec<GazeDirection>> {
        let x = images_to_batch(images);
        let h = self.backbone.forward(&x, false)?;
        let y = self.estimator.forward(&h, false)?;
        y.rows()
            .into_iter()
            .map(|row| {
                let pitch =
                    row[0].clamp(-std::f64::consts::FRAC_PI_2, std::f64::consts::FRAC_PI_2);
                let yaw = row[1].clamp(-std::f64::consts::PI, std::f64::consts::PI);
                GazeDirection::new(pitch, yaw)
            })
            .collect()
    }

    /// Serializes the extractor and estimator weights.
    pub fn to_checkpoint(&mut self, source_meta: &CheckpointMeta, mode: CalibrationMode) -> Checkpoint {
        let mut tensors = BTreeMap::new();
        for (name, p) in
            self.backbone.named_params_mut().into_iter().chain(self.estimator.named_params_mut())
        {
            tensors.insert(name, p.value.clone());
        }
        for (name, buf) in self.backbone.named_buffers_mut() {
            tensors.insert(name, buf.clone().into_dyn());
        }
        let mut meta = source_meta.clone();
        meta.adam_t = None;
        meta.notes.insert(
            "calibration_mode".to_string(),
            match mode {
                CalibrationMode::FullFinetune => "full_finetune",
                CalibrationMode::HeadOnly => "head_only",
            }
            .to_string(),
        );
        Checkpoint { meta, tensors }
    }
}

/// JSON record of one calibration run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CalibrationRecord {
    pub mode: CalibrationMode,
    pub n_samples: usize,
    pub seed: u64,
    pub final_train_loss: f64,
}

impl CalibrationRecord {
    pub fn write(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }
}

/// Calibration result: the model, per-epoch mean training losses, record.
pub struct CalibrationOutcome {
    pub model: CalibratedModel,
    pub epoch_losses: Vec<f64>,
    pub record: CalibrationRecord,
}

fn loss_and_grad(
    pred: &Array2<f64>,
    target: &Array2<f64>,
    kind: RegressionLoss,
) -> (f64, Array2<f64>) {
    let diff = pred - target;
    let n = diff.len() as f64;
    match kind {
        RegressionLoss::Mae => {
            let loss = diff.mapv(f64::abs).sum() / n;
            (loss, diff.mapv(|d| d.signum() / n))
        }
        RegressionLoss::Mse => {
            let loss = diff.mapv(|d| d * d).sum() / n;
            (loss, diff.mapv(|d| 2.0 * d / n))
        }
    }
}

fn targets_of(samples: &[&FaceSample]) -> Result<Array2<f64>> {
    let mut t = Array2::zeros((samples.len(), 2));
    for (i, s) in samples.iter().enumerate() {
        let g = s.gaze.ok_or_else(|| {
            Error::validation(format!(
                "sample {} of subject {} has no gaze label",
                s.image_index, s.subject_index
            ))
        })?;
        t[[i, 0]] = g.pitch;
        t[[i, 1]] = g.yaw;
    }
    Ok(t)
}

/// Fits the estimator (and optionally the extractor) on labeled samples.
pub fn calibrate(
    checkpoint: &Checkpoint,
    labeled_samples: &[FaceSample],
    config: &CalibrationConfig,
) -> Result<CalibrationOutcome> {
    config.validate()?;
    if labeled_samples.is_empty() {
        return Err(Error::validation("calibration needs at least one labeled sample"));
    }
    let refs: Vec<&FaceSample> = labeled_samples.iter().collect();
    let targets = targets_of(&refs)?;
    let mut backbone = load_backbone(checkpoint)?;
    let mut estimator = GazeEstimator::new(
        backbone.feature_dim(),
        &mut seed::rng(config.seed, &[DOMAIN_CALIBRATE]),
    );
    let mut optimizer = Adam::new(config.learning_rate);
    let n = labeled_samples.len();
    let batch_size = n.min(32);
    let mut order: Vec<usize> = (0..n).collect();
    let mut shuffle_rng = seed::rng(config.seed, &[DOMAIN_CALIBRATE, 1]);
    let mut epoch_losses = Vec::with_capacity(config.epochs);

    // frozen extractor: features are computed once, which both guarantees the
    // bit-identical-extractor contract and avoids redundant conv passes
    let frozen_features: Option<Array2<f64>> = match config.mode {
        CalibrationMode::HeadOnly => {
            let images: Vec<&Image> = labeled_samples.iter().map(|s| &s.image).collect();
            let x = images_to_batch(&images);
            Some(backbone.forward(&x, false)?)
        }
        CalibrationMode::FullFinetune => None,
    };

    for _epoch in 0..config.epochs {
        // cosine decay to zero: fine-tuning with a constant Adam step keeps
        // bouncing around the optimum; annealing makes late epochs settle
        let progress = _epoch as f64 / config.epochs as f64;
        optimizer.lr =
            config.learning_rate * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos());
        order.shuffle(&mut shuffle_rng);
        let mut epoch_loss = 0.0;
        let mut seen = 0.0;
        for chunk in order.chunks(batch_size) {
            let batch_targets = {
                let mut t = Array2::zeros((chunk.len(), 2));
                for (bi, &i) in chunk.iter().enumerate() {
                    t.row_mut(bi).assign(&targets.row(i));
                }
                t
            };
            let (loss, dpred) = match &frozen_features {
                Some(feat) => {
                    let mut hb = Array2::zeros((chunk.len(), feat.ncols()));
                    for (bi, &i) in chunk.iter().enumerate() {
                        hb.row_mut(bi).assign(&feat.row(i));
                    }
                    let pred = estimator.forward(&hb, true)?;
                    let (loss, dpred) = loss_and_grad(&pred, &batch_targets, config.loss);
                    for p in estimator.params_mut() {
                        p.zero_grad();
                    }
                    estimator.backward(&dpred);
                    let mut params = estimator.params_mut();
                    optimizer.step(&mut params);
                    (loss, dpred)
                }
                None => {
                    let images: Vec<&Image> =
                        chunk.iter().map(|&i| &labeled_samples[i].image).collect();
                    let x = images_to_batch(&images);
                    let h = backbone.forward(&x, true)?;
                    let pred = estimator.forward(&h, true)?;
                    let (loss, dpred) = loss_and_grad(&pred, &batch_targets, config.loss);
                    for p in backbone.params_mut().into_iter().chain(estimator.params_mut()) {
                        p.zero_grad();
                    }
                    let dh = estimator.backward(&dpred);
                    backbone.backward(&dh);
                    let mut params: Vec<&mut Param> = backbone
                        .params_mut()
                        .into_iter()
                        .chain(estimator.params_mut())
                        .collect();
                    optimizer.step(&mut params);
                    (loss, dpred)
                }
            };
            let _ = dpred;
            if !loss.is_finite() {
                return Err(Error::validation(format!(
                    "non-finite calibration loss at epoch {_epoch}"
                )));
            }
            epoch_loss += loss * chunk.len() as f64;
            seen += chunk.len() as f64;
        }
        epoch_losses.push(epoch_loss / seen);
    }

    let final_train_loss = *epoch_losses.last().expect("epochs >= 1");
    Ok(CalibrationOutcome {
        model: CalibratedModel { backbone, estimator },
        epoch_losses,
        record: CalibrationRecord {
            mode: config.mode,
            n_samples: labeled_samples.len(),
            seed: config.seed,
            final_train_loss,
        },
    })
}

/// Splits a pool into a uniformly sampled calibration set of `n` indices and
/// the disjoint evaluation remainder.
pub fn select_calibration_samples(
    pool_size: usize,
    n: usize,
    rng: &mut rand_chacha::ChaCha8Rng,
) -> Result<(Vec<usize>, Vec<usize>)> {
    if pool_size <= n {
        return Err(Error::validation(format!(
            "pool of {pool_size} samples cannot supply {n} calibration samples and a remainder"
        )));
    }
    let mut indices: Vec<usize> = (0..pool_size).collect();
    indices.shuffle(rng);
    let mut selection = indices[..n].to_vec();
    let mut remainder = indices[n..].to_vec();
    selection.sort_unstable();
    remainder.sort_unstable();
    Ok((selection, remainder))
}

/// Convenience: picks samples by index from a dataset.
pub fn samples_by_indices(dataset: &Dataset, indices: &[usize]) -> Vec<FaceSample> {
    indices.iter().map(|&i| dataset.samples()[i].clone()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthface::{generate_dataset, GazeSampling, SynthDatasetSpec};
    use crate::train::{pretrain, PretrainConfig};

    fn dataset() -> Dataset {
        generate_dataset(&SynthDatasetSpec {
            n_subjects: 2,
            images_per_subject: 60,
            image_size: (64, 64),
            gaze_sampling: GazeSampling::Random,
            master_seed: 77,
        })
        .unwrap()
    }

    fn quick_checkpoint(ds: &Dataset) -> Checkpoint {
        let mut config = PretrainConfig::desk_scale(3);
        config.batch_size = 4;
        config.n_iterations = 2;
        pretrain(ds, &config).unwrap().checkpoint
    }

    #[test]
    fn head_only_leaves_extractor_bit_identical() {
        let ds = dataset();
        let ckpt = quick_checkpoint(&ds);
        let mut config = CalibrationConfig::new(CalibrationMode::HeadOnly, 6, 9);
        config.epochs = 3;
        let samples: Vec<FaceSample> = ds.samples()[..6].to_vec();
        let mut outcome = calibrate(&ckpt, &samples, &config).unwrap();
        for (name, p) in outcome.model.backbone.named_params_mut() {
            assert_eq!(
                &p.value,
                ckpt.tensor(&name).unwrap(),
                "extractor tensor {name} changed in head_only mode"
            );
        }
    }

    #[test]
    fn full_finetune_updates_extractor() {
        let ds = dataset();
        let ckpt = quick_checkpoint(&ds);
        let mut config = CalibrationConfig::new(CalibrationMode::FullFinetune, 6, 9);
        config.epochs = 2;
        let samples: Vec<FaceSample> = ds.samples()[..6].to_vec();
        let mut outcome = calibrate(&ckpt, &samples, &config).unwrap();
        let changed = outcome
            .model
            .backbone
            .named_params_mut()
            .into_iter()
            .any(|(name, p)| &p.value != ckpt.tensor(&name).unwrap());
        assert!(changed, "full_finetune must update extractor weights");
    }

    #[test]
    fn zero_learning_rate_is_a_no_op_on_weights() {
        let ds = dataset();
        let ckpt = quick_checkpoint(&ds);
        let mut config = CalibrationConfig::new(CalibrationMode::HeadOnly, 4, 9);
        config.epochs = 1;
        config.learning_rate = 0.0;
        let samples: Vec<FaceSample> = ds.samples()[..4].to_vec();
        let mut outcome = calibrate(&ckpt, &samples, &config).unwrap();
        let mut fresh = GazeEstimator::new(128, &mut seed::rng(config.seed, &[DOMAIN_CALIBRATE]));
        for (a, b) in outcome.model.estimator.params_mut().iter().zip(fresh.params_mut()) {
            assert_eq!(a.value, b.value);
        }
    }

    #[test]
    fn unlabeled_sample_rejected() {
        let ds = dataset();
        let ckpt = quick_checkpoint(&ds);
        let config = CalibrationConfig::new(CalibrationMode::HeadOnly, 2, 9);
        let mut samples: Vec<FaceSample> = ds.samples()[..2].to_vec();
        samples[1].gaze = None;
        assert!(calibrate(&ckpt, &samples, &config).is_err());
    }

    #[test]
    fn calibration_loss_decreases() {
        let ds = dataset();
        let ckpt = quick_checkpoint(&ds);
        let mut config = CalibrationConfig::new(CalibrationMode::HeadOnly, 50, 4);
        config.epochs = 40;
        let samples: Vec<FaceSample> = ds.samples()[..50].to_vec();
        let outcome = calibrate(&ckpt, &samples, &config).unwrap();
        assert_eq!(outcome.epoch_losses.len(), 40);
        let first = outcome.epoch_losses[0];
        let last = *outcome.epoch_losses.last().unwrap();
        assert!(last < first, "loss did not decrease: {first} -> {last}");
        // Smoothness: mini-batch noise allows small upticks, so accept a
        // 1e-3 rad tolerance and require 90% of transitions non-increasing.
        let non_increasing = outcome
            .epoch_losses
            .windows(2)
            .filter(|w| w[1] <= w[0] + 1e-3)
            .count();
        assert!(
            non_increasing as f64 >= 0.9 * (outcome.epoch_losses.len() - 1) as f64,
            "only {non_increasing}/39 transitions non-increasing"
        );
    }

    #[test]
    fn selection_is_disjoint_and_deterministic() {
        let mut rng = seed::rng_from_seed(5);
        let (sel, rem) = select_calibration_samples(20, 19, &mut rng).unwrap();
        assert_eq!(rem.len(), 1);
        assert!(sel.iter().all(|i| !rem.contains(i)));

        let mut rng_a = seed::rng_from_seed(6);
        let mut rng_b = seed::rng_from_seed(6);
        let (a, _) = select_calibration_samples(50, 10, &mut rng_a).unwrap();
        let (b, _) = select_calibration_samples(50, 10, &mut rng_b).unwrap();
        assert_eq!(a, b);
        assert!(select_calibration_samples(10, 10, &mut rng_a).is_err());
    }

    #[test]
    fn mse_option_trains_too() {
        let ds = dataset();
        let ckpt = quick_checkpoint(&ds);
        let mut config = CalibrationConfig::new(CalibrationMode::HeadOnly, 6, 9);
        config.epochs = 5;
        
        let samples: Vec<FaceSample> = ds.samples()[..6].to_vec();
        let outcome = calibrate(&ckpt, &samples, &config).unwrap();
        assert!(outcome.epoch_losses.iter().all(|l| l.is_finite()));
    }
}
