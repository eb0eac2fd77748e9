//! The six ablation variants and the per-fold evaluation driver.

use super::{angular_error, make_folds, FoldKind, MetricsReport, Protocol};
use crate::calibrate::{
    calibrate, samples_by_indices, select_calibration_samples, CalibrationConfig,
    CalibrationMode,
};
use crate::datamodel::{Dataset, Image};
use crate::error::{Error, Result};
use crate::nets::Checkpoint;
use crate::seed::{self, DOMAIN_EVAL};
use crate::train::{pretrain, BatchSampling, PretrainConfig, ProjectionMode};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Variant {
    /// Random extractor and estimator, calibration only.
    RanNet,
    /// Conventional contrastive baseline: unconstrained crops, common
    /// projection head, mixed-subject batches.
    SimCLR,
    /// SimCLR pipeline with the gaze-specific augmentation swapped in.
    ConEye,
    /// Full method, calibrated end to end.
    ConGaze,
    /// Full method, calibrating the gaze estimator only.
    ConGazeG,
    /// Supervised pretraining of extractor + estimator on the labeled
    /// pretrain split.
    STrain,
}

pub const ALL_VARIANTS: [Variant; 6] = [
    Variant::RanNet,
    Variant::SimCLR,
    Variant::ConEye,
    Variant::ConGaze,
    Variant::ConGazeG,
    Variant::STrain,
];

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::RanNet => "RanNet",
            Variant::SimCLR => "SimCLR",
            Variant::ConEye => "ConEye",
            Variant::ConGaze => "ConGaze",
            Variant::ConGazeG => "ConGaze_g",
            Variant::STrain => "STrain",
        }
    }

    pub fn parse(name: &str) -> Result<Variant> {
        ALL_VARIANTS
            .into_iter()
            .find(|v| v.name().eq_ignore_ascii_case(name))
            .ok_or_else(|| {
                let valid: Vec<&str> = ALL_VARIANTS.iter().map(|v| v.name()).collect();
                Error::validation(format!(
                    "unknown variant {name:?}; valid names: {}",
                    valid.join(", ")
                ))
            })
    }

    pub fn recipe(self) -> VariantRecipe {
        match self {
            Variant::RanNet => VariantRecipe {
                pretraining: Pretraining::None,
                calibration_mode: CalibrationMode::FullFinetune,
            },
            Variant::SimCLR => VariantRecipe {
                pretraining: Pretraining::Contrastive {
                    gaze_constrained: false,
                    projection: ProjectionMode::Common,
                    batch_sampling: BatchSampling::Mixed,
                },
                calibration_mode: CalibrationMode::HeadOnly,
            },
            Variant::ConEye => VariantRecipe {
                pretraining: Pretraining::Contrastive {
                    gaze_constrained: true,
                    projection: ProjectionMode::Common,
                    batch_sampling: BatchSampling::Mixed,
                },
                calibration_mode: CalibrationMode::HeadOnly,
            },
            Variant::ConGaze => VariantRecipe {
                pretraining: Pretraining::Contrastive {
                    gaze_constrained: true,
                    projection: ProjectionMode::SubjectConditional,
                    batch_sampling: BatchSampling::PerSubject,
                },
                calibration_mode: CalibrationMode::FullFinetune,
            },
            Variant::ConGazeG => VariantRecipe {
                pretraining: Pretraining::Contrastive {
                    gaze_constrained: true,
                    projection: ProjectionMode::SubjectConditional,
                    batch_sampling: BatchSampling::PerSubject,
                },
                calibration_mode: CalibrationMode::HeadOnly,
            },
            Variant::STrain => VariantRecipe {
                pretraining: Pretraining::Supervised,
                calibration_mode: CalibrationMode::FullFinetune,
            },
        }
    }
}

/// How a variant obtains its feature extractor.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pretraining {
    None,
    Contrastive {
        gaze_constrained: bool,
        projection: ProjectionMode,
        batch_sampling: BatchSampling,
    },
    Supervised,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VariantRecipe {
    pub pretraining: Pretraining,
    pub calibration_mode: CalibrationMode,
}

/// Shared knobs for one evaluation run. The pretrain template's projection,
/// sampling, and augmentation-constraint fields are overridden per variant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRunConfig {
    pub pretrain: PretrainConfig,
    pub calibration_epochs: usize,
    pub calibration_lr: f64,
    /// Epochs of supervised pretraining for the STrain variant.
    pub strain_epochs: usize,
    pub seed: u64,
}

impl EvalRunConfig {
    pub fn desk_scale(seed: u64) -> Self {
        EvalRunConfig {
            pretrain: PretrainConfig::desk_scale(seed),
            calibration_epochs: 150,
            calibration_lr: 1e-3,
            strain_epochs: 40,
            seed,
        }
    }

    pub fn config_hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        let mut hasher = Sha256::new();
        hasher.update(json.as_bytes());
        format!("{:x}", hasher.finalize())
    }
}

fn extractor_checkpoint(
    variant: Variant,
    pretrain_set: &Dataset,
    cfg: &EvalRunConfig,
    fold_seed: u64,
) -> Result<Checkpoint> {
    let recipe = variant.recipe();
    let mut pc = cfg.pretrain.clone();
    pc.seed = fold_seed;
    match recipe.pretraining {
        Pretraining::None => {
            pc.n_iterations = 0;
            Ok(pretrain(pretrain_set, &pc)?.checkpoint)
        }
        Pretraining::Contrastive { gaze_constrained, projection, batch_sampling } => {
            pc.augment.gaze_constrained = gaze_constrained;
            pc.projection = projection;
            pc.batch_sampling = batch_sampling;
            Ok(pretrain(pretrain_set, &pc)?.checkpoint)
        }
        Pretraining::Supervised => {
            if pretrain_set.samples().iter().any(|s| s.gaze.is_none()) {
                return Err(Error::validation(
                    "STrain needs gaze labels on the pretrain split",
                ));
            }
            // supervised pretraining reuses the calibration loop: start from
            // random init and fine-tune extractor + estimator on all labels
            pc.n_iterations = 0;
            let init = pretrain(pretrain_set, &pc)?.checkpoint;
            let mut cc = CalibrationConfig::new(
                CalibrationMode::FullFinetune,
                pretrain_set.len(),
                seed::derive(fold_seed, &[DOMAIN_EVAL, 1]),
            );
            cc.epochs = cfg.strain_epochs;
            cc.learning_rate = cfg.calibration_lr;
            let outcome = calibrate(&init, pretrain_set.samples(), &cc)?;
            let mut model = outcome.model;
            Ok(model.to_checkpoint(&init.meta, CalibrationMode::FullFinetune))
        }
    }
}

/// Runs one variant under one protocol. For `five_fold` and
/// `leave_one_subject_out` the eval dataset is split by subject and each
/// fold's pretraining sees only the train subjects; for `cross_dataset` the
/// extractor pretrains on `pretrain_set` and every eval subject is tested.
pub fn run_variant(
    variant: Variant,
    protocol: &Protocol,
    pretrain_set: &Dataset,
    eval_set: &Dataset,
    cfg: &EvalRunConfig,
) -> Result<MetricsReport> {
    protocol.validate()?;
    let folds = make_folds(eval_set.n_subjects(), protocol.kind)?;
    let mut per_fold_errors = Vec::with_capacity(folds.len());
    let mut per_repeat_seeds = Vec::with_capacity(folds.len());

    for (fold_index, fold) in folds.iter().enumerate() {
        // leakage guard: pretraining never sees a test subject's images
        let fold_pretrain_set = match protocol.kind {
            FoldKind::CrossDataset => pretrain_set.clone(),
            _ => eval_set.renumber_subjects(&fold.train_subjects),
        };
        let fold_seed = seed::derive(cfg.seed, &[DOMAIN_EVAL, fold_index as u64]);
        let checkpoint = extractor_checkpoint(variant, &fold_pretrain_set, cfg, fold_seed)?;

        let pool = eval_set.renumber_subjects(&fold.test_subjects);
        if pool.len() <= protocol.n_calibration {
            return Err(Error::validation(format!(
                "fold {fold_index}: test pool of {} samples cannot supply {} calibration \
                 samples and a remainder",
                pool.len(),
                protocol.n_calibration
            )));
        }

        let mut fold_error = 0.0;
        let mut seeds = Vec::with_capacity(protocol.n_repeats);
        for repeat in 0..protocol.n_repeats {
            let repeat_seed =
                seed::derive(cfg.seed, &[DOMAIN_EVAL, fold_index as u64, repeat as u64]);
            seeds.push(repeat_seed);
            let mut rng = seed::rng_from_seed(repeat_seed);
            let (cal_idx, eval_idx) =
                select_calibration_samples(pool.len(), protocol.n_calibration, &mut rng)?;
            let cal_samples = samples_by_indices(&pool, &cal_idx);
            let mut cc = CalibrationConfig::new(
                variant.recipe().calibration_mode,
                protocol.n_calibration,
                repeat_seed,
            );
            cc.epochs = cfg.calibration_epochs;
            cc.learning_rate = cfg.calibration_lr;
            let outcome = calibrate(&checkpoint, &cal_samples, &cc)?;
            let mut model = outcome.model;
            let images: Vec<&Image> =
                eval_idx.iter().map(|&i| &pool.samples()[i].image).collect();
            let preds = model.predict(&images)?;
            let mut total = 0.0;
            for (&i, pred) in eval_idx.iter().zip(&preds) {
                let truth = pool.samples()[i].gaze.ok_or_else(|| {
                    Error::validation(format!("eval sample {i} has no gaze label"))
                })?;
                total += angular_error(*pred, truth);
            }
            fold_error += total / eval_idx.len() as f64;
        }
        per_fold_errors.push(fold_error / protocol.n_repeats as f64);
        per_repeat_seeds.push(seeds);
    }

    Ok(MetricsReport::from_folds(
        variant,
        protocol.clone(),
        cfg.config_hash(),
        per_fold_errors,
        per_repeat_seeds,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthface::{generate_dataset, GazeSampling, SynthDatasetSpec};

    #[test]
    fn recipe_registry_covers_all_six_names_exactly_once() {
        let names: Vec<&str> = ALL_VARIANTS.iter().map(|v| v.name()).collect();
        assert_eq!(names, ["RanNet", "SimCLR", "ConEye", "ConGaze", "ConGaze_g", "STrain"]);
        // recipes are mutually exclusive: no two variants share one
        for (i, a) in ALL_VARIANTS.iter().enumerate() {
            for b in &ALL_VARIANTS[i + 1..] {
                assert_ne!(a.recipe(), b.recipe(), "{} and {}", a.name(), b.name());
            }
        }
    }

    #[test]
    fn variant_names_round_trip_through_parse() {
        for v in ALL_VARIANTS {
            assert_eq!(Variant::parse(v.name()).unwrap(), v);
        }
        let err = Variant::parse("SupCon").unwrap_err().to_string();
        for v in ALL_VARIANTS {
            assert!(err.contains(v.name()), "error should list {}: {err}", v.name());
        }
    }

    #[test]
    fn rannet_end_to_end_on_a_tiny_split() {
        let ds = generate_dataset(&SynthDatasetSpec {
            n_subjects: 2,
            images_per_subject: 12,
            image_size: (64, 64),
            gaze_sampling: GazeSampling::Random,
            master_seed: 11,
        })
        .unwrap();
        let protocol = Protocol {
            kind: FoldKind::LeaveOneSubjectOut,
            pretrain_dataset: "synth".into(),
            eval_dataset: "synth".into(),
            n_calibration: 4,
            n_repeats: 2,
        };
        let mut cfg = EvalRunConfig::desk_scale(3);
        cfg.calibration_epochs = 5;
        let report = run_variant(Variant::RanNet, &protocol, &ds, &ds, &cfg).unwrap();
        assert_eq!(report.per_fold_errors.len(), 2);
        assert_eq!(report.per_repeat_seeds[0].len(), 2);
        assert!(report.per_fold_errors.iter().all(|e| e.is_finite() && *e >= 0.0));
        let mean = report.per_fold_errors.iter().sum::<f64>() / 2.0;
        approx::assert_abs_diff_eq!(report.mean, mean, epsilon = 1e-9);
    }

    #[test]
    fn strain_without_labels_is_a_descriptive_error() {
        let ds = generate_dataset(&SynthDatasetSpec {
            n_subjects: 2,
            images_per_subject: 6,
            image_size: (64, 64),
            gaze_sampling: GazeSampling::Random,
            master_seed: 11,
        })
        .unwrap();
        let mut stripped: Vec<_> = ds.samples().to_vec();
        for s in &mut stripped {
            s.gaze = None;
        }
        let unlabeled = Dataset::new(stripped, 2).unwrap();
        let cfg = EvalRunConfig::desk_scale(3);
        let err = extractor_checkpoint(Variant::STrain, &unlabeled, &cfg, 1).unwrap_err();
        assert!(err.to_string().contains("labels"));
    }

    #[test]
    fn calibration_pool_too_small_is_rejected() {
        let ds = generate_dataset(&SynthDatasetSpec {
            n_subjects: 2,
            images_per_subject: 3,
            image_size: (64, 64),
            gaze_sampling: GazeSampling::Random,
            master_seed: 11,
        })
        .unwrap();
        let protocol = Protocol {
            kind: FoldKind::LeaveOneSubjectOut,
            pretrain_dataset: "synth".into(),
            eval_dataset: "synth".into(),
            n_calibration: 3,
            n_repeats: 1,
        };
        let cfg = EvalRunConfig::desk_scale(3);
        let err = run_variant(Variant::RanNet, &protocol, &ds, &ds, &cfg).unwrap_err();
        assert!(err.to_string().contains("calibration"));
    }
}
