//! Unsupervised pretraining loop.
//!
//! Each iteration samples a batch of images from one subject, builds two
//! augmented views per image, pushes both view sets through the shared
//! feature extractor F and a projection head S, evaluates the
//! subject-specific contrastive loss, and performs exactly one Adam step on
//! F and S jointly. The conventional-contrastive baseline runs the same loop
//! with mixed-subject batches and a common (identity-free) projection.

use crate::augment::{self, AugmentConfig, ColorParams, CropParams};
use crate::datamodel::{Dataset, FaceSample, Image};
use crate::error::{Error, Result};
use crate::loss::{batch_loss_with_grad, LossConfig};
use crate::nets::{
    images_to_batch, Backbone, BackboneConfig, Checkpoint, CheckpointMeta, CommonProjection,
    ProjectionConfig, SubjectConditionalProjection,
};
use crate::nn::Adam;
use crate::seed::{self, DOMAIN_INIT, DOMAIN_PRETRAIN};
use ndarray::{concatenate, Array2, Axis};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::path::Path;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Adam,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProjectionMode {
    /// One embedding space per subject (one-hot identity input).
    SubjectConditional,
    /// Single shared embedding space.
    Common,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BatchSampling {
    /// All images of a batch come from one uniformly chosen subject.
    PerSubject,
    /// Images drawn uniformly from the whole dataset.
    Mixed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PretrainConfig {
    pub backbone: BackboneConfig,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    pub n_iterations: usize,
    pub loss: LossConfig,
    pub augment: AugmentConfig,
    pub projection: ProjectionMode,
    pub batch_sampling: BatchSampling,
    pub seed: u64,
}

impl PretrainConfig {
    /// Desk-scale default: tiny backbone, batch 16, 500 iterations.
    ///
    /// The learning rate and augmentation strengths are softened relative to
    /// the full-scale defaults: at 500 iterations on a small CPU-sized net,
    /// full-strength crops (area 0.3..1.0) plus 0.4-strength color jitter keep
    /// the contrastive loss pinned at its log-K chance floor, while area
    /// 0.8..1.0 crops with 0.1-strength color let the loss drop well below it
    /// and produce features that calibrate to a few hundredths of a radian.
    pub fn desk_scale(seed: u64) -> Self {
        let mut augment = AugmentConfig::default();
        augment.crop =
            CropParams { area_fraction_range: (0.8, 1.0), aspect_ratio_range: (0.9, 1.11) };
        augment.color = ColorParams {
            brightness: 0.1,
            contrast: 0.1,
            saturation: 0.1,
            hue: 0.02,
            grayscale_probability: 0.0,
        };
        PretrainConfig {
            backbone: BackboneConfig::tiny(),
            batch_size: 16,
            learning_rate: 0.003,
            optimizer: OptimizerKind::Adam,
            n_iterations: 500,
            loss: LossConfig::default(),
            augment,
            projection: ProjectionMode::SubjectConditional,
            batch_sampling: BatchSampling::PerSubject,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.backbone.validate()?;
        self.loss.validate()?;
        self.augment.validate()?;
        if self.batch_size < 2 {
            return Err(Error::validation("batch_size must be >= 2"));
        }
        if self.learning_rate <= 0.0 {
            return Err(Error::validation("learning_rate must be positive"));
        }
        Ok(())
    }

    /// SHA-256 over the JSON serialization, for reproducibility records.
    pub fn config_hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        let mut hasher = Sha256::new();
        hasher.update(json.as_bytes());
        format!("{:x}", hasher.finalize())
    }
}

/// One loss-trace entry. `subject_index` is absent for mixed batches.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub subject_index: Option<usize>,
    pub loss: f64,
}

/// The projection head in use during pretraining.
#[derive(Debug, Clone)]
pub enum Projection {
    SubjectConditional(SubjectConditionalProjection),
    Common(CommonProjection),
}

impl Projection {
    fn forward(&mut self, h: &Array2<f64>, subject: Option<usize>, train: bool) -> Result<Array2<f64>> {
        match self {
            Projection::SubjectConditional(p) => {
                let s = subject.ok_or_else(|| {
                    Error::validation("subject-conditional projection needs a subject index")
                })?;
                p.forward(h, s, train)
            }
            Projection::Common(p) => Ok(p.forward(h, train)),
        }
    }

    fn backward(&mut self, dz: &Array2<f64>) -> Array2<f64> {
        match self {
            Projection::SubjectConditional(p) => p.backward(dz),
            Projection::Common(p) => p.backward(dz),
        }
    }

    pub fn named_params_mut(&mut self) -> Vec<(String, &mut crate::nn::Param)> {
        match self {
            Projection::SubjectConditional(p) => p.named_params_mut(),
            Projection::Common(p) => p.named_params_mut(),
        }
    }
}

/// The full pretraining model: F plus S and the optimizer state.
#[derive(Debug, Clone)]
pub struct PretrainModel {
    pub backbone: Backbone,
    pub projection: Projection,
    pub optimizer: Adam,
    pub n_subjects: usize,
}

impl PretrainModel {
    /// Fresh model with weights derived from the config seed.
    pub fn new(config: &PretrainConfig, n_subjects: usize) -> Result<Self> {
        config.validate()?;
        if n_subjects == 0 {
            return Err(Error::validation("n_subjects must be >= 1"));
        }
        let mut init_rng = seed::rng(config.seed, &[DOMAIN_INIT]);
        let backbone = Backbone::new(&config.backbone, &mut init_rng)?;
        let feature_dim = backbone.feature_dim();
        let mut proj_rng = seed::rng(config.seed, &[DOMAIN_INIT, 1]);
        let projection = match config.projection {
            ProjectionMode::SubjectConditional => {
                let pc = ProjectionConfig::with_defaults(n_subjects, feature_dim);
                Projection::SubjectConditional(SubjectConditionalProjection::new(
                    pc,
                    feature_dim,
                    &mut proj_rng,
                )?)
            }
            ProjectionMode::Common => Projection::Common(CommonProjection::new(
                feature_dim,
                feature_dim,
                128,
                &mut proj_rng,
            )),
        };
        Ok(PretrainModel {
            backbone,
            projection,
            optimizer: Adam::new(config.learning_rate),
            n_subjects,
        })
    }

    /// Serializes all weights, Adam moments, and batch-norm buffers. The
    /// projection tensors only matter for resuming pretraining and are
    /// flagged as such in the metadata.
    pub fn to_checkpoint(&mut self, config: &PretrainConfig, iteration_count: usize) -> Checkpoint {
        let mut tensors = BTreeMap::new();
        let mut pretrain_only = Vec::new();
        for (name, p) in
            self.backbone.named_params_mut().into_iter().chain(self.projection.named_params_mut())
        {
            if name.starts_with("proj.") || name.starts_with("common_proj.") {
                pretrain_only.push(name.clone());
            }
            let (m, v) = p.moments();
            tensors.insert(format!("{name}#m"), m.clone());
            tensors.insert(format!("{name}#v"), v.clone());
            tensors.insert(name, p.value.clone());
        }
        for (name, buf) in self.backbone.named_buffers_mut() {
            tensors.insert(name, buf.clone().into_dyn());
        }
        let mut notes = BTreeMap::new();
        notes.insert("pretrain_only".to_string(), pretrain_only.join(","));
        notes.insert(
            "projection_mode".to_string(),
            serde_json::to_string(&match self.projection {
                Projection::SubjectConditional(_) => ProjectionMode::SubjectConditional,
                Projection::Common(_) => ProjectionMode::Common,
            })
            .unwrap()
            .trim_matches('"')
            .to_string(),
        );
        Checkpoint {
            meta: CheckpointMeta {
                backbone_variant: config.backbone.variant,
                input_size: config.backbone.input_size,
                feature_dim: config.backbone.feature_dim,
                n_subjects: Some(self.n_subjects),
                training_seed: config.seed,
                iteration_count,
                config_hash: config.config_hash(),
                adam_t: Some(self.optimizer.t),
                notes,
            },
            tensors,
        }
    }

    /// Restores a model (weights, buffers, optimizer moments) from a
    /// checkpoint written by [`PretrainModel::to_checkpoint`].
    pub fn from_checkpoint(checkpoint: &Checkpoint, config: &PretrainConfig) -> Result<Self> {
        let n_subjects = checkpoint
            .meta
            .n_subjects
            .ok_or_else(|| Error::Checkpoint("checkpoint lacks n_subjects".to_string()))?;
        let mut model = PretrainModel::new(config, n_subjects)?;
        for (name, p) in model
            .backbone
            .named_params_mut()
            .into_iter()
            .chain(model.projection.named_params_mut())
        {
            let value = checkpoint.tensor(&name)?;
            if value.shape() != p.value.shape() {
                return Err(Error::Checkpoint(format!(
                    "tensor {name} has shape {:?}, expected {:?}",
                    value.shape(),
                    p.value.shape()
                )));
            }
            p.value.assign(value);
            let m = checkpoint.tensor(&format!("{name}#m"))?.clone();
            let v = checkpoint.tensor(&format!("{name}#v"))?.clone();
            p.set_moments(m, v);
        }
        for (name, buf) in model.backbone.named_buffers_mut() {
            let value = checkpoint.tensor(&name)?;
            buf.assign(&value.view().into_dimensionality::<ndarray::Ix1>().map_err(|_| {
                Error::Checkpoint(format!("buffer {name} is not one-dimensional"))
            })?);
        }
        model.optimizer.t = checkpoint.meta.adam_t.unwrap_or(0);
        Ok(model)
    }
}

/// Loads only the feature extractor from a checkpoint (for calibration and
/// evaluation, where projection heads are discarded).
pub fn load_backbone(checkpoint: &Checkpoint) -> Result<Backbone> {
    let config = BackboneConfig {
        variant: checkpoint.meta.backbone_variant,
        input_size: checkpoint.meta.input_size,
        feature_dim: checkpoint.meta.feature_dim,
    };
    // init values are overwritten below; any seed works
    let mut rng = seed::rng_from_seed(0);
    let mut backbone = Backbone::new(&config, &mut rng)?;
    for (name, p) in backbone.named_params_mut() {
        let value = checkpoint.tensor(&name)?;
        p.value.assign(value);
        p.zero_grad();
    }
    for (name, buf) in backbone.named_buffers_mut() {
        let value = checkpoint.tensor(&name)?;
        buf.assign(&value.view().into_dimensionality::<ndarray::Ix1>().map_err(|_| {
            Error::Checkpoint(format!("buffer {name} is not one-dimensional"))
        })?);
    }
    Ok(backbone)
}

/// Picks one subject uniformly, then samples `min(batch_size, count)` of its
/// images uniformly without replacement.
pub fn sample_subject_batch(
    dataset: &Dataset,
    batch_size: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<FaceSample>> {
    if dataset.is_empty() {
        return Err(Error::validation("cannot sample from an empty dataset"));
    }
    let subject = rng.gen_range(0..dataset.n_subjects());
    let mut indices = dataset.subject_sample_indices(subject);
    if indices.is_empty() {
        return Err(Error::validation(format!("subject {subject} has no samples")));
    }
    indices.shuffle(rng);
    indices.truncate(batch_size.min(indices.len()));
    Ok(indices.into_iter().map(|i| dataset.samples()[i].clone()).collect())
}

/// Uniform without-replacement sample across all subjects.
pub fn sample_mixed_batch(
    dataset: &Dataset,
    batch_size: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<FaceSample>> {
    if dataset.is_empty() {
        return Err(Error::validation("cannot sample from an empty dataset"));
    }
    let mut indices: Vec<usize> = (0..dataset.len()).collect();
    indices.shuffle(rng);
    indices.truncate(batch_size.min(indices.len()));
    Ok(indices.into_iter().map(|i| dataset.samples()[i].clone()).collect())
}

fn build_mixed_views(
    samples: &[FaceSample],
    config: &AugmentConfig,
    seed: u64,
) -> Result<(Vec<Image>, Vec<Image>)> {
    let mut views_p = Vec::with_capacity(samples.len());
    let mut views_q = Vec::with_capacity(samples.len());
    for (k, sample) in samples.iter().enumerate() {
        let (p, q) = augment::sample_operator_pair(
            config,
            seed::derive(seed, &[crate::seed::DOMAIN_AUGMENT, k as u64]),
        )?;
        views_p.push(augment::apply_operator(&p, sample)?.0);
        views_q.push(augment::apply_operator(&q, sample)?.0);
    }
    Ok((views_p, views_q))
}

/// Result of a pretraining run: final model, serialized checkpoint, trace.
pub struct PretrainResult {
    pub model: PretrainModel,
    pub checkpoint: Checkpoint,
    pub trace: Vec<IterationRecord>,
}

/// Runs the pretraining loop from a fresh initialization.
pub fn pretrain(dataset: &Dataset, config: &PretrainConfig) -> Result<PretrainResult> {
    let mut model = PretrainModel::new(config, dataset.n_subjects())?;
    let mut trace = Vec::with_capacity(config.n_iterations);
    run_iterations(&mut model, dataset, config, 0, &mut trace)?;
    let checkpoint = model.to_checkpoint(config, config.n_iterations);
    Ok(PretrainResult { model, checkpoint, trace })
}

/// Continues pretraining from a checkpoint up to `config.n_iterations`
/// total iterations. Bit-identical to an uninterrupted run because batch
/// seeds are derived per-iteration and optimizer moments are restored.
pub fn resume_pretrain(
    dataset: &Dataset,
    config: &PretrainConfig,
    checkpoint: &Checkpoint,
) -> Result<PretrainResult> {
    let start = checkpoint.meta.iteration_count;
    if start > config.n_iterations {
        return Err(Error::validation(format!(
            "checkpoint already at iteration {start} > configured {}",
            config.n_iterations
        )));
    }
    if checkpoint.meta.config_hash != config.config_hash() {
        return Err(Error::Checkpoint(
            "config hash mismatch: refusing to resume with a different configuration".to_string(),
        ));
    }
    let mut model = PretrainModel::from_checkpoint(checkpoint, config)?;
    let mut trace = Vec::new();
    run_iterations(&mut model, dataset, config, start, &mut trace)?;
    let checkpoint = model.to_checkpoint(config, config.n_iterations);
    Ok(PretrainResult { model, checkpoint, trace })
}

fn run_iterations(
    model: &mut PretrainModel,
    dataset: &Dataset,
    config: &PretrainConfig,
    start: usize,
    trace: &mut Vec<IterationRecord>,
) -> Result<()> {
    if dataset.n_subjects() != model.n_subjects {
        return Err(Error::validation("dataset subject count does not match the model"));
    }
    for iteration in start..config.n_iterations {
        let batch_seed = seed::derive(config.seed, &[DOMAIN_PRETRAIN, iteration as u64]);
        let mut rng = seed::rng_from_seed(batch_seed);
        let (views_p, views_q, subject) = match config.batch_sampling {
            BatchSampling::PerSubject => {
                let samples = sample_subject_batch(dataset, config.batch_size, &mut rng)?;
                let subject = samples[0].subject_index;
                debug_assert!(samples.iter().all(|s| s.subject_index == subject));
                let batch = augment::build_pair_batch(
                    &samples,
                    &config.augment,
                    seed::derive(batch_seed, &[1]),
                )?;
                (batch.views_p, batch.views_q, Some(batch.subject_index))
            }
            BatchSampling::Mixed => {
                let samples = sample_mixed_batch(dataset, config.batch_size, &mut rng)?;
                let (p, q) =
                    build_mixed_views(&samples, &config.augment, seed::derive(batch_seed, &[1]))?;
                (p, q, None)
            }
        };
        let k = views_p.len();
        let refs: Vec<&Image> = views_p.iter().chain(views_q.iter()).collect();
        let x = images_to_batch(&refs);
        let h = model.backbone.forward(&x, true)?;
        let z = model.projection.forward(&h, subject, true)?;
        let zp = z.slice(ndarray::s![..k, ..]).to_owned();
        let zq = z.slice(ndarray::s![k.., ..]).to_owned();
        let (loss, dzp, dzq) = batch_loss_with_grad(&zp, &zq, &config.loss)?;
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss { iteration, batch_seed });
        }
        let dz = concatenate![Axis(0), dzp, dzq];
        for (_, p) in
            model.backbone.named_params_mut().into_iter().chain(model.projection.named_params_mut())
        {
            p.zero_grad();
        }
        let dh = model.projection.backward(&dz);
        model.backbone.backward(&dh);
        let mut params: Vec<&mut crate::nn::Param> = model
            .backbone
            .named_params_mut()
            .into_iter()
            .chain(model.projection.named_params_mut())
            .map(|(_, p)| p)
            .collect();
        model.optimizer.step(&mut params);
        trace.push(IterationRecord { iteration, subject_index: subject, loss });
    }
    Ok(())
}

/// Loss trace as CSV: iteration, subject_index (empty for mixed), loss.
pub fn write_loss_trace(path: &Path, trace: &[IterationRecord]) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["iteration", "subject_index", "loss"])?;
    for rec in trace {
        w.write_record([
            rec.iteration.to_string(),
            rec.subject_index.map(|s| s.to_string()).unwrap_or_default(),
            format!("{:.17e}", rec.loss),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Run provenance: the full config, its hash, and dataset shape.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub config: PretrainConfig,
    pub config_hash: String,
    pub n_subjects: usize,
    pub n_samples: usize,
}

impl RunManifest {
    pub fn new(config: &PretrainConfig, dataset: &Dataset) -> Self {
        RunManifest {
            config: config.clone(),
            config_hash: config.config_hash(),
            n_subjects: dataset.n_subjects(),
            n_samples: dataset.len(),
        }
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthface::{generate_dataset, GazeSampling, SynthDatasetSpec};

    fn small_dataset(n_subjects: usize, images: usize) -> Dataset {
        generate_dataset(&SynthDatasetSpec {
            n_subjects,
            images_per_subject: images,
            image_size: (64, 64),
            gaze_sampling: GazeSampling::Random,
            master_seed: 31,
        })
        .unwrap()
    }

    fn small_config(n_iterations: usize) -> PretrainConfig {
        let mut c = PretrainConfig::desk_scale(5);
        c.batch_size = 4;
        c.n_iterations = n_iterations;
        c
    }

    #[test]
    fn subject_batches_are_single_subject_and_clamped() {
        let ds = small_dataset(3, 5);
        let mut rng = seed::rng_from_seed(2);
        for _ in 0..20 {
            let batch = sample_subject_batch(&ds, 8, &mut rng).unwrap();
            assert_eq!(batch.len(), 5); // clamped to subject image count
            let s = batch[0].subject_index;
            assert!(batch.iter().all(|x| x.subject_index == s));
            let mut idx: Vec<usize> = batch.iter().map(|x| x.image_index).collect();
            idx.sort_unstable();
            idx.dedup();
            assert_eq!(idx.len(), 5, "sampling must be without replacement");
        }
    }

    #[test]
    fn single_subject_dataset_always_sampled() {
        let full = small_dataset(2, 4);
        let ds = full.restrict_to_subjects(&[1]).renumber_subjects(&[1]);
        let mut rng = seed::rng_from_seed(3);
        let batch = sample_subject_batch(&ds, 2, &mut rng).unwrap();
        assert!(batch.iter().all(|s| s.subject_index == 0));
    }

    #[test]
    fn subject_selection_is_uniform() {
        let ds = small_dataset(4, 2);
        let mut rng = seed::rng_from_seed(4);
        let mut counts = [0usize; 4];
        for _ in 0..10_000 {
            let batch = sample_subject_batch(&ds, 2, &mut rng).unwrap();
            counts[batch[0].subject_index] += 1;
        }
        for c in counts {
            let freq = c as f64 / 10_000.0;
            assert!((freq - 0.25).abs() < 0.02, "subject frequency {freq} outside 0.25 +- 0.02");
        }
    }

    #[test]
    fn zero_iterations_returns_initialization() {
        let ds = small_dataset(2, 3);
        let config = small_config(0);
        let result = pretrain(&ds, &config).unwrap();
        assert!(result.trace.is_empty());
        let mut fresh = PretrainModel::new(&config, 2).unwrap();
        let mut trained = result.model;
        for ((na, pa), (nb, pb)) in
            fresh.backbone.named_params_mut().into_iter().zip(trained.backbone.named_params_mut())
        {
            assert_eq!(na, nb);
            assert_eq!(pa.value, pb.value);
        }
    }

    #[test]
    fn same_seed_gives_identical_traces() {
        let ds = small_dataset(2, 4);
        let config = small_config(3);
        let a = pretrain(&ds, &config).unwrap();
        let b = pretrain(&ds, &config).unwrap();
        assert_eq!(a.trace, b.trace);
        assert!(a.trace.iter().all(|r| r.loss.is_finite()));
        assert_eq!(a.trace.len(), 3);
    }

    #[test]
    fn resume_matches_uninterrupted_run() {
        let ds = small_dataset(2, 4);
        let mut half = small_config(2);
        let full = small_config(4);
        // both configs must hash identically for resume, so train the first
        // half under the full config but stop early via a truncated copy
        half.n_iterations = 4;
        let mut model = PretrainModel::new(&half, 2).unwrap();
        let mut trace = Vec::new();
        // manual 2-iteration run
        let mut truncated = half.clone();
        truncated.n_iterations = 2;
        run_iterations(&mut model, &ds, &truncated, 0, &mut trace).unwrap();
        let midpoint = model.to_checkpoint(&half, 2);

        let resumed = resume_pretrain(&ds, &full, &midpoint).unwrap();
        let straight = pretrain(&ds, &full).unwrap();
        assert_eq!(resumed.trace.len(), 2);
        for (name, tensor) in &straight.checkpoint.tensors {
            assert_eq!(
                tensor,
                resumed.checkpoint.tensor(name).unwrap(),
                "tensor {name} differs after resume"
            );
        }
    }

    #[test]
    fn non_matching_config_refuses_resume() {
        let ds = small_dataset(2, 3);
        let config = small_config(2);
        let result = pretrain(&ds, &config).unwrap();
        let mut other = config.clone();
        other.learning_rate = 0.02;
        other.n_iterations = 4;
        assert!(matches!(
            resume_pretrain(&ds, &other, &result.checkpoint),
            Err(Error::Checkpoint(_))
        ));
    }

    #[test]
    fn checkpoint_roundtrips_through_disk() {
        let ds = small_dataset(2, 3);
        let config = small_config(2);
        let result = pretrain(&ds, &config).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        crate::nets::save_checkpoint(&path, &result.checkpoint).unwrap();
        let loaded = crate::nets::load_checkpoint(&path).unwrap();
        assert_eq!(loaded.meta.iteration_count, 2);
        assert_eq!(loaded.tensors, result.checkpoint.tensors);
        let mut backbone = load_backbone(&loaded).unwrap();
        let x = images_to_batch(&[&ds.samples()[0].image]);
        let h = backbone.forward(&x, false).unwrap();
        assert_eq!(h.dim(), (1, 128));
    }

    #[test]
    fn relabeling_subjects_permutes_but_preserves_loss() {
        // permuting the one-hot weight columns of S's first layer is the
        // model-side image of relabeling subjects: the projected embeddings,
        // and hence the loss, must be identical
        let ds = small_dataset(3, 4);
        let config = small_config(1);
        let mut model_a = PretrainModel::new(&config, 3).unwrap();
        let mut model_b = model_a.clone();
        // permutation pi: 0 -> 1 -> 2 -> 0 applied to identity columns
        let perm = [1usize, 2, 0];
        if let Projection::SubjectConditional(p) = &mut model_b.projection {
            let w = p.mlp.fc1.weight.value.clone();
            for (from, &to) in perm.iter().enumerate() {
                let col = w.index_axis(ndarray::Axis(1), from).to_owned();
                p.mlp.fc1.weight.value.index_axis_mut(ndarray::Axis(1), to).assign(&col);
            }
        } else {
            panic!("expected subject-conditional projection");
        }
        let mut rng = seed::rng_from_seed(17);
        let samples = sample_subject_batch(&ds, 4, &mut rng).unwrap();
        let subject = samples[0].subject_index;
        let batch = augment::build_pair_batch(&samples, &config.augment, 23).unwrap();
        let refs: Vec<&Image> = batch.views_p.iter().chain(batch.views_q.iter()).collect();
        let x = images_to_batch(&refs);

        let h_a = model_a.backbone.forward(&x, false).unwrap();
        let z_a = model_a.projection.forward(&h_a, Some(subject), false).unwrap();
        let h_b = model_b.backbone.forward(&x, false).unwrap();
        let z_b = model_b.projection.forward(&h_b, Some(perm[subject]), false).unwrap();
        let k = batch.views_p.len();
        let loss_a = crate::loss::batch_loss(
            &z_a.slice(ndarray::s![..k, ..]).to_owned(),
            &z_a.slice(ndarray::s![k.., ..]).to_owned(),
            &config.loss,
        )
        .unwrap();
        let loss_b = crate::loss::batch_loss(
            &z_b.slice(ndarray::s![..k, ..]).to_owned(),
            &z_b.slice(ndarray::s![k.., ..]).to_owned(),
            &config.loss,
        )
        .unwrap();
        assert_eq!(z_a, z_b);
        assert_eq!(loss_a, loss_b);
    }

    #[test]
    fn mixed_common_path_runs() {
        let ds = small_dataset(2, 4);
        let mut config = small_config(2);
        config.projection = ProjectionMode::Common;
        config.batch_sampling = BatchSampling::Mixed;
        config.augment.gaze_constrained = false;
        let result = pretrain(&ds, &config).unwrap();
        assert_eq!(result.trace.len(), 2);
        assert!(result.trace.iter().all(|r| r.subject_index.is_none() && r.loss.is_finite()));
    }

    #[test]
    fn loss_trace_csv_roundtrip() {
        let trace = vec![
            IterationRecord { iteration: 0, subject_index: Some(2), loss: 1.25 },
            IterationRecord { iteration: 1, subject_index: None, loss: 0.5 },
        ];
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("trace.csv");
        write_loss_trace(&path, &trace).unwrap();
        let content = std::fs::read_to_string(&path).unwrap();
        let mut lines = content.lines();
        assert_eq!(lines.next().unwrap(), "iteration,subject_index,loss");
        assert!(lines.next().unwrap().starts_with("0,2,"));
        assert!(lines.next().unwrap().starts_with("1,,"));
    }

    #[test]
    fn invalid_configs_rejected() {
        let mut c = PretrainConfig::desk_scale(1);
        c.batch_size = 1;
        assert!(c.validate().is_err());
        let mut c = PretrainConfig::desk_scale(1);
        c.learning_rate = 0.0;
        assert!(c.validate().is_err());
    }
}
