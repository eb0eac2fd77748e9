//! Projection heads and the gaze estimator.
//!
//! The subject-conditional projection concatenates a one-hot identity with
//! the representation before the MLP, giving each subject its own embedding
//! space. The common projection (no identity input) backs the conventional
//! contrastive baselines. The gaze estimator consumes representations from
//! the general space only; it never sees projection embeddings.

use super::backbone::Backbone;
use crate::datamodel::{GazeDirection, Image, Representation, SubjectEmbedding};
use crate::error::{Error, Result};
use crate::nets::images_to_batch;
use crate::nn::{Mlp, Param};
use ndarray::{concatenate, Array1, Array2, Axis};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProjectionConfig {
    pub n_subjects: usize,
    pub hidden_dim: usize,
    pub embedding_dim: usize,
}

impl ProjectionConfig {
    pub fn with_defaults(n_subjects: usize, feature_dim: usize) -> Self {
        ProjectionConfig { n_subjects, hidden_dim: feature_dim, embedding_dim: 128 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_subjects == 0 {
            return Err(Error::validation("n_subjects must be >= 1"));
        }
        if self.hidden_dim == 0 || self.embedding_dim == 0 {
            return Err(Error::validation("projection dims must be positive"));
        }
        Ok(())
    }
}

/// One-hot identity encoding.
pub fn one_hot_encode(subject_index: usize, n: usize) -> Result<Array1<f64>> {
    if subject_index >= n {
        return Err(Error::validation(format!("subject_index {subject_index} out of range 0..{n}")));
    }
    let mut v = Array1::zeros(n);
    v[subject_index] = 1.0;
    Ok(v)
}

/// Subject-conditional projection S: MLP over `concat(one_hot(i), h)`.
#[derive(Debug, Clone)]
pub struct SubjectConditionalProjection {
    pub config: ProjectionConfig,
    pub mlp: Mlp,
    feature_dim: usize,
}

impl SubjectConditionalProjection {
    pub fn new(config: ProjectionConfig, feature_dim: usize, rng: &mut ChaCha8Rng) -> Result<Self> {
        config.validate()?;
        let mlp =
            Mlp::new(config.n_subjects + feature_dim, config.hidden_dim, config.embedding_dim, rng);
        Ok(SubjectConditionalProjection { config, mlp, feature_dim })
    }

    /// h: (B, D_h), all rows from `subject_index` -> z: (B, D_z)
    pub fn forward(&mut self, h: &Array2<f64>, subject_index: usize, train: bool) -> Result<Array2<f64>> {
        if h.ncols() != self.feature_dim {
            return Err(Error::validation(format!(
                "representation dim {} != expected {}",
                h.ncols(),
                self.feature_dim
            )));
        }
        let one_hot = one_hot_encode(subject_index, self.config.n_subjects)?;
        let b = h.nrows();
        let mut id_block = Array2::zeros((b, self.config.n_subjects));
        for mut row in id_block.rows_mut() {
            row.assign(&one_hot);
        }
        let x = concatenate![Axis(1), id_block, h.view()];
        Ok(self.mlp.forward(&x, train))
    }

    /// dz: (B, D_z) -> dh: (B, D_h); identity columns are dropped.
    pub fn backward(&mut self, dz: &Array2<f64>) -> Array2<f64> {
        let dx = self.mlp.backward(dz);
        dx.slice(ndarray::s![.., self.config.n_subjects..]).to_owned()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        self.mlp.params_mut()
    }

    pub fn named_params_mut(&mut self) -> Vec<(String, &mut Param)> {
        vec![
            ("proj.fc1.weight".to_string(), &mut self.mlp.fc1.weight),
            ("proj.fc1.bias".to_string(), &mut self.mlp.fc1.bias),
            ("proj.fc2.weight".to_string(), &mut self.mlp.fc2.weight),
            ("proj.fc2.bias".to_string(), &mut self.mlp.fc2.bias),
        ]
    }
}

/// Single-space projection head for conventional contrastive baselines.
#[derive(Debug, Clone)]
pub struct CommonProjection {
    pub mlp: Mlp,
}

impl CommonProjection {
    pub fn new(feature_dim: usize, hidden_dim: usize, embedding_dim: usize, rng: &mut ChaCha8Rng) -> Self {
        CommonProjection { mlp: Mlp::new(feature_dim, hidden_dim, embedding_dim, rng) }
    }

    pub fn forward(&mut self, h: &Array2<f64>, train: bool) -> Array2<f64> {
        self.mlp.forward(h, train)
    }

    pub fn backward(&mut self, dz: &Array2<f64>) -> Array2<f64> {
        self.mlp.backward(dz)
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        self.mlp.params_mut()
    }

    pub fn named_params_mut(&mut self) -> Vec<(String, &mut Param)> {
        vec![
            ("common_proj.fc1.weight".to_string(), &mut self.mlp.fc1.weight),
            ("common_proj.fc1.bias".to_string(), &mut self.mlp.fc1.bias),
            ("common_proj.fc2.weight".to_string(), &mut self.mlp.fc2.weight),
            ("common_proj.fc2.bias".to_string(), &mut self.mlp.fc2.bias),
        ]
    }
}

/// Two fully-connected layers mapping a representation to (pitch, yaw).
#[derive(Debug, Clone)]
pub struct GazeEstimator {
    pub mlp: Mlp,
}

pub const ESTIMATOR_HIDDEN_DIM: usize = 64;

impl GazeEstimator {
    pub fn new(feature_dim: usize, rng: &mut ChaCha8Rng) -> Self {
        GazeEstimator { mlp: Mlp::new(feature_dim, ESTIMATOR_HIDDEN_DIM, 2, rng) }
    }

    /// h: (B, D_h) -> raw (B, 2) pitch/yaw predictions, unconstrained.
    pub fn forward(&mut self, h: &Array2<f64>, train: bool) -> Result<Array2<f64>> {
        if h.ncols() != self.mlp.fc1.in_dim() {
            return Err(Error::validation(format!(
                "representation dim {} != estimator input {}",
                h.ncols(),
                self.mlp.fc1.in_dim()
            )));
        }
        Ok(self.mlp.forward(h, train))
    }

    pub fn backward(&mut self, dy: &Array2<f64>) -> Array2<f64> {
        self.mlp.backward(dy)
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        self.mlp.params_mut()
    }

    pub fn named_params_mut(&mut self) -> Vec<(String, &mut Param)> {
        vec![
            ("estimator.fc1.weight".to_string(), &mut self.mlp.fc1.weight),
            ("estimator.fc1.bias".to_string(), &mut self.mlp.fc1.bias),
            ("estimator.fc2.weight".to_string(), &mut self.mlp.fc2.weight),
            ("estimator.fc2.bias".to_string(), &mut self.mlp.fc2.bias),
        ]
    }
}

/// Runs the extractor in inference mode over a list of images.
pub fn extract_features(backbone: &mut Backbone, images: &[&Image]) -> Result<Vec<Representation>> {
    let batch = images_to_batch(images);
    let h = backbone.forward(&batch, false)?;
    h.rows().into_iter().map(|row| Representation::new(row.to_owned())).collect()
}

/// Projects one representation into its subject's embedding space.
pub fn project_subject_conditional(
    proj: &mut SubjectConditionalProjection,
    h: &Representation,
    subject_index: usize,
) -> Result<SubjectEmbedding> {
    let h2 = h.values.clone().insert_axis(Axis(0));
    let z = proj.forward(&h2, subject_index, false)?;
    SubjectEmbedding::new(z.row(0).to_owned(), subject_index)
}

/// Predicts a gaze direction for one representation, clamping the raw output
/// into the valid (pitch, yaw) ranges.
pub fn estimate_gaze(estimator: &mut GazeEstimator, h: &Representation) -> Result<GazeDirection> {
    let h2 = h.values.clone().insert_axis(Axis(0));
    let y = estimator.forward(&h2, false)?;
    let pitch = y[[0, 0]].clamp(-std::f64::consts::FRAC_PI_2, std::f64::consts::FRAC_PI_2);
    let yaw = y[[0, 1]].clamp(-std::f64::consts::PI, std::f64::consts::PI);
    GazeDirection::new(pitch, yaw)
}
