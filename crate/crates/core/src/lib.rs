//! Unsupervised gaze-aware contrastive representation learning.
//!
//! The pipeline: a gaze-preserving augmentation module builds gaze-consistent
//! and gaze-contrastive view pairs from unlabeled full-face images, a shared
//! feature extractor maps views into a general representation space, and a
//! subject-conditional projection head maps those representations into
//! per-subject embedding spaces where a subject-specific contrastive loss is
//! optimized. A few-shot calibration stage then fine-tunes a small gaze
//! estimator (optionally together with the extractor) on labeled samples.
//!
//! The crate ships a procedural synthetic-face generator so the whole
//! pretrain / calibrate / evaluate loop runs on CPU in minutes, plus an
//! evaluation harness (cross-validation protocols, ablation variants) and
//! visualization exports (t-SNE scatter data, gradient-based attention maps).

pub mod augment;
pub mod calibrate;
pub mod datamodel;
pub mod error;
pub mod eval;
pub mod loss;
pub mod nets;
pub mod nn;
pub mod seed;
pub mod synthface;
pub mod train;
pub mod viz;

pub use datamodel::{
    AugmentedPairBatch, Dataset, EyeLandmarks, FaceSample, GazeDirection, Image, PeriocularBox,
    Representation, SubjectEmbedding,
};
pub use error::{Error, Result};
