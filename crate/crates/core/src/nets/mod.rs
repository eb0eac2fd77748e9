//! Model components: the shared feature extractor F, the subject-conditional
//! projection S, a common (subject-agnostic) projection for baseline
//! variants, and the two-layer gaze estimator head.

mod backbone;
mod checkpoint;
mod heads;
mod resnet;

pub use backbone::{Backbone, BackboneConfig, BackboneVariant, TinyConv};
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CheckpointMeta};
pub use heads::{
    estimate_gaze, extract_features, one_hot_encode, project_subject_conditional,
    CommonProjection, GazeEstimator, ProjectionConfig, SubjectConditionalProjection,
};
pub use resnet::ResNet18;

use crate::datamodel::Image;
use ndarray::Array4;

/// Stacks images into a `(B, 3, H, W)` batch tensor.
pub fn images_to_batch(images: &[&Image]) -> Array4<f64> {
    assert!(!images.is_empty(), "empty image batch");
    let (h, w) = (images[0].height(), images[0].width());
    let mut out = Array4::zeros((images.len(), 3, h, w));
    for (i, img) in images.iter().enumerate() {
        out.index_axis_mut(ndarray::Axis(0), i).assign(img.data());
    }
    out
}
