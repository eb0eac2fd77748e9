//! Core domain types shared by all modules.
//!
//! These are immutable value objects; none of them hold interior mutability,
//! so they are safe to share across threads.

use crate::error::{Error, Result};
use ndarray::{Array1, Array3};

/// An RGB image with pixel values in `[0, 1]`, stored channel-first `(3, H, W)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    data: Array3<f64>,
}

impl Image {
    pub fn new(data: Array3<f64>) -> Result<Self> {
        let (c, h, w) = data.dim();
        if c != 3 {
            return Err(Error::validation(format!("image must have 3 channels, got {c}")));
        }
        if h == 0 || w == 0 {
            return Err(Error::validation("image dimensions must be positive"));
        }
        if data.iter().any(|&v| !(0.0..=1.0).contains(&v)) {
            return Err(Error::validation("pixel values must lie in [0, 1]"));
        }
        Ok(Image { data })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Image { data: Array3::zeros((3, height, width)) }
    }

    pub fn height(&self) -> usize {
        self.data.dim().1
    }

    pub fn width(&self) -> usize {
        self.data.dim().2
    }

    pub fn data(&self) -> &Array3<f64> {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut Array3<f64> {
        &mut self.data
    }

    pub fn get(&self, channel: usize, y: usize, x: usize) -> f64 {
        self.data[[channel, y, x]]
    }

    pub fn set(&mut self, channel: usize, y: usize, x: usize, value: f64) {
        self.data[[channel, y, x]] = value;
    }

    /// Quantizes to 8-bit RGB, row-major.
    pub fn to_u8(&self) -> Vec<u8> {
        let (_, h, w) = self.data.dim();
        let mut out = Vec::with_capacity(h * w * 3);
        for y in 0..h {
            for x in 0..w {
                for c in 0..3 {
                    out.push((self.data[[c, y, x]] * 255.0).round().clamp(0.0, 255.0) as u8);
                }
            }
        }
        out
    }

    pub fn from_u8(bytes: &[u8], height: usize, width: usize) -> Result<Self> {
        if bytes.len() != height * width * 3 {
            return Err(Error::validation("byte length does not match dimensions"));
        }
        let mut data = Array3::zeros((3, height, width));
        for y in 0..height {
            for x in 0..width {
                for c in 0..3 {
                    data[[c, y, x]] = bytes[(y * width + x) * 3 + c] as f64 / 255.0;
                }
            }
        }
        Ok(Image { data })
    }

    /// Snaps every pixel to the nearest 8-bit level so a PNG round trip is exact.
    pub fn quantize(&mut self) {
        self.data.mapv_inplace(|v| (v * 255.0).round().clamp(0.0, 255.0) / 255.0);
    }
}

/// Gaze direction as (pitch, yaw) in radians.
///
/// Convention: pitch in `[-pi/2, pi/2]`, yaw in `[-pi, pi]`; the camera looks
/// along -z, so straight-ahead gaze maps to the unit vector `(0, 0, -1)`.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct GazeDirection {
    pub pitch: f64,
    pub yaw: f64,
}

impl GazeDirection {
    pub fn new(pitch: f64, yaw: f64) -> Result<Self> {
        if !pitch.is_finite() || !yaw.is_finite() {
            return Err(Error::validation("gaze angles must be finite"));
        }
        if !(-std::f64::consts::FRAC_PI_2..=std::f64::consts::FRAC_PI_2).contains(&pitch) {
            return Err(Error::validation(format!("pitch {pitch} outside [-pi/2, pi/2]")));
        }
        if !(-std::f64::consts::PI..=std::f64::consts::PI).contains(&yaw) {
            return Err(Error::validation(format!("yaw {yaw} outside [-pi, pi]")));
        }
        Ok(GazeDirection { pitch, yaw })
    }

    /// Maps (pitch, yaw) to a 3D unit vector:
    /// `(-cos(pitch)*sin(yaw), -sin(pitch), -cos(pitch)*cos(yaw))`.
    pub fn unit_vector(&self) -> [f64; 3] {
        let (sp, cp) = self.pitch.sin_cos();
        let (sy, cy) = self.yaw.sin_cos();
        [-cp * sy, -sp, -cp * cy]
    }
}

/// Free-function form of [`GazeDirection::unit_vector`] with validation.
pub fn gaze_to_unit_vector(g: GazeDirection) -> Result<[f64; 3]> {
    if !g.pitch.is_finite() || !g.yaw.is_finite() {
        return Err(Error::validation("gaze angles must be finite"));
    }
    Ok(g.unit_vector())
}

/// Eye-outline landmarks in pixel coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct EyeLandmarks {
    pub left_outline: Vec<(f64, f64)>,
    pub right_outline: Vec<(f64, f64)>,
}

impl EyeLandmarks {
    pub fn validate(&self, height: usize, width: usize) -> Result<()> {
        for (name, outline) in [("left", &self.left_outline), ("right", &self.right_outline)] {
            if outline.len() < 4 {
                return Err(Error::validation(format!("{name} outline needs >= 4 points")));
            }
            for &(x, y) in outline {
                if x < 0.0 || y < 0.0 || x > width as f64 || y > height as f64 {
                    return Err(Error::validation(format!(
                        "{name} outline point ({x}, {y}) outside {width}x{height} image"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Axis-aligned bounding box around one periocular region.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PeriocularBox {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
}

impl PeriocularBox {
    pub fn new(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Result<Self> {
        if !(x_min < x_max && y_min < y_max) {
            return Err(Error::validation("degenerate periocular box"));
        }
        Ok(PeriocularBox { x_min, y_min, x_max, y_max })
    }

    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> f64 {
        self.y_max - self.y_min
    }

    pub fn contains_point(&self, x: f64, y: f64) -> bool {
        x >= self.x_min && x <= self.x_max && y >= self.y_min && y <= self.y_max
    }
}

/// One full-face image with identity, optional gaze label and landmarks.
#[derive(Debug, Clone)]
pub struct FaceSample {
    pub image: Image,
    pub subject_index: usize,
    pub image_index: usize,
    pub gaze: Option<GazeDirection>,
    pub landmarks: Option<EyeLandmarks>,
}

/// A collection of face samples with a declared subject count.
#[derive(Debug, Clone)]
pub struct Dataset {
    samples: Vec<FaceSample>,
    n_subjects: usize,
}

impl Dataset {
    pub fn new(samples: Vec<FaceSample>, n_subjects: usize) -> Result<Self> {
        for s in &samples {
            if s.subject_index >= n_subjects {
                return Err(Error::validation(format!(
                    "subject_index {} >= declared subject count {n_subjects}",
                    s.subject_index
                )));
            }
            if let Some(lm) = &s.landmarks {
                lm.validate(s.image.height(), s.image.width())?;
            }
        }
        Ok(Dataset { samples, n_subjects })
    }

    pub fn samples(&self) -> &[FaceSample] {
        &self.samples
    }

    pub fn n_subjects(&self) -> usize {
        self.n_subjects
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Indices of all samples belonging to `subject`.
    pub fn subject_sample_indices(&self, subject: usize) -> Vec<usize> {
        self.samples
            .iter()
            .enumerate()
            .filter(|(_, s)| s.subject_index == subject)
            .map(|(i, _)| i)
            .collect()
    }

    /// New dataset restricted to the given subjects, keeping subject indices.
    pub fn restrict_to_subjects(&self, subjects: &[usize]) -> Dataset {
        let samples = self
            .samples
            .iter()
            .filter(|s| subjects.contains(&s.subject_index))
            .cloned()
            .collect();
        Dataset { samples, n_subjects: self.n_subjects }
    }

    /// New dataset with subjects renumbered densely (0..k) in the order given.
    /// Needed before pretraining on a subject subset, since the projection
    /// head allocates one identity slot per subject.
    pub fn renumber_subjects(&self, subjects: &[usize]) -> Dataset {
        let samples = self
            .samples
            .iter()
            .filter_map(|s| {
                subjects.iter().position(|&u| u == s.subject_index).map(|new_idx| {
                    let mut s = s.clone();
                    s.subject_index = new_idx;
                    s
                })
            })
            .collect();
        Dataset { samples, n_subjects: subjects.len() }
    }
}

/// A point in the general representation space produced by the extractor.
#[derive(Debug, Clone, PartialEq)]
pub struct Representation {
    pub values: Array1<f64>,
}

impl Representation {
    pub fn new(values: Array1<f64>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::validation("representation contains non-finite entries"));
        }
        Ok(Representation { values })
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }
}

/// A point in one subject-specific embedding space.
#[derive(Debug, Clone, PartialEq)]
pub struct SubjectEmbedding {
    pub values: Array1<f64>,
    pub subject_index: usize,
}

impl SubjectEmbedding {
    pub fn new(values: Array1<f64>, subject_index: usize) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::validation("embedding contains non-finite entries"));
        }
        if values.dot(&values).sqrt() == 0.0 {
            return Err(Error::validation("embedding has zero norm"));
        }
        Ok(SubjectEmbedding { values, subject_index })
    }
}

/// Pre-resize crop window recorded by the augmentation pipeline, kept as
/// metadata so containment invariants can be asserted after the fact.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CropWindow {
    pub x: usize,
    pub y: usize,
    pub width: usize,
    pub height: usize,
}

impl CropWindow {
    pub fn contains_box(&self, b: &PeriocularBox) -> bool {
        self.x as f64 <= b.x_min
            && self.y as f64 <= b.y_min
            && (self.x + self.width) as f64 >= b.x_max
            && (self.y + self.height) as f64 >= b.y_max
    }
}

/// A batch of augmented views from one subject.
///
/// `(views_p[k], views_q[k])` is a gaze-consistent pair; `(views_p[k],
/// views_q[m])` with `m != k` is a gaze-contrastive pair.
#[derive(Debug, Clone)]
pub struct AugmentedPairBatch {
    pub views_p: Vec<Image>,
    pub views_q: Vec<Image>,
    pub subject_index: usize,
    pub source_image_indices: Vec<usize>,
    /// Pre-resize crop windows for views_p / views_q, for invariant checks.
    pub windows_p: Vec<CropWindow>,
    pub windows_q: Vec<CropWindow>,
}

impl AugmentedPairBatch {
    pub fn len(&self) -> usize {
        self.views_p.len()
    }

    pub fn is_empty(&self) -> bool {
        self.views_p.is_empty()
    }
}
