//! Procedural synthetic-face dataset generator.
//!
//! Faces are flat 2D cartoons: an elliptical face patch, two eye ellipses
//! with anti-aliased iris disks, and nose/mouth strokes. Gaze is encoded
//! geometrically — the iris center inside each eye is displaced by
//! `(IRIS_GAIN * yaw, -IRIS_GAIN * pitch)` pixels (scaled with image width) —
//! while identity is encoded in appearance (skin tone, face shape, eye
//! geometry). Every sample carries exact ground-truth gaze and eye-outline
//! landmarks, which makes the generator usable as an oracle for the
//! augmentation, training, and attention-map invariants.

use crate::datamodel::{Dataset, EyeLandmarks, FaceSample, GazeDirection, Image};
use crate::error::{Error, Result};
use crate::seed::{self, DOMAIN_SYNTH};
use rand::Rng;
use serde::{Deserialize, Serialize};

/// Gaze range (radians per axis) the renderer accepts: beyond this the iris
/// would leave the eye.
pub const MAX_RENDERABLE_GAZE: f64 = 0.6;

/// Iris displacement gain in pixels per radian at a 64-pixel-wide image;
/// scales linearly with image width.
pub const IRIS_GAIN_AT_64: f64 = 6.0;

/// Minimum pairwise distance between normalized appearance parameter vectors
/// of two subjects in one dataset.
pub const MIN_APPEARANCE_DISTANCE: f64 = 0.25;

/// Per-subject appearance parameters. All spatial quantities are fractions of
/// image width/height so a subject renders consistently at any size.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SubjectAppearance {
    /// RGB in [0,1].
    pub skin_tone: [f64; 3],
    /// Face half-axes as fractions of (W, H): rx in [0.34, 0.44], ry in [0.38, 0.48].
    pub face_shape: (f64, f64),
    /// Distance between eye centers as a fraction of W: [0.30, 0.38].
    pub eye_spacing: f64,
    /// Eye half-width as a fraction of W: [0.11, 0.14].
    pub eye_size: f64,
    pub deterministic_seed: u64,
}

impl SubjectAppearance {
    pub fn validate(&self) -> Result<()> {
        let (rx, ry) = self.face_shape;
        let checks = [
            (0.34..=0.44).contains(&rx),
            (0.38..=0.48).contains(&ry),
            (0.30..=0.38).contains(&self.eye_spacing),
            (0.11..=0.14).contains(&self.eye_size),
            self.skin_tone.iter().all(|c| (0.0..=1.0).contains(c)),
        ];
        if checks.iter().any(|ok| !ok) {
            return Err(Error::validation("appearance parameters outside documented ranges"));
        }
        Ok(())
    }

    /// Deterministic appearance for one subject of a dataset. Skin hue is
    /// spread around the color wheel by subject index so identities stay
    /// separable by construction.
    pub fn for_subject(master_seed: u64, subject: usize, n_subjects: usize) -> Self {
        let mut rng = seed::rng(master_seed, &[DOMAIN_SYNTH, subject as u64]);
        let hue = subject as f64 / n_subjects as f64 + rng.gen_range(-0.04..0.04);
        let skin_tone = hue_to_rgb(hue.rem_euclid(1.0), 0.45, 0.65);
        SubjectAppearance {
            skin_tone,
            face_shape: (rng.gen_range(0.34..0.44), rng.gen_range(0.38..0.48)),
            eye_spacing: rng.gen_range(0.30..0.38),
            eye_size: rng.gen_range(0.11..0.14),
            deterministic_seed: seed::derive(master_seed, &[DOMAIN_SYNTH, subject as u64, 1]),
        }
    }

    fn param_vector(&self) -> [f64; 6] {
        [
            self.skin_tone[0],
            self.skin_tone[1],
            self.skin_tone[2],
            (self.face_shape.0 - 0.34) / 0.10,
            (self.eye_spacing - 0.30) / 0.08,
            (self.eye_size - 0.11) / 0.03,
        ]
    }

    pub fn distance(&self, other: &SubjectAppearance) -> f64 {
        self.param_vector()
            .iter()
            .zip(other.param_vector().iter())
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            .sqrt()
    }
}

fn hue_to_rgb(h: f64, saturation: f64, value: f64) -> [f64; 3] {
    let i = (h * 6.0).floor();
    let f = h * 6.0 - i;
    let p = value * (1.0 - saturation);
    let q = value * (1.0 - f * saturation);
    let t = value * (1.0 - (1.0 - f) * saturation);
    match (i as i64).rem_euclid(6) {
        0 => [value, t, p],
        1 => [q, value, p],
        2 => [p, value, t],
        3 => [p, q, value],
        4 => [t, p, value],
        _ => [value, p, q],
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GazeSampling {
    Grid,
    Random,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthDatasetSpec {
    pub n_subjects: usize,
    pub images_per_subject: usize,
    pub image_size: (usize, usize),
    pub gaze_sampling: GazeSampling,
    pub master_seed: u64,
}

impl SynthDatasetSpec {
    /// Desk-scale default: 4 subjects x 200 images at 64x64.
    pub fn desk_scale(master_seed: u64) -> Self {
        SynthDatasetSpec {
            n_subjects: 4,
            images_per_subject: 200,
            image_size: (64, 64),
            gaze_sampling: GazeSampling::Random,
            master_seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_subjects < 2 {
            return Err(Error::validation("n_subjects must be >= 2"));
        }
        if self.images_per_subject < 2 {
            return Err(Error::validation("images_per_subject must be >= 2"));
        }
        if self.image_size.0 < 32 || self.image_size.1 < 32 {
            return Err(Error::validation("image_size must be at least 32x32"));
        }
        Ok(())
    }
}

struct Canvas {
    img: Image,
}

impl Canvas {
    fn new(h: usize, w: usize, bg: [f64; 3]) -> Self {
        let mut img = Image::zeros(h, w);
        for c in 0..3 {
            for y in 0..h {
                for x in 0..w {
                    img.set(c, y, x, bg[c]);
                }
            }
        }
        Canvas { img }
    }

    /// Anti-aliased filled ellipse: per-pixel coverage from a 4x4 subgrid.
    fn fill_ellipse(&mut self, cx: f64, cy: f64, rx: f64, ry: f64, color: [f64; 3]) {
        let (h, w) = (self.img.height(), self.img.width());
        let y0 = ((cy - ry - 1.0).floor().max(0.0)) as usize;
        let y1 = ((cy + ry + 1.0).ceil().min(h as f64 - 1.0)) as usize;
        let x0 = ((cx - rx - 1.0).floor().max(0.0)) as usize;
        let x1 = ((cx + rx + 1.0).ceil().min(w as f64 - 1.0)) as usize;
        for y in y0..=y1 {
            for x in x0..=x1 {
                let mut hits = 0u32;
                for sy in 0..4 {
                    for sx in 0..4 {
                        let px = x as f64 + (sx as f64 + 0.5) / 4.0;
                        let py = y as f64 + (sy as f64 + 0.5) / 4.0;
                        let dx = (px - cx) / rx;
                        let dy = (py - cy) / ry;
                        if dx * dx + dy * dy <= 1.0 {
                            hits += 1;
                        }
                    }
                }
                if hits == 0 {
                    continue;
                }
                let alpha = hits as f64 / 16.0;
                for c in 0..3 {
                    let old = self.img.get(c, y, x);
                    self.img.set(c, y, x, old * (1.0 - alpha) + color[c] * alpha);
                }
            }
        }
    }
}

struct FaceGeometry {
    eye_centers: [(f64, f64); 2], // left, right in image coordinates
    eye_half_w: f64,
    eye_half_h: f64,
    iris_radius: f64,
    iris_gain: f64,
}

fn geometry(app: &SubjectAppearance, h: usize, w: usize, jitter: (f64, f64)) -> FaceGeometry {
    let cx = w as f64 / 2.0 + jitter.0;
    let cy = h as f64 / 2.0 + jitter.1;
    let eye_y = cy - 0.10 * h as f64;
    let half_spacing = app.eye_spacing * w as f64 / 2.0;
    let eye_half_w = app.eye_size * w as f64;
    let eye_half_h = 0.72 * eye_half_w;
    let iris_gain = IRIS_GAIN_AT_64 * w as f64 / 64.0;
    // iris must stay inside the eye at the maximum renderable gaze
    let iris_radius = (eye_half_h - iris_gain * MAX_RENDERABLE_GAZE - 0.3).max(1.2);
    FaceGeometry {
        eye_centers: [(cx - half_spacing, eye_y), (cx + half_spacing, eye_y)],
        eye_half_w,
        eye_half_h,
        iris_radius,
        iris_gain,
    }
}

fn eye_outline(center: (f64, f64), half_w: f64, half_h: f64) -> Vec<(f64, f64)> {
    (0..8)
        .map(|i| {
            let angle = i as f64 / 8.0 * std::f64::consts::TAU;
            (center.0 + half_w * angle.cos(), center.1 + half_h * angle.sin())
        })
        .collect()
}

fn render_with_jitter(
    appearance: &SubjectAppearance,
    gaze: GazeDirection,
    size: (usize, usize),
    jitter: (f64, f64),
    image_index: usize,
    subject_index: usize,
) -> Result<FaceSample> {
    appearance.validate()?;
    if gaze.pitch.abs() > MAX_RENDERABLE_GAZE || gaze.yaw.abs() > MAX_RENDERABLE_GAZE {
        return Err(Error::validation(format!(
            "gaze ({}, {}) outside renderable range +-{MAX_RENDERABLE_GAZE}",
            gaze.pitch, gaze.yaw
        )));
    }
    let (h, w) = size;
    let geo = geometry(appearance, h, w, jitter);
    let bg = [0.12, 0.12, 0.14];
    let mut canvas = Canvas::new(h, w, bg);

    // face
    let cx = w as f64 / 2.0 + jitter.0;
    let cy = h as f64 / 2.0 + jitter.1;
    canvas.fill_ellipse(
        cx,
        cy,
        appearance.face_shape.0 * w as f64,
        appearance.face_shape.1 * h as f64,
        appearance.skin_tone,
    );

    // nose and mouth strokes (darkened skin)
    let dark = [
        appearance.skin_tone[0] * 0.55,
        appearance.skin_tone[1] * 0.55,
        appearance.skin_tone[2] * 0.55,
    ];
    canvas.fill_ellipse(cx, cy + 0.06 * h as f64, 0.018 * w as f64, 0.07 * h as f64, dark);
    canvas.fill_ellipse(cx, cy + 0.22 * h as f64, 0.10 * w as f64, 0.022 * h as f64, dark);

    // eyes: sclera then iris, displaced by gaze
    let sclera = [0.96, 0.96, 0.94];
    let iris_color = [0.09, 0.07, 0.12];
    let offset_x = geo.iris_gain * gaze.yaw;
    let offset_y = -geo.iris_gain * gaze.pitch;
    for &(ex, ey) in &geo.eye_centers {
        canvas.fill_ellipse(ex, ey, geo.eye_half_w, geo.eye_half_h, sclera);
        canvas.fill_ellipse(
            ex + offset_x,
            ey + offset_y,
            geo.iris_radius,
            geo.iris_radius,
            iris_color,
        );
    }

    let mut image = canvas.img;
    image.quantize();
    let landmarks = EyeLandmarks {
        left_outline: eye_outline(geo.eye_centers[0], geo.eye_half_w, geo.eye_half_h),
        right_outline: eye_outline(geo.eye_centers[1], geo.eye_half_w, geo.eye_half_h),
    };
    landmarks.validate(h, w)?;
    Ok(FaceSample { image, subject_index, image_index, gaze: Some(gaze), landmarks: Some(landmarks) })
}

/// Renders one face with the face centered in the frame.
pub fn render_face(
    appearance: &SubjectAppearance,
    gaze: GazeDirection,
    size: (usize, usize),
) -> Result<FaceSample> {
    render_with_jitter(appearance, gaze, size, (0.0, 0.0), 0, 0)
}

/// The iris displacement gain (pixels per radian) used at this image width.
pub fn iris_gain(image_width: usize) -> f64 {
    IRIS_GAIN_AT_64 * image_width as f64 / 64.0
}

/// Left/right eye selector for the measurement oracle.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Eye {
    Left,
    Right,
}

/// Read-back oracle: darkness-weighted centroid of iris pixels inside one
/// eye's landmark ellipse, returned relative to the eye center. Only pixels
/// strictly inside the eye (sclera or iris) are weighted, so dark skin
/// strokes and the dark background cannot bias the estimate.
pub fn measure_iris_offset(sample: &FaceSample, eye: Eye) -> Result<(f64, f64)> {
    let lm = sample
        .landmarks
        .as_ref()
        .ok_or_else(|| Error::validation("sample has no landmarks"))?;
    let outline = match eye {
        Eye::Left => &lm.left_outline,
        Eye::Right => &lm.right_outline,
    };
    let x_min = outline.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
    let x_max = outline.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max);
    let y_min = outline.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
    let y_max = outline.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
    let (ex, ey) = ((x_min + x_max) / 2.0, (y_min + y_max) / 2.0);
    let (hw, hh) = ((x_max - x_min) / 2.0, (y_max - y_min) / 2.0);
    let img = &sample.image;
    let mut wsum = 0.0;
    let mut xsum = 0.0;
    let mut ysum = 0.0;
    for y in y_min.floor().max(0.0) as usize..=(y_max.ceil() as usize).min(img.height() - 1) {
        for x in x_min.floor().max(0.0) as usize..=(x_max.ceil() as usize).min(img.width() - 1) {
            let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
            // shrink slightly to skip the eye boundary's anti-aliased rim
            let nx = (px - ex) / (hw * 0.95);
            let ny = (py - ey) / (hh * 0.95);
            if nx * nx + ny * ny > 1.0 {
                continue;
            }
            let lum =
                0.299 * img.get(0, y, x) + 0.587 * img.get(1, y, x) + 0.114 * img.get(2, y, x);
            let weight = (0.55 - lum).max(0.0);
            if weight > 0.0 {
                wsum += weight;
                xsum += weight * px;
                ysum += weight * py;
            }
        }
    }
    if wsum == 0.0 {
        return Err(Error::validation("no iris pixels found in eye region"));
    }
    Ok((xsum / wsum - ex, ysum / wsum - ey))
}

/// Generates a deterministic dataset with distinct subject appearances.
pub fn generate_dataset(spec: &SynthDatasetSpec) -> Result<Dataset> {
    spec.validate()?;
    let mut appearances = Vec::with_capacity(spec.n_subjects);
    for s in 0..spec.n_subjects {
        let app = SubjectAppearance::for_subject(spec.master_seed, s, spec.n_subjects);
        appearances.push(app);
    }
    for i in 0..appearances.len() {
        for j in i + 1..appearances.len() {
            if appearances[i].distance(&appearances[j]) < MIN_APPEARANCE_DISTANCE {
                return Err(Error::validation(format!(
                    "subjects {i} and {j} are not distinct enough (distance {:.3} < {MIN_APPEARANCE_DISTANCE})",
                    appearances[i].distance(&appearances[j])
                )));
            }
        }
    }

    let gaze_limit = 0.5; // margin inside the renderable range
    let mut samples = Vec::with_capacity(spec.n_subjects * spec.images_per_subject);
    for (s, app) in appearances.iter().enumerate() {
        for j in 0..spec.images_per_subject {
            let mut rng = seed::rng(spec.master_seed, &[DOMAIN_SYNTH, s as u64, 2, j as u64]);
            let gaze = match spec.gaze_sampling {
                GazeSampling::Random => GazeDirection::new(
                    rng.gen_range(-gaze_limit..gaze_limit),
                    rng.gen_range(-gaze_limit..gaze_limit),
                )?,
                GazeSampling::Grid => {
                    let side = (spec.images_per_subject as f64).sqrt().ceil() as usize;
                    let gy = j / side;
                    let gx = j % side;
                    let step = |i: usize| {
                        if side == 1 {
                            0.0
                        } else {
                            -gaze_limit + 2.0 * gaze_limit * i as f64 / (side - 1) as f64
                        }
                    };
                    GazeDirection::new(step(gy), step(gx))?
                }
            };
            let jitter = (rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5));
            samples.push(render_with_jitter(app, gaze, spec.image_size, jitter, j, s)?);
        }
    }
    Dataset::new(samples, spec.n_subjects)
}
