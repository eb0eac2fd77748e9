//! On-disk dataset layout: `root/images/*.png` plus `labels.csv`
//! (image_path, subject_id, pitch_rad, yaw_rad) and `landmarks.csv`
//! (image_path, eye, point_index, x, y).

use crate::datamodel::{Dataset, EyeLandmarks, FaceSample, GazeDirection, Image};
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::Path;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetLayout {
    /// Adapter layout for externally prepared data.
    GenericCsv,
    /// The layout written by the bundled synthetic generator; identical files
    /// plus a `synth_spec.json` provenance sidecar.
    Synthetic,
}

fn image_file_name(sample: &FaceSample) -> String {
    format!("s{:03}_i{:04}.png", sample.subject_index, sample.image_index)
}

/// Writes a dataset to `root` in the generic_csv layout. Pixel data is
/// quantized to 8-bit by the PNG encoding, so callers wanting a bit-exact
/// round trip should store quantized images (the synthetic generator does).
pub fn write_dataset(dataset: &Dataset, root: &Path) -> Result<()> {
    let images_dir = root.join("images");
    std::fs::create_dir_all(&images_dir)?;
    let mut labels = String::from("image_path,subject_id,pitch_rad,yaw_rad\n");
    let mut landmarks = String::from("image_path,eye,point_index,x,y\n");
    for sample in dataset.samples() {
        let name = image_file_name(sample);
        let rel = format!("images/{name}");
        let png = image::RgbImage::from_raw(
            sample.image.width() as u32,
            sample.image.height() as u32,
            sample.image.to_u8(),
        )
        .ok_or_else(|| Error::validation("image buffer size mismatch"))?;
        png.save(images_dir.join(&name))
            .map_err(|e| Error::validation(format!("writing {rel}: {e}")))?;
        let gaze = sample.gaze.ok_or_else(|| {
            Error::validation(format!("{rel}: dataset writer requires gaze labels"))
        })?;
        labels.push_str(&format!(
            "{rel},{},{},{}\n",
            sample.subject_index, gaze.pitch, gaze.yaw
        ));
        if let Some(lm) = &sample.landmarks {
            for (eye, outline) in [("left", &lm.left_outline), ("right", &lm.right_outline)] {
                for (i, (x, y)) in outline.iter().enumerate() {
                    landmarks.push_str(&format!("{rel},{eye},{i},{x},{y}\n"));
                }
            }
        }
    }
    std::fs::write(root.join("labels.csv"), labels)?;
    std::fs::write(root.join("landmarks.csv"), landmarks)?;
    Ok(())
}

struct LabelRow {
    image_path: String,
    subject_id: usize,
    gaze: GazeDirection,
}

fn parse_labels(path: &Path) -> Result<Vec<LabelRow>> {
    let mut reader = csv::Reader::from_path(path)
        .map_err(|e| Error::validation(format!("{}: {e}", path.display())))?;
    let mut rows = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let row = i + 2; // 1-based, after the header
        let record =
            record.map_err(|e| Error::validation(format!("labels.csv row {row}: {e}")))?;
        if record.len() != 4 {
            return Err(Error::validation(format!(
                "labels.csv row {row}: expected 4 columns (image_path, subject_id, \
                 pitch_rad, yaw_rad), got {}",
                record.len()
            )));
        }
        let field = |j: usize| record.get(j).unwrap_or_default();
        let subject_id: usize = field(1).parse().map_err(|_| {
            Error::validation(format!("labels.csv row {row}: bad subject_id {:?}", field(1)))
        })?;
        let num = |j: usize| -> Result<f64> {
            field(j).parse().map_err(|_| {
                Error::validation(format!("labels.csv row {row}: bad number {:?}", field(j)))
            })
        };
        rows.push(LabelRow {
            image_path: field(0).to_string(),
            subject_id,
            gaze: GazeDirection::new(num(2)?, num(3)?)
                .map_err(|e| Error::validation(format!("labels.csv row {row}: {e}")))?,
        });
    }
    Ok(rows)
}

fn parse_landmarks(path: &Path) -> Result<BTreeMap<String, EyeLandmarks>> {
    let mut reader = csv::Reader::from_path(path)
        .map_err(|e| Error::validation(format!("{}: {e}", path.display())))?;
    let mut per_image: BTreeMap<String, (Vec<(f64, f64)>, Vec<(f64, f64)>)> = BTreeMap::new();
    for (i, record) in reader.records().enumerate() {
        let row = i + 2;
        let record =
            record.map_err(|e| Error::validation(format!("landmarks.csv row {row}: {e}")))?;
        if record.len() != 5 {
            return Err(Error::validation(format!(
                "landmarks.csv row {row}: expected 5 columns, got {}",
                record.len()
            )));
        }
        let field = |j: usize| record.get(j).unwrap_or_default();
        let num = |j: usize| -> Result<f64> {
            field(j).parse().map_err(|_| {
                Error::validation(format!("landmarks.csv row {row}: bad number {:?}", field(j)))
            })
        };
        let point = (num(3)?, num(4)?);
        let entry = per_image.entry(field(0).to_string()).or_default();
        match field(1) {
            "left" => entry.0.push(point),
            "right" => entry.1.push(point),
            other => {
                return Err(Error::validation(format!(
                    "landmarks.csv row {row}: eye must be 'left' or 'right', got {other:?}"
                )))
            }
        }
    }
    Ok(per_image
        .into_iter()
        .map(|(k, (left, right))| {
            (k, EyeLandmarks { left_outline: left, right_outline: right })
        })
        .collect())
}

/// Loads a dataset from disk, validating labels and landmarks per file and
/// reporting per-subject image counts in error messages where useful.
pub fn ingest_dataset(root: &Path, layout: DatasetLayout) -> Result<Dataset> {
    let labels_path = root.join("labels.csv");
    if !labels_path.exists() {
        return Err(Error::validation(format!("missing {}", labels_path.display())));
    }
    if layout == DatasetLayout::Synthetic && !root.join("synth_spec.json").exists() {
        return Err(Error::validation(format!(
            "synthetic layout requires {}",
            root.join("synth_spec.json").display()
        )));
    }
    let labels = parse_labels(&labels_path)?;
    let landmarks_path = root.join("landmarks.csv");
    let mut landmarks = if landmarks_path.exists() {
        parse_landmarks(&landmarks_path)?
    } else {
        BTreeMap::new()
    };

    let mut samples = Vec::with_capacity(labels.len());
    let mut per_subject: BTreeMap<usize, usize> = BTreeMap::new();
    for row in labels {
        let img_path = root.join(&row.image_path);
        let decoded = image::open(&img_path)
            .map_err(|e| Error::validation(format!("{}: {e}", img_path.display())))?
            .into_rgb8();
        let (w, h) = (decoded.width() as usize, decoded.height() as usize);
        let img = Image::from_u8(decoded.as_raw(), h, w)?;
        let lm = landmarks.remove(&row.image_path);
        if let Some(lm) = &lm {
            lm.validate(h, w).map_err(|e| {
                Error::validation(format!("landmarks for {}: {e}", row.image_path))
            })?;
        }
        let image_index = per_subject.entry(row.subject_id).or_insert(0);
        samples.push(FaceSample {
            image: img,
            subject_index: row.subject_id,
            image_index: *image_index,
            gaze: Some(row.gaze),
            landmarks: lm,
        });
        *image_index += 1;
    }
    if samples.is_empty() {
        return Err(Error::validation(format!("{}: no samples", root.display())));
    }
    let n_subjects = per_subject.keys().max().unwrap() + 1;
    Dataset::new(samples, n_subjects)
}
