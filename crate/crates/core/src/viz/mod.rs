//! Visualization exports: t-SNE embedding scatters and gradient-based
//! attention heatmaps.

mod attention;
mod tsne;

pub use attention::{attention_map, write_heat_csv, write_heat_overlay_png, AttentionMap};
pub use tsne::{silhouette_score, tsne_2d, TsneConfig};

use crate::datamodel::{Dataset, Image};
use crate::error::{Error, Result};
use crate::nets::{images_to_batch, Checkpoint};
use crate::train::load_backbone;
use ndarray::Array2;
use std::path::Path;

/// 2D scatter of representations, one point per dataset sample.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingPlotData {
    pub points: Vec<(f64, f64)>,
    pub subject_indices: Vec<usize>,
    pub method_label: String,
}

impl EmbeddingPlotData {
    /// Subject-identity silhouette of the 2D points.
    pub fn subject_silhouette(&self) -> Result<f64> {
        let mut pts = Array2::zeros((self.points.len(), 2));
        for (i, &(x, y)) in self.points.iter().enumerate() {
            pts[[i, 0]] = x;
            pts[[i, 1]] = y;
        }
        silhouette_score(&pts, &self.subject_indices)
    }
}

/// Extracts h for every sample and reduces to 2D with t-SNE.
pub fn embed_dataset_2d(
    checkpoint: &Checkpoint,
    dataset: &Dataset,
    config: &TsneConfig,
    method_label: &str,
) -> Result<EmbeddingPlotData> {
    let mut backbone = load_backbone(checkpoint)?;
    let images: Vec<&Image> = dataset.samples().iter().map(|s| &s.image).collect();
    let h = backbone.forward(&images_to_batch(&images), false)?;
    let y = tsne_2d(&h, config)?;
    Ok(EmbeddingPlotData {
        points: (0..y.nrows()).map(|i| (y[[i, 0]], y[[i, 1]])).collect(),
        subject_indices: dataset.samples().iter().map(|s| s.subject_index).collect(),
        method_label: method_label.to_string(),
    })
}

const SCATTER_SIZE: usize = 512;
const PALETTE: [[u8; 3]; 8] = [
    [214, 69, 65],
    [65, 131, 215],
    [38, 166, 91],
    [244, 179, 80],
    [155, 89, 182],
    [54, 215, 183],
    [242, 121, 53],
    [108, 122, 137],
];

fn render_scatter(data: &EmbeddingPlotData) -> image::RgbImage {
    let mut png =
        image::RgbImage::from_pixel(SCATTER_SIZE as u32, SCATTER_SIZE as u32, image::Rgb([255, 255, 255]));
    if data.points.is_empty() {
        return png;
    }
    let (mut x_min, mut x_max, mut y_min, mut y_max) =
        (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in &data.points {
        x_min = x_min.min(x);
        x_max = x_max.max(x);
        y_min = y_min.min(y);
        y_max = y_max.max(y);
    }
    let span_x = (x_max - x_min).max(1e-12);
    let span_y = (y_max - y_min).max(1e-12);
    let margin = 16.0;
    let scale = SCATTER_SIZE as f64 - 2.0 * margin;
    for (&(x, y), &subject) in data.points.iter().zip(&data.subject_indices) {
        let px = margin + (x - x_min) / span_x * scale;
        let py = margin + (y - y_min) / span_y * scale;
        let color = image::Rgb(PALETTE[subject % PALETTE.len()]);
        for dy in -1i64..=1 {
            for dx in -1i64..=1 {
                let (ix, iy) = (px.round() as i64 + dx, py.round() as i64 + dy);
                if (0..SCATTER_SIZE as i64).contains(&ix) && (0..SCATTER_SIZE as i64).contains(&iy)
                {
                    png.put_pixel(ix as u32, iy as u32, color);
                }
            }
        }
    }
    png
}

/// Extracts representations, reduces them to 2D, and writes `<out_stem>.csv`
/// (x, y, subject_id, image_id) plus `<out_stem>.png`. Byte-deterministic
/// under a fixed seed; never mutates checkpoint state.
pub fn export_embedding_scatter(
    checkpoint: &Checkpoint,
    dataset: &Dataset,
    config: &TsneConfig,
    method_label: &str,
    out_stem: &Path,
) -> Result<EmbeddingPlotData> {
    let data = embed_dataset_2d(checkpoint, dataset, config, method_label)?;
    if let Some(parent) = out_stem.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    let mut csv = String::from("x,y,subject_id,image_id\n");
    for (i, (&(x, y), sample)) in data.points.iter().zip(dataset.samples()).enumerate() {
        let _ = i;
        csv.push_str(&format!(
            "{x},{y},{},s{:03}_i{:04}\n",
            sample.subject_index, sample.subject_index, sample.image_index
        ));
    }
    std::fs::write(out_stem.with_extension("csv"), csv)?;
    let png = render_scatter(&data);
    let png_path = out_stem.with_extension("png");
    png.save(&png_path)
        .map_err(|e| Error::validation(format!("writing {}: {e}", png_path.display())))?;
    Ok(data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthface::{generate_dataset, GazeSampling, SynthDatasetSpec};
    use crate::train::{pretrain, PretrainConfig};

    #[test]
    fn scatter_export_is_byte_deterministic_and_covers_every_sample() {
        let ds = generate_dataset(&SynthDatasetSpec {
            n_subjects: 2,
            images_per_subject: 12,
            image_size: (64, 64),
            gaze_sampling: GazeSampling::Random,
            master_seed: 31,
        })
        .unwrap();
        let mut pc = PretrainConfig::desk_scale(5);
        pc.n_iterations = 0;
        let ckpt = pretrain(&ds, &pc).unwrap().checkpoint;
        let mut cfg = TsneConfig::new(9);
        cfg.perplexity = 5.0;
        cfg.n_steps = 50;
        let dir = tempfile::tempdir().unwrap();
        let stem = dir.path().join("scatter");
        let data = export_embedding_scatter(&ckpt, &ds, &cfg, "test", &stem).unwrap();
        assert_eq!(data.points.len(), ds.len());
        let csv_a = std::fs::read(stem.with_extension("csv")).unwrap();
        let png_a = std::fs::read(stem.with_extension("png")).unwrap();
        export_embedding_scatter(&ckpt, &ds, &cfg, "test", &stem).unwrap();
        assert_eq!(csv_a, std::fs::read(stem.with_extension("csv")).unwrap());
        assert_eq!(png_a, std::fs::read(stem.with_extension("png")).unwrap());
    }
}
