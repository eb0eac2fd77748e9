//! Gradient-weighted class-activation maps over the extractor's conv layers.

use crate::datamodel::Image;
use crate::error::{Error, Result};
use crate::nets::{images_to_batch, Checkpoint};
use crate::train::load_backbone;
use ndarray::Array2;

/// Normalized attention heatmap for one image at one conv layer.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionMap {
    /// H×W heat in [0, 1]; max = 1 unless the raw map is identically zero.
    pub heat: Array2<f64>,
    /// 1-based conv layer index within the backbone.
    pub layer_index: usize,
    pub source_image_id: String,
}

fn bilinear_upsample(map: &Array2<f64>, h: usize, w: usize) -> Array2<f64> {
    let (mh, mw) = map.dim();
    Array2::from_shape_fn((h, w), |(y, x)| {
        // align pixel centers between the two grids
        let sy = ((y as f64 + 0.5) * mh as f64 / h as f64 - 0.5).clamp(0.0, (mh - 1) as f64);
        let sx = ((x as f64 + 0.5) * mw as f64 / w as f64 - 0.5).clamp(0.0, (mw - 1) as f64);
        let (y0, x0) = (sy.floor() as usize, sx.floor() as usize);
        let (y1, x1) = ((y0 + 1).min(mh - 1), (x0 + 1).min(mw - 1));
        let (fy, fx) = (sy - y0 as f64, sx - x0 as f64);
        map[[y0, x0]] * (1.0 - fy) * (1.0 - fx)
            + map[[y0, x1]] * (1.0 - fy) * fx
            + map[[y1, x0]] * fy * (1.0 - fx)
            + map[[y1, x1]] * fy * fx
    })
}

/// Grad-CAM at `layer_index` (1-based over the backbone's conv layers), with
/// the scalar target set to the L2 norm of the representation h. Per-channel
/// weights are the spatially averaged gradients; the map is the rectified
/// weighted activation sum, bilinearly upsampled and max-normalized.
///
/// Runs the network in per-batch normalization mode so gradients can flow
/// through batch norm; the loaded weights are a private copy, so the
/// checkpoint itself is never mutated.
pub fn attention_map(
    checkpoint: &Checkpoint,
    image: &Image,
    layer_index: usize,
    source_image_id: &str,
) -> Result<AttentionMap> {
    let mut backbone = load_backbone(checkpoint)?;
    let n_layers = backbone.conv_layer_count();
    if layer_index == 0 || layer_index > n_layers {
        return Err(Error::validation(format!(
            "conv layer index {layer_index} invalid for this backbone; valid indices: 1..={n_layers}"
        )));
    }
    backbone.conv_layers_mut()[layer_index - 1].capture = true;

    let x = images_to_batch(&[image]);
    let h = backbone.forward(&x, true)?;
    let norm = h.row(0).dot(&h.row(0)).sqrt();
    // d||h||/dh = h / ||h|| (zero gradient at the origin)
    let dh = if norm > 0.0 { &h / norm } else { h.clone() };
    backbone.backward(&dh);

    let layer = &mut backbone.conv_layers_mut()[layer_index - 1];
    let activations = layer
        .captured_output
        .take()
        .ok_or_else(|| Error::validation("conv layer captured no output"))?;
    let grads = layer
        .captured_grad
        .take()
        .ok_or_else(|| Error::validation("conv layer captured no gradient"))?;

    let (_, c, oh, ow) = activations.dim();
    let spatial = (oh * ow) as f64;
    let mut raw: Array2<f64> = Array2::zeros((oh, ow));
    for ci in 0..c {
        let weight = grads.slice(ndarray::s![0, ci, .., ..]).sum() / spatial;
        for y in 0..oh {
            for xx in 0..ow {
                raw[[y, xx]] += weight * activations[[0, ci, y, xx]];
            }
        }
    }
    raw.mapv_inplace(|v| v.max(0.0));

    let mut heat = bilinear_upsample(&raw, image.height(), image.width());
    let max = heat.iter().fold(0.0_f64, |a, &b| a.max(b));
    if max > 0.0 {
        heat.mapv_inplace(|v| v / max);
    }
    Ok(AttentionMap { heat, layer_index, source_image_id: source_image_id.to_string() })
}

/// Writes the heat matrix as CSV (one row per image row).
pub fn write_heat_csv(map: &AttentionMap, path: &std::path::Path) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let mut out = String::new();
    for row in map.heat.rows() {
        let cells: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Writes a red-overlay PNG: the source image blended with the heatmap.
pub fn write_heat_overlay_png(
    map: &AttentionMap,
    image: &Image,
    path: &std::path::Path,
) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let (h, w) = (image.height(), image.width());
    let mut png = image::RgbImage::new(w as u32, h as u32);
    for y in 0..h {
        for x in 0..w {
            let heat = map.heat[[y, x]];
            let blend = |c: usize, target: f64| {
                let v = image.get(c, y, x) * (1.0 - 0.6 * heat) + target * 0.6 * heat;
                (v * 255.0).round().clamp(0.0, 255.0) as u8
            };
            png.put_pixel(
                x as u32,
                y as u32,
                image::Rgb([blend(0, 1.0), blend(1, 0.0), blend(2, 0.0)]),
            );
        }
    }
    png.save(path).map_err(|e| Error::validation(format!("writing {}: {e}", path.display())))?;
    Ok(())
}
