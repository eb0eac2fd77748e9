//! Evaluation harness: angular-error metric, cross-validation protocols,
//! dataset ingestion, and the six-variant ablation dispatcher.

mod folds;
mod ingest;
mod variants;

pub use folds::{make_folds, Fold, FoldKind};
pub use ingest::{ingest_dataset, write_dataset, DatasetLayout};
pub use variants::{run_variant, EvalRunConfig, Pretraining, Variant, VariantRecipe, ALL_VARIANTS};

use crate::datamodel::GazeDirection;
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::path::Path;

/// Angular error between two gaze directions, in degrees: the 3D angle
/// between their camera-frame unit vectors.
///
/// Computed as atan2(|a x b|, a . b) rather than acos(a . b): the two are
/// mathematically equal on unit vectors, but acos loses ~8 digits near 0
/// and 180 degrees, while atan2 stays accurate (and returns exactly 0 for
/// identical inputs).
pub fn angular_error(pred: GazeDirection, truth: GazeDirection) -> f64 {
    let a = pred.unit_vector();
    let b = truth.unit_vector();
    let dot: f64 = a.iter().zip(b.iter()).map(|(x, y)| x * y).sum();
    let cross = [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ];
    let cross_norm = cross.iter().map(|c| c * c).sum::<f64>().sqrt();
    cross_norm.atan2(dot).to_degrees()
}

/// Cross-validation protocol for one evaluation run.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Protocol {
    pub kind: FoldKind,
    pub pretrain_dataset: String,
    pub eval_dataset: String,
    pub n_calibration: usize,
    pub n_repeats: usize,
}

impl Protocol {
    pub fn validate(&self) -> Result<()> {
        if self.n_repeats < 1 {
            return Err(Error::validation("n_repeats must be >= 1"));
        }
        if self.n_calibration < 1 {
            return Err(Error::validation("n_calibration must be >= 1"));
        }
        if self.kind == FoldKind::CrossDataset && self.pretrain_dataset == self.eval_dataset {
            return Err(Error::validation(
                "cross_dataset protocol needs distinct pretrain and eval datasets",
            ));
        }
        Ok(())
    }
}

/// Aggregated result of one variant under one protocol.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricsReport {
    pub variant: Variant,
    pub protocol: Protocol,
    pub config_hash: String,
    /// Mean angular error (degrees) per fold, averaged over repeats.
    pub per_fold_errors: Vec<f64>,
    /// Calibration-sampling seed of every (fold, repeat) cell, row-major.
    pub per_repeat_seeds: Vec<Vec<u64>>,
    pub mean: f64,
    pub std: f64,
}

impl MetricsReport {
    pub(crate) fn from_folds(
        variant: Variant,
        protocol: Protocol,
        config_hash: String,
        per_fold_errors: Vec<f64>,
        per_repeat_seeds: Vec<Vec<u64>>,
    ) -> Self {
        let n = per_fold_errors.len() as f64;
        let mean = per_fold_errors.iter().sum::<f64>() / n;
        let var = per_fold_errors.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / n;
        MetricsReport {
            variant,
            protocol,
            config_hash,
            per_fold_errors,
            per_repeat_seeds,
            mean,
            std: var.sqrt(),
        }
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }
}

/// Appends one report as a row of the summary CSV, writing the header first
/// when the file does not exist yet.
pub fn append_summary_row(path: &Path, report: &MetricsReport) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let existed = path.exists();
    let mut out = String::new();
    if !existed {
        out.push_str("variant,protocol,n_folds,mean_deg,std_deg\n");
    }
    out.push_str(&format!(
        "{},{:?},{},{},{}\n",
        report.variant.name(),
        report.protocol.kind,
        report.per_fold_errors.len(),
        report.mean,
        report.std
    ));
    use std::io::Write as _;
    std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)?
        .write_all(out.as_bytes())?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn angular_error_of_identical_directions_is_zero() {
        let g = GazeDirection::new(0.21, -0.34).unwrap();
        assert_abs_diff_eq!(angular_error(g, g), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn angular_error_of_orthogonal_axes_is_ninety_degrees() {
        let a = GazeDirection::new(0.0, 0.0).unwrap();
        let b = GazeDirection::new(0.0, std::f64::consts::FRAC_PI_2).unwrap();
        assert_abs_diff_eq!(angular_error(a, b), 90.0, epsilon = 1e-9);
    }

    #[test]
    fn angular_error_matches_dot_product_oracle() {
        // independent recomputation of the (0.1, 0.2) vs (-0.1, 0.25) case:
        // v = (-cos p sin y, -sin p, -cos p cos y), angle = acos(<v1,v2>)
        let v = |p: f64, y: f64| {
            [-p.cos() * y.sin(), -p.sin(), -p.cos() * y.cos()]
        };
        let (v1, v2) = (v(0.1, 0.2), v(-0.1, 0.25));
        let dot: f64 = v1.iter().zip(v2.iter()).map(|(a, b)| a * b).sum();
        let expected = dot.clamp(-1.0, 1.0).acos().to_degrees();
        let got = angular_error(
            GazeDirection::new(0.1, 0.2).unwrap(),
            GazeDirection::new(-0.1, 0.25).unwrap(),
        );
        assert_abs_diff_eq!(got, expected, epsilon = 1e-9);
    }

    #[test]
    fn angular_error_is_symmetric() {
        use rand::Rng;
        let mut rng = crate::seed::rng(9, &[77]);
        for _ in 0..1000 {
            let a = GazeDirection::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.5..1.5))
                .unwrap();
            let b = GazeDirection::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.5..1.5))
                .unwrap();
            assert_abs_diff_eq!(angular_error(a, b), angular_error(b, a), epsilon = 1e-9);
        }
    }

    #[test]
    fn cross_dataset_protocol_rejects_identical_datasets() {
        let p = Protocol {
            kind: FoldKind::CrossDataset,
            pretrain_dataset: "a".into(),
            eval_dataset: "a".into(),
            n_calibration: 10,
            n_repeats: 1,
        };
        assert!(p.validate().is_err());
    }

    #[test]
    fn report_mean_and_std_are_self_consistent() {
        let r = MetricsReport::from_folds(
            Variant::ConGaze,
            Protocol {
                kind: FoldKind::FiveFold,
                pretrain_dataset: "s".into(),
                eval_dataset: "s".into(),
                n_calibration: 5,
                n_repeats: 1,
            },
            "h".into(),
            vec![1.0, 2.0, 3.0, 4.0, 5.0],
            vec![],
        );
        let mean = r.per_fold_errors.iter().sum::<f64>() / 5.0;
        assert_abs_diff_eq!(r.mean, mean, epsilon = 1e-9);
        let var = r.per_fold_errors.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / 5.0;
        assert_abs_diff_eq!(r.std, var.sqrt(), epsilon = 1e-9);
    }
}
