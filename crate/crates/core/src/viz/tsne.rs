//! Exact (O(n²)) t-SNE for small embedding sets.

use crate::error::{Error, Result};
use crate::seed::{self, DOMAIN_VIZ};
use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TsneConfig {
    pub perplexity: f64,
    pub n_steps: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl TsneConfig {
    pub fn new(seed: u64) -> Self {
        TsneConfig { perplexity: 30.0, n_steps: 1000, learning_rate: 200.0, seed }
    }

    /// Defaults with the learning rate scaled to the point count
    /// (n / early-exaggeration, floored at 50), which converges much better
    /// on small sets than the large-set default of 200.
    pub fn for_points(n_points: usize, seed: u64) -> Self {
        let mut cfg = TsneConfig::new(seed);
        cfg.learning_rate = (n_points as f64 / 12.0).max(50.0);
        if cfg.perplexity > (n_points.saturating_sub(1)) as f64 / 3.0 {
            cfg.perplexity = ((n_points.saturating_sub(1)) as f64 / 3.0).max(2.0).floor();
        }
        cfg
    }

    pub fn validate(&self, n_points: usize) -> Result<()> {
        if self.perplexity <= 0.0 || self.n_steps == 0 || self.learning_rate <= 0.0 {
            return Err(Error::validation("t-SNE parameters must be positive"));
        }
        // the standard feasibility rule: each point needs ~3*perplexity neighbors
        let max_perplexity = (n_points.saturating_sub(1)) as f64 / 3.0;
        if self.perplexity > max_perplexity {
            return Err(Error::validation(format!(
                "perplexity {} too large for {n_points} points; use <= {max_perplexity:.1}",
                self.perplexity
            )));
        }
        Ok(())
    }
}

/// Binary-searches the Gaussian bandwidth of one row so the conditional
/// distribution hits the requested perplexity.
fn row_affinities(sq_dists: &[f64], i: usize, perplexity: f64) -> Vec<f64> {
    let target_entropy = perplexity.ln();
    let n = sq_dists.len();
    let (mut beta, mut beta_lo, mut beta_hi) = (1.0, 0.0_f64, f64::INFINITY);
    let mut p = vec![0.0; n];
    for _ in 0..64 {
        let mut sum = 0.0;
        for j in 0..n {
            p[j] = if j == i { 0.0 } else { (-beta * sq_dists[j]).exp() };
            sum += p[j];
        }
        if sum <= 0.0 {
            // all mass collapsed; relax the bandwidth
            beta /= 2.0;
            continue;
        }
        let mut entropy = 0.0;
        for pj in p.iter_mut() {
            *pj /= sum;
            if *pj > 1e-300 {
                entropy -= *pj * pj.ln();
            }
        }
        let diff = entropy - target_entropy;
        if diff.abs() < 1e-7 {
            break;
        }
        if diff > 0.0 {
            beta_lo = beta;
            beta = if beta_hi.is_finite() { (beta + beta_hi) / 2.0 } else { beta * 2.0 };
        } else {
            beta_hi = beta;
            beta = (beta + beta_lo) / 2.0;
        }
    }
    p
}

/// Reduces (n, d) embeddings to (n, 2) with exact t-SNE: symmetrized Gaussian
/// input affinities, Student-t output kernel, momentum gradient descent with
/// early exaggeration for the first quarter of the steps.
pub fn tsne_2d(x: &Array2<f64>, config: &TsneConfig) -> Result<Array2<f64>> {
    let n = x.nrows();
    config.validate(n)?;

    let mut sq: Array2<f64> = Array2::zeros((n, n));
    for i in 0..n {
        for j in (i + 1)..n {
            let d = (&x.row(i) - &x.row(j)).mapv(|v| v * v).sum();
            sq[[i, j]] = d;
            sq[[j, i]] = d;
        }
    }

    let mut p: Array2<f64> = Array2::zeros((n, n));
    for i in 0..n {
        let row: Vec<f64> = sq.row(i).to_vec();
        let cond = row_affinities(&row, i, config.perplexity);
        for j in 0..n {
            p[[i, j]] = cond[j];
        }
    }
    // symmetrize and normalize to a joint distribution
    let p_sum = 2.0 * n as f64;
    for i in 0..n {
        for j in (i + 1)..n {
            let v = ((p[[i, j]] + p[[j, i]]) / p_sum).max(1e-12);
            p[[i, j]] = v;
            p[[j, i]] = v;
        }
        p[[i, i]] = 0.0;
    }

    let mut rng = seed::rng(config.seed, &[DOMAIN_VIZ]);
    let mut y: Array2<f64> = Array2::zeros((n, 2));
    for v in y.iter_mut() {
        *v = rng.gen_range(-1e-4..1e-4);
    }
    let mut velocity: Array2<f64> = Array2::zeros((n, 2));
    let exaggeration_steps = config.n_steps / 4;

    for step in 0..config.n_steps {
        let exaggeration = if step < exaggeration_steps { 12.0 } else { 1.0 };
        let momentum = if step < exaggeration_steps { 0.5 } else { 0.8 };

        // Student-t kernel q_ij ∝ (1 + ||y_i - y_j||²)^-1
        let mut num: Array2<f64> = Array2::zeros((n, n));
        let mut z = 0.0_f64;
        for i in 0..n {
            for j in (i + 1)..n {
                let dy0 = y[[i, 0]] - y[[j, 0]];
                let dy1 = y[[i, 1]] - y[[j, 1]];
                let k = 1.0 / (1.0 + dy0 * dy0 + dy1 * dy1);
                num[[i, j]] = k;
                num[[j, i]] = k;
                z += 2.0 * k;
            }
        }
        let z = z.max(1e-12);

        let mut grad: Array2<f64> = Array2::zeros((n, 2));
        for i in 0..n {
            for j in 0..n {
                if i == j {
                    continue;
                }
                let q = (num[[i, j]] / z).max(1e-12);
                let coeff = 4.0 * (exaggeration * p[[i, j]] - q) * num[[i, j]];
                grad[[i, 0]] += coeff * (y[[i, 0]] - y[[j, 0]]);
                grad[[i, 1]] += coeff * (y[[i, 1]] - y[[j, 1]]);
            }
        }
        velocity = momentum * &velocity - config.learning_rate * &grad;
        y += &velocity;
    }
    Ok(y)
}

/// Mean silhouette coefficient of 2D points under integer labels: for every
/// point, (b - a) / max(a, b) with a = mean intra-cluster distance and b =
/// smallest mean distance to another cluster. Requires >= 2 clusters.
pub fn silhouette_score(points: &Array2<f64>, labels: &[usize]) -> Result<f64> {
    let n = points.nrows();
    if n != labels.len() {
        return Err(Error::validation("points and labels must have equal length"));
    }
    let clusters: std::collections::BTreeSet<usize> = labels.iter().copied().collect();
    if clusters.len() < 2 {
        return Err(Error::validation("silhouette needs >= 2 clusters"));
    }
    let dist = |i: usize, j: usize| -> f64 {
        let d0 = points[[i, 0]] - points[[j, 0]];
        let d1 = points[[i, 1]] - points[[j, 1]];
        (d0 * d0 + d1 * d1).sqrt()
    };
    let mut total = 0.0;
    for i in 0..n {
        let mut sums: std::collections::BTreeMap<usize, (f64, usize)> = std::collections::BTreeMap::new();
        for j in 0..n {
            if i == j {
                continue;
            }
            let entry = sums.entry(labels[j]).or_insert((0.0, 0));
            entry.0 += dist(i, j);
            entry.1 += 1;
        }
        let own = sums.get(&labels[i]).copied();
        let a = match own {
            Some((s, c)) if c > 0 => s / c as f64,
            // singleton cluster: silhouette defined as 0
            _ => {
                continue;
            }
        };
        let b = sums
            .iter()
            .filter(|(&l, _)| l != labels[i])
            .map(|(_, &(s, c))| s / c as f64)
            .fold(f64::INFINITY, f64::min);
        total += (b - a) / a.max(b);
    }
    Ok(total / n as f64)
}
