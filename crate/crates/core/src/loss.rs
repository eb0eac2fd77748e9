//! Subject-specific contrastive loss.
//!
//! For a batch of K embeddings per view set, the loss for anchor j is
//! `-log( exp(sim(zp_j, zq_j)/tau) / sum_k exp(sim(zp_j, zq_k)/tau) )`,
//! with the k = j term included in the denominator. The batch loss is the
//! mean over anchors. Gradients with respect to both view sets are analytic.

use crate::error::{Error, Result};
use ndarray::{Array1, Array2, ArrayView1, Axis};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub temperature: f64,
    /// When set, averages the loss anchored at p with the loss anchored at q.
    /// Off by default: the loss is anchored at the p views only.
    pub symmetrize: bool,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig { temperature: 0.1, symmetrize: false }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0) {
            return Err(Error::validation("temperature must be positive"));
        }
        Ok(())
    }
}

/// Cosine similarity of two nonzero vectors.
pub fn cosine_similarity(u: ArrayView1<f64>, v: ArrayView1<f64>) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::validation("cosine_similarity: dimension mismatch"));
    }
    let nu = u.dot(&u).sqrt();
    let nv = v.dot(&v).sqrt();
    if nu == 0.0 || nv == 0.0 {
        return Err(Error::validation("cosine_similarity: zero-norm input"));
    }
    Ok(u.dot(&v) / (nu * nv))
}

fn validate_embeddings(z: &Array2<f64>, name: &str) -> Result<Array1<f64>> {
    let norms = z.map_axis(Axis(1), |row| row.dot(&row).sqrt());
    if norms.iter().any(|&n| n == 0.0 || !n.is_finite()) {
        return Err(Error::validation(format!("{name} contains a zero-norm or non-finite row")));
    }
    Ok(norms)
}

/// Row-normalized copy and the norms.
fn normalize_rows(z: &Array2<f64>, name: &str) -> Result<(Array2<f64>, Array1<f64>)> {
    let norms = validate_embeddings(z, name)?;
    let mut out = z.clone();
    for (mut row, &n) in out.rows_mut().into_iter().zip(norms.iter()) {
        row.mapv_inplace(|v| v / n);
    }
    Ok((out, norms))
}

/// Loss for the single gaze-consistent pair anchored at `zp[j]`.
pub fn pair_loss(zp: &Array2<f64>, zq: &Array2<f64>, j: usize, temperature: f64) -> Result<f64> {
    let k = zp.nrows();
    if k == 0 || zq.nrows() != k || zp.ncols() != zq.ncols() {
        return Err(Error::validation("pair_loss: mismatched embedding batches"));
    }
    if j >= k {
        return Err(Error::validation(format!("pair_loss: anchor {j} out of range 0..{k}")));
    }
    if !(temperature > 0.0) {
        return Err(Error::validation("pair_loss: temperature must be positive"));
    }
    validate_embeddings(zp, "zp")?;
    validate_embeddings(zq, "zq")?;
    let anchor = zp.row(j);
    let sims: Vec<f64> =
        (0..k).map(|m| cosine_similarity(anchor, zq.row(m))).collect::<Result<_>>()?;
    // log-sum-exp with max shift
    let scaled: Vec<f64> = sims.iter().map(|s| s / temperature).collect();
    let max = scaled.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + scaled.iter().map(|s| (s - max).exp()).sum::<f64>().ln();
    Ok(lse - scaled[j])
}

/// Mean of [`pair_loss`] over all anchors; symmetrized when configured.
pub fn batch_loss(zp: &Array2<f64>, zq: &Array2<f64>, config: &LossConfig) -> Result<f64> {
    config.validate()?;
    let k = zp.nrows();
    if k == 0 {
        return Err(Error::validation("batch_loss: empty batch"));
    }
    let mut total = 0.0;
    for j in 0..k {
        total += pair_loss(zp, zq, j, config.temperature)?;
    }
    let mut loss = total / k as f64;
    if config.symmetrize {
        let mut total_q = 0.0;
        for j in 0..k {
            total_q += pair_loss(zq, zp, j, config.temperature)?;
        }
        loss = 0.5 * (loss + total_q / k as f64);
    }
    Ok(loss)
}

/// Batch loss plus analytic gradients w.r.t. both embedding sets.
pub fn batch_loss_with_grad(
    zp: &Array2<f64>,
    zq: &Array2<f64>,
    config: &LossConfig,
) -> Result<(f64, Array2<f64>, Array2<f64>)> {
    config.validate()?;
    let (loss_p, mut dzp, mut dzq) = directed_loss_grad(zp, zq, config.temperature)?;
    let mut loss = loss_p;
    if config.symmetrize {
        let (loss_q, dzq2, dzp2) = directed_loss_grad(zq, zp, config.temperature)?;
        loss = 0.5 * (loss_p + loss_q);
        dzp = 0.5 * (&dzp + &dzp2);
        dzq = 0.5 * (&dzq + &dzq2);
    }
    Ok((loss, dzp, dzq))
}

/// Loss anchored at `za` rows with `zb` candidates, and its gradients.
fn directed_loss_grad(
    za: &Array2<f64>,
    zb: &Array2<f64>,
    temperature: f64,
) -> Result<(f64, Array2<f64>, Array2<f64>)> {
    let k = za.nrows();
    if k == 0 || zb.nrows() != k || za.ncols() != zb.ncols() {
        return Err(Error::validation("loss: mismatched embedding batches"));
    }
    let (ua, na) = normalize_rows(za, "anchor embeddings")?;
    let (ub, nb) = normalize_rows(zb, "candidate embeddings")?;
    let sims = ua.dot(&ub.t()); // (K, K) cosine similarities

    // softmax over candidates per anchor row
    let mut soft = Array2::zeros((k, k));
    let mut loss = 0.0;
    for j in 0..k {
        let row: Vec<f64> = (0..k).map(|m| sims[[j, m]] / temperature).collect();
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = row.iter().map(|s| (s - max).exp()).collect();
        let denom: f64 = exps.iter().sum();
        for m in 0..k {
            soft[[j, m]] = exps[m] / denom;
        }
        loss += max + denom.ln() - row[j];
    }
    loss /= k as f64;

    // dL/dsim[j,m] = (softmax - identity)/(tau*K)
    let scale = 1.0 / (temperature * k as f64);
    let mut dsim = soft;
    for j in 0..k {
        dsim[[j, j]] -= 1.0;
    }
    dsim.mapv_inplace(|v| v * scale);

    // cosine backprop: for s = ua_j . ub_m,
    //   ds/dza_j = (ub_m - s*ua_j)/|za_j|,  ds/dzb_m = (ua_j - s*ub_m)/|zb_m|
    let mut dza = Array2::zeros(za.raw_dim());
    let mut dzb = Array2::zeros(zb.raw_dim());
    for j in 0..k {
        for m in 0..k {
            let g = dsim[[j, m]];
            if g == 0.0 {
                continue;
            }
            let s = sims[[j, m]];
            for d in 0..za.ncols() {
                dza[[j, d]] += g * (ub[[m, d]] - s * ua[[j, d]]) / na[j];
                dzb[[m, d]] += g * (ua[[j, d]] - s * ub[[m, d]]) / nb[m];
            }
        }
    }
    Ok((loss, dza, dzb))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Independent brute-force oracle: raw per-pair cosine + naive log-softmax.
    pub(crate) fn brute_force_pair_loss(
        zp: &Array2<f64>,
        zq: &Array2<f64>,
        j: usize,
        tau: f64,
    ) -> f64 {
        let cos = |u: ArrayView1<f64>, v: ArrayView1<f64>| {
            let dot: f64 = u.iter().zip(v.iter()).map(|(a, b)| a * b).sum();
            let nu: f64 = u.iter().map(|a| a * a).sum::<f64>().sqrt();
            let nv: f64 = v.iter().map(|a| a * a).sum::<f64>().sqrt();
            dot / (nu * nv)
        };
        let num = (cos(zp.row(j), zq.row(j)) / tau).exp();
        let den: f64 = (0..zp.nrows()).map(|m| (cos(zp.row(j), zq.row(m)) / tau).exp()).sum();
        -(num / den).ln()
    }

    fn random_embeddings(k: usize, d: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
        Array2::from_shape_fn((k, d), |_| rng.gen_range(-1.0..1.0))
    }

    #[test]
    fn cosine_similarity_basics() {
        let u = array![1.0, 2.0, 3.0];
        assert_abs_diff_eq!(cosine_similarity(u.view(), u.view()).unwrap(), 1.0, epsilon = 1e-12);
        let a = array![1.0, 0.0];
        let b = array![0.0, 1.0];
        assert_eq!(cosine_similarity(a.view(), b.view()).unwrap(), 0.0);
        let v = array![4.0, 5.0, 6.0];
        let expected = 32.0 / (14.0f64.sqrt() * 77.0f64.sqrt());
        assert_abs_diff_eq!(
            cosine_similarity(u.view(), v.view()).unwrap(),
            expected,
            epsilon = 1e-12
        );
        let zero = array![0.0, 0.0];
        assert!(cosine_similarity(zero.view(), b.view()).is_err());
    }

    #[test]
    fn single_pair_loss_is_zero() {
        let zp = array![[0.3, -0.7, 0.2]];
        let zq = array![[0.9, 0.1, -0.4]];
        assert_eq!(pair_loss(&zp, &zq, 0, 0.1).unwrap(), 0.0);
        assert_eq!(batch_loss(&zp, &zq, &LossConfig::default()).unwrap(), 0.0);
    }

    #[test]
    fn identical_candidates_give_log_k() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let zp = random_embeddings(4, 8, &mut rng);
        let row = random_embeddings(1, 8, &mut rng);
        let mut zq = Array2::zeros((4, 8));
        for mut r in zq.rows_mut() {
            r.assign(&row.row(0));
        }
        let loss = pair_loss(&zp, &zq, 1, 0.1).unwrap();
        assert_abs_diff_eq!(loss, 4.0f64.ln(), epsilon = 1e-12);
        assert_abs_diff_eq!(4.0f64.ln(), 1.386294, epsilon = 1e-6);
    }

    #[test]
    fn matches_brute_force_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let zp = random_embeddings(8, 16, &mut rng);
        let zq = random_embeddings(8, 16, &mut rng);
        for j in 0..8 {
            let ours = pair_loss(&zp, &zq, j, 0.1).unwrap();
            let oracle = brute_force_pair_loss(&zp, &zq, j, 0.1);
            assert_abs_diff_eq!(ours, oracle, epsilon = 1e-10);
        }
    }

    #[test]
    fn batch_loss_is_mean_of_pair_losses() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let zp = random_embeddings(5, 12, &mut rng);
        let zq = random_embeddings(5, 12, &mut rng);
        let cfg = LossConfig::default();
        let mean: f64 =
            (0..5).map(|j| pair_loss(&zp, &zq, j, cfg.temperature).unwrap()).sum::<f64>() / 5.0;
        assert_abs_diff_eq!(batch_loss(&zp, &zq, &cfg).unwrap(), mean, epsilon = 1e-12);
    }

    #[test]
    fn pair_loss_nonnegative_and_bounded() {
        let mut rng = ChaCha8Rng::seed_from_u64(24);
        for _ in 0..50 {
            let k = rng.gen_range(1..10);
            let zp = random_embeddings(k, 6, &mut rng);
            let zq = random_embeddings(k, 6, &mut rng);
            let tau = 0.1;
            for j in 0..k {
                let loss = pair_loss(&zp, &zq, j, tau).unwrap();
                assert!(loss >= 0.0, "pair_loss must be >= 0, got {loss}");
                let sims: Vec<f64> = (0..k)
                    .map(|m| cosine_similarity(zp.row(j), zq.row(m)).unwrap())
                    .collect();
                let max = sims.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let min = sims.iter().cloned().fold(f64::INFINITY, f64::min);
                let bound = (k as f64).ln() + (max - min) / tau;
                assert!(loss <= bound + 1e-12, "loss {loss} above bound {bound}");
            }
        }
    }

    #[test]
    fn monotone_in_positive_similarity() {
        // Controlled similarity-only construction: 2D unit vectors at chosen angles.
        let unit = |angle: f64| [angle.cos(), angle.sin()];
        let build = |pos_angle: f64| {
            let zp = array![[1.0, 0.0], [0.0, 1.0], [0.7, 0.7]];
            let p = unit(pos_angle);
            let zq = array![[p[0], p[1]], [-1.0, 0.3], [0.2, -0.9]];
            (zp, zq)
        };
        let mut prev = f64::INFINITY;
        for pos_angle in [1.2, 0.8, 0.4, 0.1] {
            let (zp, zq) = build(pos_angle);
            let loss = pair_loss(&zp, &zq, 0, 0.2).unwrap();
            assert!(loss < prev, "loss must strictly decrease as sim(j,j) rises");
            prev = loss;
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(25);
        let cfg = LossConfig { temperature: 0.1, symmetrize: false };
        let zp = random_embeddings(4, 6, &mut rng);
        let zq = random_embeddings(4, 6, &mut rng);
        let (_, dzp, dzq) = batch_loss_with_grad(&zp, &zq, &cfg).unwrap();
        let eps = 1e-6;
        for i in 0..4 {
            for d in 0..6 {
                for (z, dz, other, is_p) in
                    [(&zp, &dzp, &zq, true), (&zq, &dzq, &zp, false)]
                {
                    let mut plus = z.clone();
                    plus[[i, d]] += eps;
                    let mut minus = z.clone();
                    minus[[i, d]] -= eps;
                    let (fp, fm) = if is_p {
                        (
                            batch_loss(&plus, other, &cfg).unwrap(),
                            batch_loss(&minus, other, &cfg).unwrap(),
                        )
                    } else {
                        (
                            batch_loss(other, &plus, &cfg).unwrap(),
                            batch_loss(other, &minus, &cfg).unwrap(),
                        )
                    };
                    let num = (fp - fm) / (2.0 * eps);
                    let rel = (dz[[i, d]] - num).abs() / num.abs().max(1e-6);
                    assert!(rel < 1e-4, "loss fd mismatch: {} vs {num}", dz[[i, d]]);
                }
            }
        }
    }

    #[test]
    fn symmetrized_variant_averages_both_anchors() {
        let mut rng = ChaCha8Rng::seed_from_u64(26);
        let zp = random_embeddings(3, 5, &mut rng);
        let zq = random_embeddings(3, 5, &mut rng);
        let asym = LossConfig { temperature: 0.1, symmetrize: false };
        let sym = LossConfig { temperature: 0.1, symmetrize: true };
        let forward = batch_loss(&zp, &zq, &asym).unwrap();
        let reverse = batch_loss(&zq, &zp, &asym).unwrap();
        assert_abs_diff_eq!(
            batch_loss(&zp, &zq, &sym).unwrap(),
            0.5 * (forward + reverse),
            epsilon = 1e-12
        );
    }

    mod props {
        use super::*;
        use proptest::prelude::*;
        use rand::Rng;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(64))]
            #[test]
            fn positive_scaling_leaves_loss_unchanged(
                seed in 0u64..1000,
                scale in 0.01f64..100.0,
                row in 0usize..4,
            ) {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let zp = Array2::from_shape_fn((4, 6), |_| rng.gen_range(-1.0..1.0));
                let zq = Array2::from_shape_fn((4, 6), |_| rng.gen_range(-1.0..1.0));
                let cfg = LossConfig::default();
                let base = batch_loss(&zp, &zq, &cfg).unwrap();
                let mut scaled = zp.clone();
                for d in 0..6 {
                    scaled[[row, d]] *= scale;
                }
                let after = batch_loss(&scaled, &zq, &cfg).unwrap();
                prop_assert!((base - after).abs() < 1e-9);
            }
        }
    }
}
