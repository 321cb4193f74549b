//! Attentive proposal fusion.
//!
//! Each proposal embedding is refined by a convex blend with its neighbors:
//! `Φ(p_i) = α·p_i + (1−α)·Σ_{j≠i} w_ij·p_j`, where the weights come from a
//! row-wise softmax over pairwise similarities (self excluded). A lone
//! proposal has no neighbors and passes through unchanged, as does the whole
//! batch at `α = 1`.

use ndarray::{Array2, ArrayView2};

use crate::diffcore::{self, metric_sim, metric_sim_vjp, SimMetric, EPS_NORM};
use crate::error::{AgcmError, Result};

/// Settings for the fusion step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FusionConfig {
    /// Self weight of the blend; the useful range is `[0.5, 1.0]` — below
    /// that a proposal is dominated by its neighbors.
    pub alpha: f64,
    /// Similarity used to score neighbor pairs.
    pub metric: SimMetric,
    /// When set, the attention weights are treated as constants during
    /// backprop and gradients flow only through the blend itself.
    pub stop_attention_grad: bool,
}

impl Default for FusionConfig {
    fn default() -> Self {
        FusionConfig { alpha: 0.8, metric: SimMetric::Cosine, stop_attention_grad: false }
    }
}

impl FusionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.5..=1.0).contains(&self.alpha) {
            return Err(AgcmError::InvalidConfig(format!(
                "fusion alpha {} outside [0.5, 1.0]",
                self.alpha
            )));
        }
        Ok(())
    }
}

/// A batch of labeled proposal embeddings, validated on construction.
#[derive(Debug, Clone)]
pub struct ProposalBatch {
    /// `M × d`, one embedding per row; rows are finite and have norms
    /// bounded away from zero.
    pub embeddings: Array2<f64>,
    /// Class index per row, in `0..n_classes` (the background class is one
    /// of them).
    pub labels: Vec<usize>,
    pub n_classes: usize,
}

impl ProposalBatch {
    pub fn new(embeddings: Array2<f64>, labels: Vec<usize>, n_classes: usize) -> Result<Self> {
        if embeddings.nrows() == 0 {
            return Err(AgcmError::EmptyBatch);
        }
        if labels.len() != embeddings.nrows() {
            return Err(AgcmError::ShapeMismatch {
                what: "labels",
                expected: vec![embeddings.nrows()],
                got: vec![labels.len()],
            });
        }
        for (i, row) in embeddings.rows().into_iter().enumerate() {
            if row.iter().any(|x| !x.is_finite()) {
                return Err(AgcmError::NonFinite { what: format!("embedding row {i}") });
            }
            let n = row.iter().map(|x| x * x).sum::<f64>().sqrt();
            if !(n > EPS_NORM) {
                return Err(AgcmError::DegenerateNorm { row: Some(i) });
            }
        }
        for &label in &labels {
            if label >= n_classes {
                return Err(AgcmError::InvalidLabel { label, n_classes });
            }
        }
        Ok(ProposalBatch { embeddings, labels, n_classes })
    }

    pub fn len(&self) -> usize {
        self.embeddings.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.embeddings.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.embeddings.ncols()
    }
}

/// Row-stochastic neighbor weights with a zero diagonal. The single-row
/// case has no neighbors and its row is all zeros.
#[derive(Debug, Clone)]
pub struct AttentionMatrix {
    pub weights: Array2<f64>,
}

/// Softmax over pairwise similarities, self excluded, one row per proposal.
pub fn attention_weights(embeddings: ArrayView2<'_, f64>, metric: SimMetric) -> Result<AttentionMatrix> {
    let m = embeddings.nrows();
    if m == 0 {
        return Err(AgcmError::EmptyBatch);
    }
    let mut weights = Array2::zeros((m, m));
    if m == 1 {
        return Ok(AttentionMatrix { weights });
    }
    let mut scores = Vec::with_capacity(m - 1);
    for i in 0..m {
        scores.clear();
        for j in 0..m {
            if j != i {
                let s = metric_sim(metric, embeddings.row(i), embeddings.row(j))
                    .map_err(|e| e.with_row(i))?;
                scores.push(s);
            }
        }
        let soft = diffcore::softmax(ndarray::ArrayView1::from(&scores[..]));
        let mut k = 0;
        for j in 0..m {
            if j != i {
                weights[[i, j]] = soft[k];
                k += 1;
            }
        }
    }
    Ok(AttentionMatrix { weights })
}

/// Blends each row with its attention-weighted neighbors. `α = 1` and the
/// single-row case return the input bit for bit.
pub fn fuse(embeddings: ArrayView2<'_, f64>, cfg: &FusionConfig) -> Result<Array2<f64>> {
    cfg.validate()?;
    let m = embeddings.nrows();
    if m == 0 {
        return Err(AgcmError::EmptyBatch);
    }
    if cfg.alpha == 1.0 || m == 1 {
        return Ok(embeddings.to_owned());
    }
    let att = attention_weights(embeddings, cfg.metric)?;
    let neighbor = att.weights.dot(&embeddings);
    Ok(embeddings.mapv(|x| cfg.alpha * x) + neighbor.mapv(|x| (1.0 - cfg.alpha) * x))
}

/// Pullback of [`fuse`] onto the embeddings. With the attention weights
/// held fixed this is `α·U + (1−α)·Wᵀ·U`; the full mode adds the path
/// through the weights themselves (softmax rows, then the pairwise
/// similarities).
pub fn fuse_vjp(
    embeddings: ArrayView2<'_, f64>,
    cotangent: ArrayView2<'_, f64>,
    cfg: &FusionConfig,
) -> Result<Array2<f64>> {
    cfg.validate()?;
    let m = embeddings.nrows();
    if m == 0 {
        return Err(AgcmError::EmptyBatch);
    }
    if cotangent.shape() != embeddings.shape() {
        return Err(AgcmError::ShapeMismatch {
            what: "fuse cotangent",
            expected: embeddings.shape().to_vec(),
            got: cotangent.shape().to_vec(),
        });
    }
    if cfg.alpha == 1.0 || m == 1 {
        return Ok(cotangent.to_owned());
    }
    let att = attention_weights(embeddings, cfg.metric)?;
    let mut bar = cotangent.mapv(|x| cfg.alpha * x)
        + att.weights.t().dot(&cotangent).mapv(|x| (1.0 - cfg.alpha) * x);
    if cfg.stop_attention_grad {
        return Ok(bar);
    }
    // Path through the weights: w̄_ij = (1−α)·u_i·p_j, pulled back through
    // each softmax row (diagonal stays out of the sum) and then through the
    // similarity that produced the score.
    let mut wbar = vec![0.0f64; m];
    for i in 0..m {
        let u_i = cotangent.row(i);
        let mut dot = 0.0;
        for j in 0..m {
            if j != i {
                let v = (1.0 - cfg.alpha) * u_i.dot(&embeddings.row(j));
                wbar[j] = v;
                dot += att.weights[[i, j]] * v;
            }
        }
        for j in 0..m {
            if j == i {
                continue;
            }
            let sbar = att.weights[[i, j]] * (wbar[j] - dot);
            if sbar == 0.0 {
                continue;
            }
            let (da, db) = metric_sim_vjp(cfg.metric, embeddings.row(i), embeddings.row(j), sbar)?;
            let mut row_i = bar.row_mut(i);
            row_i += &da;
            let mut row_j = bar.row_mut(j);
            row_j += &db;
        }
    }
    Ok(bar)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::{grad_check, FD_EPS};
    use ndarray::array;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn random_embeddings(rng: &mut ChaCha8Rng, m: usize, d: usize) -> Array2<f64> {
        loop {
            let e = Array2::from_shape_fn((m, d), |_| rng.sample::<f64, _>(StandardNormal));
            let ok = e.rows().into_iter().all(|r| r.dot(&r).sqrt() > 0.3);
            if ok {
                return e;
            }
        }
    }

    #[test]
    fn batch_validation() {
        let e = array![[1.0, 0.0], [0.0, 1.0]];
        assert!(ProposalBatch::new(e.clone(), vec![0, 1], 2).is_ok());
        assert!(matches!(
            ProposalBatch::new(Array2::zeros((0, 2)), vec![], 2),
            Err(AgcmError::EmptyBatch)
        ));
        assert!(matches!(
            ProposalBatch::new(e.clone(), vec![0], 2),
            Err(AgcmError::ShapeMismatch { .. })
        ));
        assert!(matches!(
            ProposalBatch::new(e.clone(), vec![0, 2], 2),
            Err(AgcmError::InvalidLabel { .. })
        ));
        assert!(matches!(
            ProposalBatch::new(array![[1.0, 0.0], [f64::NAN, 1.0]], vec![0, 1], 2),
            Err(AgcmError::NonFinite { .. })
        ));
        assert!(matches!(
            ProposalBatch::new(array![[1.0, 0.0], [0.0, 0.0]], vec![0, 1], 2),
            Err(AgcmError::DegenerateNorm { row: Some(1) })
        ));
    }

    #[test]
    fn attention_rows_are_stochastic_with_zero_diagonal() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for metric in SimMetric::ALL {
            for _ in 0..25 {
                let m = rng.random_range(2..=9);
                let d = rng.random_range(2..=8);
                let e = random_embeddings(&mut rng, m, d);
                let att = attention_weights(e.view(), metric).unwrap();
                for i in 0..m {
                    assert_eq!(att.weights[[i, i]], 0.0);
                    let sum: f64 = att.weights.row(i).sum();
                    assert!((sum - 1.0).abs() < 1e-12, "{metric}: row sum {sum}");
                    for j in 0..m {
                        if j != i {
                            assert!(att.weights[[i, j]] > 0.0);
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn attention_oracle_three_proposals() {
        // cos(p0,p1)=1 and cos(p0,p2)=0, so row 0 is softmax([1,0]).
        let e = array![[1.0, 0.0], [2.0, 0.0], [0.0, 5.0]];
        let att = attention_weights(e.view(), SimMetric::Cosine).unwrap();
        assert!((att.weights[[0, 1]] - 0.7310585786300049).abs() < 1e-15);
        assert!((att.weights[[0, 2]] - 0.2689414213699951).abs() < 1e-15);
    }

    #[test]
    fn single_proposal_passes_through() {
        let e = array![[0.3, -0.4, 1.1]];
        let att = attention_weights(e.view(), SimMetric::Cosine).unwrap();
        assert_eq!(att.weights, Array2::zeros((1, 1)));
        let cfg = FusionConfig { alpha: 0.8, ..Default::default() };
        assert_eq!(fuse(e.view(), &cfg).unwrap(), e);
        let u = array![[1.0, 2.0, 3.0]];
        assert_eq!(fuse_vjp(e.view(), u.view(), &cfg).unwrap(), u);
    }

    #[test]
    fn alpha_one_is_bitwise_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let e = random_embeddings(&mut rng, 6, 5);
        let cfg = FusionConfig { alpha: 1.0, ..Default::default() };
        assert_eq!(fuse(e.view(), &cfg).unwrap(), e);
        let u = random_embeddings(&mut rng, 6, 5);
        assert_eq!(fuse_vjp(e.view(), u.view(), &cfg).unwrap(), u);
    }

    #[test]
    fn two_proposals_blend_exactly() {
        // With two rows each softmax is over one score, so w = 1 and
        // Φ(p_0) = α·p_0 + (1−α)·p_1.
        let e = array![[1.0, 0.0], [0.0, 2.0]];
        let cfg = FusionConfig { alpha: 0.7, ..Default::default() };
        let f = fuse(e.view(), &cfg).unwrap();
        assert!((f[[0, 0]] - 0.7).abs() < 1e-15);
        assert!((f[[0, 1]] - 0.3 * 2.0).abs() < 1e-15);
        assert!((f[[1, 0]] - 0.3).abs() < 1e-15);
        assert!((f[[1, 1]] - 1.4).abs() < 1e-15);
    }

    #[test]
    fn fusion_is_permutation_equivariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let cfg = FusionConfig { alpha: 0.8, ..Default::default() };
        for _ in 0..20 {
            let m = rng.random_range(2..=7);
            let d = 4;
            let e = random_embeddings(&mut rng, m, d);
            let mut perm: Vec<usize> = (0..m).collect();
            for i in (1..m).rev() {
                let j = rng.random_range(0..=i);
                perm.swap(i, j);
            }
            let permuted = Array2::from_shape_fn((m, d), |(i, j)| e[[perm[i], j]]);
            let f = fuse(e.view(), &cfg).unwrap();
            let fp = fuse(permuted.view(), &cfg).unwrap();
            for i in 0..m {
                for j in 0..d {
                    assert!((fp[[i, j]] - f[[perm[i], j]]).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn invalid_alpha_rejected() {
        let e = array![[1.0, 0.0], [0.0, 1.0]];
        for alpha in [0.49, 1.01, -0.2, f64::NAN] {
            let cfg = FusionConfig { alpha, ..Default::default() };
            assert!(matches!(fuse(e.view(), &cfg), Err(AgcmError::InvalidConfig(_))));
        }
    }

    #[test]
    fn fuse_vjp_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(24);
        for metric in SimMetric::ALL {
            for stop in [false, true] {
                for _ in 0..12 {
                    let m = rng.random_range(2..=5);
                    let d = rng.random_range(2..=5);
                    let e = random_embeddings(&mut rng, m, d);
                    let u = Array2::from_shape_fn((m, d), |_| rng.sample::<f64, _>(StandardNormal));
                    let alpha = rng.random_range(0.5..0.99);
                    let cfg = FusionConfig { alpha, metric, stop_attention_grad: stop };
                    // stop-grad mode differentiates a different (frozen-W)
                    // function, so FD must freeze W the same way.
                    let frozen = attention_weights(e.view(), metric).unwrap();
                    let flat: Vec<f64> = e.iter().cloned().collect();
                    let scalar = |x: &[f64]| -> f64 {
                        let p = Array2::from_shape_vec((m, d), x.to_vec()).unwrap();
                        let f = if stop {
                            let neighbor = frozen.weights.dot(&p);
                            p.mapv(|v| alpha * v) + neighbor.mapv(|v| (1.0 - alpha) * v)
                        } else {
                            fuse(p.view(), &cfg).unwrap()
                        };
                        f.iter().zip(u.iter()).map(|(a, b)| a * b).sum()
                    };
                    let analytic = fuse_vjp(e.view(), u.view(), &cfg).unwrap();
                    let analytic_flat: Vec<f64> = analytic.iter().cloned().collect();
                    let report = grad_check(scalar, &flat, &analytic_flat, FD_EPS, 1e-4);
                    assert!(
                        report.pass,
                        "{metric} stop={stop}: max rel err {} at {}",
                        report.max_rel_error, report.worst_index
                    );
                }
            }
        }
    }

    #[test]
    fn stop_grad_changes_the_pullback() {
        let mut rng = ChaCha8Rng::seed_from_u64(25);
        let e = random_embeddings(&mut rng, 5, 4);
        let u = Array2::from_shape_fn((5, 4), |_| rng.sample::<f64, _>(StandardNormal));
        let full = fuse_vjp(
            e.view(),
            u.view(),
            &FusionConfig { alpha: 0.8, metric: SimMetric::Cosine, stop_attention_grad: false },
        )
        .unwrap();
        let stopped = fuse_vjp(
            e.view(),
            u.view(),
            &FusionConfig { alpha: 0.8, metric: SimMetric::Cosine, stop_attention_grad: true },
        )
        .unwrap();
        let diff: f64 = (&full - &stopped).iter().map(|x| x.abs()).sum();
        assert!(diff > 1e-8);
    }

    #[test]
    fn fused_rows_stay_finite_and_nonzero_for_unit_inputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(26);
        let cfg = FusionConfig::default();
        for _ in 0..20 {
            let m = rng.random_range(2..=8);
            let d = rng.random_range(2..=6);
            let mut e = random_embeddings(&mut rng, m, d);
            for mut row in e.rows_mut() {
                let n = row.dot(&row).sqrt();
                row.mapv_inplace(|x| x / n);
            }
            let f = fuse(e.view(), &cfg).unwrap();
            for row in f.rows() {
                assert!(row.iter().all(|x| x.is_finite()));
                let n: f64 = row.dot(&row).sqrt();
                // α ≥ 0.5 keeps the self term dominant enough to avoid
                // cancellation to zero for unit inputs.
                assert!(n > 1e-6);
            }
        }
    }
}
