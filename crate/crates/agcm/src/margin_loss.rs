//! Cosine-margin cross-entropy.
//!
//! Logits are scaled cosines between feature rows and class weight rows,
//! `β·cos(z_i, W_j)`, with a fixed margin `m` subtracted from the cosine at
//! the true class only — and never when the true class is the background:
//! background proposals are heterogeneous, and squeezing them toward one
//! prototype hurts. The loss is the mean negative log-softmax of the
//! margined true-class logit.

use ndarray::{Array1, Array2, ArrayView2, Axis};

use crate::diffcore::{logsumexp, softmax, EPS_NORM};
use crate::error::{AgcmError, Result};

/// Settings for the margin objective.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MarginLossConfig {
    /// Cosine margin in `[-1, 1]`; subtracted from the true-class cosine of
    /// foreground samples before scaling.
    pub margin: f64,
    /// Inverse temperature applied to cosines; must be positive.
    pub beta: f64,
    /// Class index exempt from the margin.
    pub background_index: usize,
}

impl MarginLossConfig {
    /// Default margin and scale with the given background class.
    pub fn with_background(background_index: usize) -> Self {
        MarginLossConfig { margin: 0.2, beta: 20.0, background_index }
    }

    pub fn validate(&self, n_classes: usize) -> Result<()> {
        if !self.margin.is_finite() || !(-1.0..=1.0).contains(&self.margin) {
            return Err(AgcmError::InvalidConfig(format!(
                "margin {} outside [-1, 1]",
                self.margin
            )));
        }
        if !self.beta.is_finite() || self.beta <= 0.0 {
            return Err(AgcmError::InvalidConfig(format!("beta {} not positive", self.beta)));
        }
        if self.background_index >= n_classes {
            return Err(AgcmError::InvalidConfig(format!(
                "background index {} outside 0..{n_classes}",
                self.background_index
            )));
        }
        Ok(())
    }
}

/// Cosines between every feature row and every class weight row, clamped to
/// `[-1, 1]`; samples along rows, classes along columns.
#[derive(Debug, Clone)]
pub struct CosineTable {
    pub cosines: Array2<f64>,
}

fn row_norms(m: ArrayView2<'_, f64>) -> Result<Array1<f64>> {
    let mut norms = Array1::zeros(m.nrows());
    for (i, row) in m.rows().into_iter().enumerate() {
        let n = row.dot(&row).sqrt();
        if !(n > EPS_NORM) {
            return Err(AgcmError::DegenerateNorm { row: Some(i) });
        }
        norms[i] = n;
    }
    Ok(norms)
}

/// Cosine of each (feature, class-weight) pair.
pub fn class_cosines(features: ArrayView2<'_, f64>, weights: ArrayView2<'_, f64>) -> Result<CosineTable> {
    if features.nrows() == 0 {
        return Err(AgcmError::EmptyBatch);
    }
    if features.ncols() != weights.ncols() {
        return Err(AgcmError::DimensionMismatch {
            expected: features.ncols(),
            got: weights.ncols(),
        });
    }
    let nz = row_norms(features)?;
    let nw = row_norms(weights)?;
    let mut cos = features.dot(&weights.t());
    for ((i, j), v) in cos.indexed_iter_mut() {
        *v = (*v / (nz[i] * nw[j])).clamp(-1.0, 1.0);
    }
    Ok(CosineTable { cosines: cos })
}

fn check_labels(labels: &[usize], n_rows: usize, n_classes: usize) -> Result<()> {
    if labels.len() != n_rows {
        return Err(AgcmError::ShapeMismatch {
            what: "labels",
            expected: vec![n_rows],
            got: vec![labels.len()],
        });
    }
    for &y in labels {
        if y >= n_classes {
            return Err(AgcmError::InvalidLabel { label: y, n_classes });
        }
    }
    Ok(())
}

/// Scaled logits with the margin applied at `(i, y_i)` for foreground rows:
/// `β·(cos_ij − m·[j = y_i ∧ y_i ≠ background])`.
pub fn margin_logits(table: &CosineTable, labels: &[usize], cfg: &MarginLossConfig) -> Result<Array2<f64>> {
    let n_classes = table.cosines.ncols();
    cfg.validate(n_classes)?;
    check_labels(labels, table.cosines.nrows(), n_classes)?;
    let mut logits = table.cosines.clone();
    for (i, &y) in labels.iter().enumerate() {
        if y != cfg.background_index {
            logits[[i, y]] -= cfg.margin;
        }
    }
    logits.mapv_inplace(|x| cfg.beta * x);
    Ok(logits)
}

/// Per-sample log-probabilities of the true class under the margined
/// logits; the loss is the negated mean of these.
pub fn loss_terms(table: &CosineTable, labels: &[usize], cfg: &MarginLossConfig) -> Result<Vec<f64>> {
    let logits = margin_logits(table, labels, cfg)?;
    Ok(labels
        .iter()
        .enumerate()
        .map(|(i, &y)| {
            let row = logits.index_axis(Axis(0), i);
            logits[[i, y]] - logsumexp(row)
        })
        .collect())
}

/// Mean negative log-softmax of the true class.
pub fn loss_forward(table: &CosineTable, labels: &[usize], cfg: &MarginLossConfig) -> Result<f64> {
    let terms = loss_terms(table, labels, cfg)?;
    Ok(-terms.iter().sum::<f64>() / terms.len() as f64)
}

/// Loss plus its pullback onto features and class weights.
///
/// With row-softmax probabilities `p` of the margined logits, the logit
/// cotangent is `(p − onehot)/M`; scaling by `β` gives the cosine
/// cotangent, which splits over the two unit vectors of each pair.
pub fn loss_vjp(
    features: ArrayView2<'_, f64>,
    weights: ArrayView2<'_, f64>,
    labels: &[usize],
    cfg: &MarginLossConfig,
) -> Result<(f64, Array2<f64>, Array2<f64>)> {
    let table = class_cosines(features, weights)?;
    let logits = margin_logits(&table, labels, cfg)?;
    let m = features.nrows();
    let n_classes = weights.nrows();

    let nz = row_norms(features)?;
    let nw = row_norms(weights)?;
    let zn = {
        let mut zn = features.to_owned();
        for (i, mut row) in zn.rows_mut().into_iter().enumerate() {
            row.mapv_inplace(|x| x / nz[i]);
        }
        zn
    };
    let wn = {
        let mut wn = weights.to_owned();
        for (j, mut row) in wn.rows_mut().into_iter().enumerate() {
            row.mapv_inplace(|x| x / nw[j]);
        }
        wn
    };

    let mut loss = 0.0;
    let mut cbar = Array2::zeros((m, n_classes));
    for (i, &y) in labels.iter().enumerate() {
        let row = logits.index_axis(Axis(0), i);
        loss -= logits[[i, y]] - logsumexp(row);
        let p = softmax(row);
        for j in 0..n_classes {
            let indicator = if j == y { 1.0 } else { 0.0 };
            cbar[[i, j]] = cfg.beta * (p[j] - indicator) / m as f64;
        }
    }
    loss /= m as f64;

    // z̄_i = Σ_j c̄_ij (Ŵ_j − cos_ij ẑ_i) / ‖z_i‖, and symmetrically for W̄.
    let q = (&cbar * &table.cosines).sum_axis(Axis(1));
    let mut zbar = cbar.dot(&wn);
    for (i, mut row) in zbar.rows_mut().into_iter().enumerate() {
        let qi = q[i];
        for (v, z) in row.iter_mut().zip(zn.row(i).iter()) {
            *v = (*v - qi * z) / nz[i];
        }
    }
    let r = (&cbar * &table.cosines).sum_axis(Axis(0));
    let mut wbar = cbar.t().dot(&zn);
    for (j, mut row) in wbar.rows_mut().into_iter().enumerate() {
        let rj = r[j];
        for (v, w) in row.iter_mut().zip(wn.row(j).iter()) {
            *v = (*v - rj * w) / nw[j];
        }
    }
    Ok((loss, zbar, wbar))
}
