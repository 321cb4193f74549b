//! Evaluation metrics: confusion counts, class-subset accuracy, the
//! forgetting drop between protocol stages, and embedding cluster spread.

use ndarray::{Array2, ArrayView2};

use crate::error::{AgcmError, Result};
use crate::head::ClassifierHead;
use crate::synthdata::Dataset;

/// Prediction counts with true labels along rows and predictions along
/// columns, both in weight-row order (background last).
#[derive(Debug, Clone)]
pub struct ConfusionMatrix {
    pub counts: Array2<u64>,
    pub n_real_classes: usize,
}

impl ConfusionMatrix {
    pub fn from_predictions(truth: &[usize], predicted: &[usize], n_groups: usize) -> Result<Self> {
        if truth.len() != predicted.len() {
            return Err(AgcmError::ShapeMismatch {
                what: "predictions",
                expected: vec![truth.len()],
                got: vec![predicted.len()],
            });
        }
        let mut counts = Array2::zeros((n_groups, n_groups));
        for (&t, &p) in truth.iter().zip(predicted.iter()) {
            if t >= n_groups {
                return Err(AgcmError::InvalidLabel { label: t, n_classes: n_groups });
            }
            if p >= n_groups {
                return Err(AgcmError::InvalidLabel { label: p, n_classes: n_groups });
            }
            counts[[t, p]] += 1;
        }
        Ok(ConfusionMatrix { counts, n_real_classes: n_groups - 1 })
    }

    pub fn n_groups(&self) -> usize {
        self.counts.nrows()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    fn trace(&self) -> u64 {
        (0..self.n_groups()).map(|i| self.counts[[i, i]]).sum()
    }

    /// Fraction of all samples predicted correctly, background included.
    pub fn accuracy(&self) -> Result<f64> {
        let total = self.total();
        if total == 0 {
            return Err(AgcmError::EmptyMatrix);
        }
        Ok(self.trace() as f64 / total as f64)
    }

    /// Accuracy restricted to samples whose true class is listed.
    pub fn accuracy_over(&self, classes: &[usize]) -> Result<f64> {
        let mut hit = 0u64;
        let mut total = 0u64;
        for &c in classes {
            if c >= self.n_groups() {
                return Err(AgcmError::InvalidLabel { label: c, n_classes: self.n_groups() });
            }
            hit += self.counts[[c, c]];
            total += self.counts.row(c).sum();
        }
        if total == 0 {
            return Err(AgcmError::EmptyMatrix);
        }
        Ok(hit as f64 / total as f64)
    }

    /// Share of all predictions that land off the diagonal, as a
    /// percentage of the whole matrix.
    pub fn confusion_percentage(&self) -> Result<f64> {
        let total = self.total();
        if total == 0 {
            return Err(AgcmError::EmptyMatrix);
        }
        Ok(100.0 * (total - self.trace()) as f64 / total as f64)
    }

    fn group_name(&self, g: usize) -> String {
        if g < self.n_real_classes {
            format!("class_{g}")
        } else {
            "background".to_string()
        }
    }

    /// CSV with named row and column headers; `parse_csv` inverts it.
    pub fn to_csv(&self) -> String {
        let n = self.n_groups();
        let mut out = String::from("true");
        for g in 0..n {
            out.push(',');
            out.push_str(&self.group_name(g));
        }
        out.push('\n');
        for t in 0..n {
            out.push_str(&self.group_name(t));
            for p in 0..n {
                out.push_str(&format!(",{}", self.counts[[t, p]]));
            }
            out.push('\n');
        }
        out
    }

    /// Parses `to_csv` output; `origin` only labels errors.
    pub fn parse_csv(text: &str, origin: &std::path::Path) -> Result<Self> {
        let fail = |line: usize, msg: &str| Err(AgcmError::parse(origin, line, msg));
        let mut lines = text.lines().enumerate();
        let Some((_, header)) = lines.next() else {
            return fail(1, "empty confusion CSV");
        };
        let names: Vec<&str> = header.split(',').collect();
        if names.first() != Some(&"true") || names.len() < 2 {
            return fail(1, "header must start with 'true' and name each group");
        }
        let n = names.len() - 1;
        let n_real_classes = if names[n] == "background" { n - 1 } else { n };
        for (g, &name) in names[1..].iter().enumerate() {
            let expected = if g < n_real_classes {
                format!("class_{g}")
            } else {
                "background".to_string()
            };
            if name != expected {
                return fail(1, &format!("expected column '{expected}', found '{name}'"));
            }
        }
        let mut counts = Array2::zeros((n, n));
        let mut filled = 0;
        for (idx, line) in lines {
            let line_no = idx + 1;
            if line.is_empty() {
                continue;
            }
            if filled >= n {
                return fail(line_no, "more rows than header groups");
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != n + 1 {
                return fail(line_no, &format!("expected {} fields", n + 1));
            }
            let expected = if filled < n_real_classes {
                format!("class_{filled}")
            } else {
                "background".to_string()
            };
            if fields[0] != expected {
                return fail(line_no, &format!("expected row '{expected}', found '{}'", fields[0]));
            }
            for (p, field) in fields[1..].iter().enumerate() {
                match field.parse::<u64>() {
                    Ok(v) => counts[[filled, p]] = v,
                    Err(_) => return fail(line_no, &format!("bad count '{field}'")),
                }
            }
            filled += 1;
        }
        if filled != n {
            return fail(filled + 1, &format!("expected {n} rows, found {filled}"));
        }
        Ok(ConfusionMatrix { counts, n_real_classes })
    }
}

fn check_head_matches(head: &ClassifierHead, dataset: &Dataset) -> Result<()> {
    if head.n_real_classes() != dataset.n_real_classes {
        return Err(AgcmError::DimensionMismatch {
            expected: head.n_real_classes(),
            got: dataset.n_real_classes,
        });
    }
    Ok(())
}

/// Confusion of plain (fusion-free) predictions over a dataset whose
/// classes match the head's.
pub fn confusion(head: &ClassifierHead, dataset: &Dataset) -> Result<ConfusionMatrix> {
    check_head_matches(head, dataset)?;
    let preds = head.predict(dataset.features.view())?;
    let predicted: Vec<usize> = preds.iter().map(|p| p.class_index).collect();
    ConfusionMatrix::from_predictions(&dataset.label_indices(), &predicted, head.n_classes())
}

/// Confusion with fusion kept in the prediction path. Fusion couples the
/// rows of a batch, so the dataset is scanned in fixed chunks of
/// `batch_size` that define each sample's neighborhood.
pub fn confusion_fused(
    head: &ClassifierHead,
    dataset: &Dataset,
    batch_size: usize,
) -> Result<ConfusionMatrix> {
    if batch_size == 0 {
        return Err(AgcmError::InvalidConfig("fused evaluation needs a positive batch size".into()));
    }
    check_head_matches(head, dataset)?;
    let truth = dataset.label_indices();
    let mut predicted = Vec::with_capacity(dataset.len());
    let mut start = 0;
    while start < dataset.len() {
        let end = (start + batch_size).min(dataset.len());
        let chunk = dataset.features.slice(ndarray::s![start..end, ..]);
        for p in head.predict_fused(chunk)? {
            predicted.push(p.class_index);
        }
        start = end;
    }
    ConfusionMatrix::from_predictions(&truth, &predicted, head.n_classes())
}

/// Accuracy over samples whose true class is in `classes`, predicted
/// without fusion. Works for any head that covers those class indices, so
/// a base head can be scored on base rows of a wider dataset.
pub fn accuracy_on_classes(head: &ClassifierHead, dataset: &Dataset, classes: &[usize]) -> Result<f64> {
    for &c in classes {
        if c >= head.n_real_classes() {
            return Err(AgcmError::InvalidLabel { label: c, n_classes: head.n_real_classes() });
        }
    }
    let keep: Vec<usize> = dataset
        .labels
        .iter()
        .enumerate()
        .filter_map(|(i, l)| match l {
            crate::synthdata::Label::Class(c) if classes.contains(c) => Some(i),
            _ => None,
        })
        .collect();
    if keep.is_empty() {
        return Err(AgcmError::EmptyMatrix);
    }
    let x = Array2::from_shape_fn((keep.len(), dataset.dim()), |(r, c)| {
        dataset.features[[keep[r], c]]
    });
    let preds = head.predict(x.view())?;
    let hits = keep
        .iter()
        .zip(preds.iter())
        .filter(|(&i, p)| match dataset.labels[i] {
            crate::synthdata::Label::Class(c) => p.class_index == c,
            crate::synthdata::Label::Background => false,
        })
        .count();
    Ok(hits as f64 / keep.len() as f64)
}

/// How much base-class accuracy was lost across adaptation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ForgettingReport {
    pub base_acc_before: f64,
    pub base_acc_after: f64,
    /// `100·(before − after)/before`; negative means adaptation helped.
    pub drop_percent: f64,
}

/// Relative base-accuracy drop, in percent of the pre-adaptation value.
/// Both accuracies must share a scale (fractions or percentages).
pub fn forgetting(base_acc_before: f64, base_acc_after: f64) -> Result<ForgettingReport> {
    if !(base_acc_before > 0.0) || !base_acc_after.is_finite() {
        return Err(AgcmError::InvalidConfig(format!(
            "forgetting needs a positive pre-adaptation accuracy, got {base_acc_before}"
        )));
    }
    Ok(ForgettingReport {
        base_acc_before,
        base_acc_after,
        drop_percent: 100.0 * (base_acc_before - base_acc_after) / base_acc_before,
    })
}

/// Spread of labeled embeddings: mean pairwise distance within groups,
/// mean pairwise distance across groups, and their ratio.
#[derive(Debug, Clone)]
pub struct ClusterStats {
    pub intra_mean: f64,
    pub inter_mean: f64,
    /// `inter_mean / intra_mean`; higher is better separated.
    pub separation: f64,
    pub group_sizes: Vec<usize>,
}

/// Euclidean spread statistics over label groups. Needs at least two
/// non-empty groups and at least one group with two members.
pub fn cluster_stats(features: ArrayView2<'_, f64>, labels: &[usize]) -> Result<ClusterStats> {
    if labels.len() != features.nrows() {
        return Err(AgcmError::ShapeMismatch {
            what: "cluster labels",
            expected: vec![features.nrows()],
            got: vec![labels.len()],
        });
    }
    let n_groups = match labels.iter().max() {
        Some(&m) => m + 1,
        None => return Err(AgcmError::EmptyBatch),
    };
    let mut sizes = vec![0usize; n_groups];
    for &l in labels {
        sizes[l] += 1;
    }
    if sizes.iter().filter(|&&s| s > 0).count() < 2 {
        return Err(AgcmError::EmptyClass);
    }
    let mut intra_sum = 0.0;
    let mut intra_n = 0u64;
    let mut inter_sum = 0.0;
    let mut inter_n = 0u64;
    for i in 0..labels.len() {
        for j in i + 1..labels.len() {
            let diff = &features.row(i) - &features.row(j);
            let d = diff.dot(&diff).sqrt();
            if labels[i] == labels[j] {
                intra_sum += d;
                intra_n += 1;
            } else {
                inter_sum += d;
                inter_n += 1;
            }
        }
    }
    if intra_n == 0 {
        return Err(AgcmError::EmptyClass);
    }
    let intra_mean = intra_sum / intra_n as f64;
    let inter_mean = inter_sum / inter_n as f64;
    Ok(ClusterStats {
        intra_mean,
        inter_mean,
        separation: inter_mean / intra_mean,
        group_sizes: sizes,
    })
}
