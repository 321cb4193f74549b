//! Differentiable numerical primitives.
//!
//! Forward evaluations and vector-Jacobian products for the fixed pipeline
//! the classification head differentiates: vector normalization, the three
//! similarity metrics, softmax, and log-sum-exp. A finite-difference
//! gradient checker backs the test suites of every module downstream.
//!
//! Everything here is a pure function of its inputs; values are plain
//! `ndarray` arrays and can move freely between threads.

use ndarray::{Array1, ArrayView1};

use crate::error::{AgcmError, Result};

/// Norms at or below this are treated as degenerate and rejected: a zero
/// embedding indicates an upstream bug, not a value to perturb.
pub const EPS_NORM: f64 = 1e-12;

/// Default step for central finite differences.
pub const FD_EPS: f64 = 1e-5;

// ---------------------------------------------------------------------------
// forward evaluations
// ---------------------------------------------------------------------------

fn norm(v: ArrayView1<'_, f64>) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn checked_norm(v: ArrayView1<'_, f64>) -> Result<f64> {
    let n = norm(v);
    // Written so a NaN norm also lands in the error arm.
    if n > EPS_NORM {
        Ok(n)
    } else {
        Err(AgcmError::DegenerateNorm { row: None })
    }
}

fn check_dims(a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>) -> Result<()> {
    if a.len() != b.len() {
        return Err(AgcmError::DimensionMismatch { expected: a.len(), got: b.len() });
    }
    Ok(())
}

/// Projects `v` onto the unit sphere.
pub fn normalize(v: ArrayView1<'_, f64>) -> Result<Array1<f64>> {
    let n = checked_norm(v)?;
    Ok(v.mapv(|x| x / n))
}

/// Cosine similarity, clamped to `[-1, 1]` to absorb rounding; downstream
/// margin arithmetic assumes the closed interval.
pub fn cosine_sim(a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>) -> Result<f64> {
    check_dims(a, b)?;
    let na = checked_norm(a)?;
    let nb = checked_norm(b)?;
    Ok((a.dot(&b) / (na * nb)).clamp(-1.0, 1.0))
}

fn centered(v: ArrayView1<'_, f64>) -> Array1<f64> {
    let mean = v.sum() / v.len() as f64;
    v.mapv(|x| x - mean)
}

/// Pearson correlation of the coordinate sequences; equal to the cosine
/// similarity of the mean-centered inputs.
pub fn pearson_sim(a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>) -> Result<f64> {
    check_dims(a, b)?;
    let ca = centered(a);
    let cb = centered(b);
    if !(norm(ca.view()) > EPS_NORM) {
        return Err(AgcmError::DegenerateVariance { row: None });
    }
    if !(norm(cb.view()) > EPS_NORM) {
        return Err(AgcmError::DegenerateVariance { row: None });
    }
    cosine_sim(ca.view(), cb.view())
}

/// Negative Euclidean distance, so that "more similar" still means "larger".
pub fn neg_euclidean_sim(a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>) -> Result<f64> {
    check_dims(a, b)?;
    let d: f64 = a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    Ok(-d)
}

/// Max-shifted softmax; entries are positive and sum to one.
pub fn softmax(scores: ArrayView1<'_, f64>) -> Array1<f64> {
    debug_assert!(!scores.is_empty());
    if scores.is_empty() {
        return Array1::zeros(0);
    }
    let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut out = scores.mapv(|x| (x - max).exp());
    let total = out.sum();
    out.mapv_inplace(|x| x / total);
    out
}

/// Max-shifted log-sum-exp.
pub fn logsumexp(scores: ArrayView1<'_, f64>) -> f64 {
    debug_assert!(!scores.is_empty());
    let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    max + scores.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

// ---------------------------------------------------------------------------
// vector-Jacobian products
// ---------------------------------------------------------------------------

/// Pullback of [`normalize`]: with `y = v/‖v‖`, returns `(u − y⟨y,u⟩)/‖v‖`.
pub fn normalize_vjp(v: ArrayView1<'_, f64>, cotangent: ArrayView1<'_, f64>) -> Result<Array1<f64>> {
    check_dims(v, cotangent)?;
    let n = checked_norm(v)?;
    let y = v.mapv(|x| x / n);
    let proj = y.dot(&cotangent);
    Ok(Array1::from_iter(
        cotangent.iter().zip(y.iter()).map(|(u, yi)| (u - yi * proj) / n),
    ))
}

/// Pullback of [`cosine_sim`] onto both inputs.
pub fn cosine_sim_vjp(
    a: ArrayView1<'_, f64>,
    b: ArrayView1<'_, f64>,
    cotangent: f64,
) -> Result<(Array1<f64>, Array1<f64>)> {
    check_dims(a, b)?;
    let na = checked_norm(a)?;
    let nb = checked_norm(b)?;
    let c = (a.dot(&b) / (na * nb)).clamp(-1.0, 1.0);
    let da = Array1::from_iter(
        a.iter()
            .zip(b.iter())
            .map(|(ai, bi)| cotangent * (bi / (na * nb) - c * ai / (na * na))),
    );
    let db = Array1::from_iter(
        a.iter()
            .zip(b.iter())
            .map(|(ai, bi)| cotangent * (ai / (na * nb) - c * bi / (nb * nb))),
    );
    Ok((da, db))
}

/// Pullback of [`pearson_sim`]: the cosine pullback of the centered inputs,
/// re-centered (the centering map is its own transpose).
pub fn pearson_sim_vjp(
    a: ArrayView1<'_, f64>,
    b: ArrayView1<'_, f64>,
    cotangent: f64,
) -> Result<(Array1<f64>, Array1<f64>)> {
    check_dims(a, b)?;
    let ca = centered(a);
    let cb = centered(b);
    if !(norm(ca.view()) > EPS_NORM) || !(norm(cb.view()) > EPS_NORM) {
        return Err(AgcmError::DegenerateVariance { row: None });
    }
    let (da, db) = cosine_sim_vjp(ca.view(), cb.view(), cotangent)?;
    Ok((centered(da.view()), centered(db.view())))
}

/// Pullback of [`neg_euclidean_sim`]. At coincident inputs the map has a
/// kink; the zero subgradient is used there.
pub fn neg_euclidean_sim_vjp(
    a: ArrayView1<'_, f64>,
    b: ArrayView1<'_, f64>,
    cotangent: f64,
) -> Result<(Array1<f64>, Array1<f64>)> {
    check_dims(a, b)?;
    let diff = &a.to_owned() - &b;
    let d = norm(diff.view());
    if d <= EPS_NORM {
        return Ok((Array1::zeros(a.len()), Array1::zeros(b.len())));
    }
    let da = diff.mapv(|x| -cotangent * x / d);
    let db = da.mapv(|x| -x);
    Ok((da, db))
}

/// Pullback of [`softmax`]: with `y = softmax(s)`, returns `y ∘ (u − ⟨y,u⟩)`.
pub fn softmax_vjp(scores: ArrayView1<'_, f64>, cotangent: ArrayView1<'_, f64>) -> Result<Array1<f64>> {
    check_dims(scores, cotangent)?;
    let y = softmax(scores);
    let dot = y.dot(&cotangent);
    Ok(Array1::from_iter(
        y.iter().zip(cotangent.iter()).map(|(yi, u)| yi * (u - dot)),
    ))
}

/// Pullback of [`logsumexp`]: `softmax(s) · u`.
pub fn logsumexp_vjp(scores: ArrayView1<'_, f64>, cotangent: f64) -> Array1<f64> {
    softmax(scores).mapv(|x| x * cotangent)
}

// ---------------------------------------------------------------------------
// similarity metric dispatch
// ---------------------------------------------------------------------------

/// Similarity metric for attentive weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SimMetric {
    Cosine,
    NegEuclidean,
    Pearson,
}

impl SimMetric {
    pub const ALL: [SimMetric; 3] = [SimMetric::Cosine, SimMetric::NegEuclidean, SimMetric::Pearson];

    pub fn name(self) -> &'static str {
        match self {
            SimMetric::Cosine => "cosine",
            SimMetric::NegEuclidean => "neg-euclidean",
            SimMetric::Pearson => "pearson",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "cosine" | "cos" => Ok(SimMetric::Cosine),
            "neg-euclidean" | "euclidean" | "neg_euclidean" => Ok(SimMetric::NegEuclidean),
            "pearson" => Ok(SimMetric::Pearson),
            other => Err(AgcmError::InvalidConfig(format!(
                "unknown metric '{other}' (expected cosine, euclidean, or pearson)"
            ))),
        }
    }
}

impl std::fmt::Display for SimMetric {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Similarity under the chosen metric.
pub fn metric_sim(metric: SimMetric, a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>) -> Result<f64> {
    match metric {
        SimMetric::Cosine => cosine_sim(a, b),
        SimMetric::NegEuclidean => neg_euclidean_sim(a, b),
        SimMetric::Pearson => pearson_sim(a, b),
    }
}

/// Pullback of [`metric_sim`] onto both inputs.
pub fn metric_sim_vjp(
    metric: SimMetric,
    a: ArrayView1<'_, f64>,
    b: ArrayView1<'_, f64>,
    cotangent: f64,
) -> Result<(Array1<f64>, Array1<f64>)> {
    match metric {
        SimMetric::Cosine => cosine_sim_vjp(a, b, cotangent),
        SimMetric::NegEuclidean => neg_euclidean_sim_vjp(a, b, cotangent),
        SimMetric::Pearson => pearson_sim_vjp(a, b, cotangent),
    }
}

// ---------------------------------------------------------------------------
// uniform primitive interface
// ---------------------------------------------------------------------------

/// Identifier for one of the differentiable primitives.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PrimitiveOp {
    Normalize,
    Softmax,
    LogSumExp,
    Sim(SimMetric),
}

/// Inputs for a primitive under the uniform interface.
#[derive(Debug, Clone)]
pub enum PrimitiveInput {
    Unary(Array1<f64>),
    Binary(Array1<f64>, Array1<f64>),
}

/// Output of a primitive: scalar for similarities and log-sum-exp, vector
/// for normalize and softmax.
#[derive(Debug, Clone)]
pub enum PrimitiveOutput {
    Scalar(f64),
    Vector(Array1<f64>),
}

/// Cotangent matching the primitive's output kind.
#[derive(Debug, Clone)]
pub enum Cotangent {
    Scalar(f64),
    Vector(Array1<f64>),
}

impl Cotangent {
    fn scalar(&self) -> Result<f64> {
        match self {
            Cotangent::Scalar(x) => Ok(*x),
            Cotangent::Vector(_) => Err(AgcmError::InvalidConfig(
                "scalar-output primitive needs a scalar cotangent".into(),
            )),
        }
    }

    fn vector(&self) -> Result<ArrayView1<'_, f64>> {
        match self {
            Cotangent::Vector(v) => Ok(v.view()),
            Cotangent::Scalar(_) => Err(AgcmError::InvalidConfig(
                "vector-output primitive needs a vector cotangent".into(),
            )),
        }
    }
}

fn unary(input: &PrimitiveInput) -> Result<ArrayView1<'_, f64>> {
    match input {
        PrimitiveInput::Unary(v) => Ok(v.view()),
        PrimitiveInput::Binary(..) => {
            Err(AgcmError::InvalidConfig("primitive takes one input".into()))
        }
    }
}

fn binary(input: &PrimitiveInput) -> Result<(ArrayView1<'_, f64>, ArrayView1<'_, f64>)> {
    match input {
        PrimitiveInput::Binary(a, b) => Ok((a.view(), b.view())),
        PrimitiveInput::Unary(_) => {
            Err(AgcmError::InvalidConfig("primitive takes two inputs".into()))
        }
    }
}

/// Forward evaluation under the uniform interface.
pub fn eval(op: PrimitiveOp, input: &PrimitiveInput) -> Result<PrimitiveOutput> {
    match op {
        PrimitiveOp::Normalize => Ok(PrimitiveOutput::Vector(normalize(unary(input)?)?)),
        PrimitiveOp::Softmax => Ok(PrimitiveOutput::Vector(softmax(unary(input)?))),
        PrimitiveOp::LogSumExp => Ok(PrimitiveOutput::Scalar(logsumexp(unary(input)?))),
        PrimitiveOp::Sim(metric) => {
            let (a, b) = binary(input)?;
            Ok(PrimitiveOutput::Scalar(metric_sim(metric, a, b)?))
        }
    }
}

/// `Jᵀ·cotangent` for the named primitive: one cotangent array per input.
pub fn vjp(op: PrimitiveOp, input: &PrimitiveInput, cotangent: &Cotangent) -> Result<Vec<Array1<f64>>> {
    match op {
        PrimitiveOp::Normalize => {
            let v = unary(input)?;
            Ok(vec![normalize_vjp(v, cotangent.vector()?)?])
        }
        PrimitiveOp::Softmax => {
            let v = unary(input)?;
            Ok(vec![softmax_vjp(v, cotangent.vector()?)?])
        }
        PrimitiveOp::LogSumExp => {
            let v = unary(input)?;
            Ok(vec![logsumexp_vjp(v, cotangent.scalar()?)])
        }
        PrimitiveOp::Sim(metric) => {
            let (a, b) = binary(input)?;
            let (da, db) = metric_sim_vjp(metric, a, b, cotangent.scalar()?)?;
            Ok(vec![da, db])
        }
    }
}

// ---------------------------------------------------------------------------
// gradient checking
// ---------------------------------------------------------------------------

/// Per-coordinate outcome of a gradient check.
#[derive(Debug, Clone)]
pub struct GradCheckEntry {
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

/// Outcome of comparing an analytic gradient against central differences.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub entries: Vec<GradCheckEntry>,
    pub max_rel_error: f64,
    pub worst_index: usize,
    pub tol: f64,
    pub pass: bool,
}

impl GradCheckReport {
    pub fn worst(&self) -> Option<&GradCheckEntry> {
        self.entries.get(self.worst_index)
    }
}

/// Central-difference gradient of a scalar map.
pub fn central_difference_gradient<F>(mut f: F, point: &[f64], eps: f64) -> Vec<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    let mut work = point.to_vec();
    let mut grad = Vec::with_capacity(point.len());
    for i in 0..point.len() {
        work[i] = point[i] + eps;
        let plus = f(&work);
        work[i] = point[i] - eps;
        let minus = f(&work);
        work[i] = point[i];
        grad.push((plus - minus) / (2.0 * eps));
    }
    grad
}

/// Relative error with an absolute floor: `|a − n| / max(1, |a|, |n|)`, so
/// near-zero gradients are judged absolutely instead of dividing by noise.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1.0)
}

/// Compares the given analytic gradient of `f` at `point` against central
/// finite differences with step `eps`; passes iff the worst per-coordinate
/// relative error is at most `tol`.
pub fn grad_check<F>(f: F, point: &[f64], analytic: &[f64], eps: f64, tol: f64) -> GradCheckReport
where
    F: FnMut(&[f64]) -> f64,
{
    assert_eq!(point.len(), analytic.len(), "analytic gradient length mismatch");
    let numeric = central_difference_gradient(f, point, eps);
    let mut entries = Vec::with_capacity(point.len());
    let mut max_rel = 0.0f64;
    let mut worst = 0usize;
    for (i, (&a, &n)) in analytic.iter().zip(numeric.iter()).enumerate() {
        let rel = relative_error(a, n);
        if rel > max_rel {
            max_rel = rel;
            worst = i;
        }
        entries.push(GradCheckEntry { index: i, analytic: a, numeric: n, rel_error: rel });
    }
    GradCheckReport { entries, max_rel_error: max_rel, worst_index: worst, tol, pass: max_rel <= tol }
}
