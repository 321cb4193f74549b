//! Gradient-check suites behind the `gradcheck` command: every analytic
//! gradient in the crate, compared against central differences at seeded
//! random instances.
//!
//! Four suites: the scalar/vector primitives, proposal fusion (both
//! gradient modes), the margin loss, and the full head pipeline. The
//! fixed-attention fusion mode is checked against an objective that holds
//! the attention weights at their base-point values, which is exactly the
//! map that mode differentiates.

use ndarray::{Array1, Array2};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::apf::{attention_weights, fuse, fuse_vjp, FusionConfig};
use crate::cli::runner::derive_seed;
use crate::diffcore::{
    eval, grad_check, vjp, Cotangent, GradCheckReport, PrimitiveInput, PrimitiveOp,
    PrimitiveOutput, SimMetric, FD_EPS,
};
use crate::head::ClassifierHead;
use crate::margin_loss::{class_cosines, loss_forward, loss_vjp, MarginLossConfig};

/// Pass bar for every suite.
pub const GRADCHECK_TOL: f64 = 1e-4;

pub const SUITE_NAMES: [&str; 4] = ["primitives", "fusion", "margin-loss", "head"];

const SALT_PRIMITIVES: u64 = 0xA1;
const SALT_FUSION: u64 = 0xA2;
const SALT_LOSS: u64 = 0xA3;
const SALT_HEAD: u64 = 0xA4;

/// The single worst coordinate a suite saw.
#[derive(Debug, Clone)]
pub struct WorstCase {
    pub check: usize,
    pub coordinate: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

/// Aggregate outcome of one suite.
#[derive(Debug, Clone)]
pub struct SuiteReport {
    pub name: &'static str,
    pub checks: usize,
    pub coords: usize,
    pub max_rel_error: f64,
    pub tol: f64,
    pub pass: bool,
    pub worst: Option<WorstCase>,
}

struct SuiteAcc {
    name: &'static str,
    tol: f64,
    checks: usize,
    coords: usize,
    max_rel_error: f64,
    worst: Option<WorstCase>,
}

impl SuiteAcc {
    fn new(name: &'static str, tol: f64) -> Self {
        SuiteAcc { name, tol, checks: 0, coords: 0, max_rel_error: 0.0, worst: None }
    }

    fn absorb(&mut self, check: usize, report: &GradCheckReport) {
        self.coords += report.entries.len();
        let worse = report.max_rel_error > self.max_rel_error;
        if worse || self.worst.is_none() {
            if let Some(e) = report.worst() {
                self.worst = Some(WorstCase {
                    check,
                    coordinate: e.index,
                    analytic: e.analytic,
                    numeric: e.numeric,
                    rel_error: e.rel_error,
                });
            }
        }
        if worse {
            self.max_rel_error = report.max_rel_error;
        }
    }

    fn finish(self) -> SuiteReport {
        SuiteReport {
            name: self.name,
            checks: self.checks,
            coords: self.coords,
            max_rel_error: self.max_rel_error,
            tol: self.tol,
            pass: self.max_rel_error <= self.tol,
            worst: self.worst,
        }
    }
}

fn normal_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
}

fn normal_array2(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_vec((rows, cols), normal_vec(rng, rows * cols)).unwrap()
}

/// Applies the negative-control hook: nudges one analytic coordinate so
/// the comparison must fail.
fn maybe_corrupt(analytic: &mut [f64], corrupt_pending: &mut bool) {
    if *corrupt_pending && !analytic.is_empty() {
        analytic[0] += 0.5;
        *corrupt_pending = false;
    }
}

/// Normalize, softmax, log-sum-exp, and the three similarities, as
/// `⟨cotangent, op(x)⟩` objectives against flat input points.
fn primitives_suite(seed: u64, count: usize, tol: f64, corrupt: bool) -> SuiteReport {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, SALT_PRIMITIVES));
    let mut acc = SuiteAcc::new("primitives", tol);
    let mut corrupt_pending = corrupt;
    let ops = [
        PrimitiveOp::Normalize,
        PrimitiveOp::Softmax,
        PrimitiveOp::LogSumExp,
        PrimitiveOp::Sim(SimMetric::Cosine),
        PrimitiveOp::Sim(SimMetric::NegEuclidean),
        PrimitiveOp::Sim(SimMetric::Pearson),
    ];
    for check in 0..count {
        for op in ops {
            let d = rng.random_range(2..=8);
            let (input, point) = match op {
                PrimitiveOp::Sim(_) => {
                    let a = Array1::from_vec(normal_vec(&mut rng, d));
                    let b = Array1::from_vec(normal_vec(&mut rng, d));
                    let point: Vec<f64> = a.iter().chain(b.iter()).copied().collect();
                    (PrimitiveInput::Binary(a, b), point)
                }
                _ => {
                    let v = Array1::from_vec(normal_vec(&mut rng, d));
                    let point = v.to_vec();
                    (PrimitiveInput::Unary(v), point)
                }
            };
            let cot = match eval(op, &input).unwrap() {
                PrimitiveOutput::Scalar(_) => {
                    Cotangent::Scalar(rng.sample::<f64, _>(StandardNormal))
                }
                PrimitiveOutput::Vector(out) => {
                    Cotangent::Vector(Array1::from_vec(normal_vec(&mut rng, out.len())))
                }
            };
            let mut analytic: Vec<f64> = vjp(op, &input, &cot)
                .unwrap()
                .iter()
                .flat_map(|a| a.iter().copied())
                .collect();
            maybe_corrupt(&mut analytic, &mut corrupt_pending);
            let binary = matches!(input, PrimitiveInput::Binary(..));
            let cot_ref = &cot;
            let objective = move |flat: &[f64]| {
                let input = if binary {
                    PrimitiveInput::Binary(
                        Array1::from_vec(flat[..d].to_vec()),
                        Array1::from_vec(flat[d..].to_vec()),
                    )
                } else {
                    PrimitiveInput::Unary(Array1::from_vec(flat.to_vec()))
                };
                match (eval(op, &input).unwrap(), cot_ref) {
                    (PrimitiveOutput::Scalar(s), Cotangent::Scalar(c)) => s * c,
                    (PrimitiveOutput::Vector(v), Cotangent::Vector(u)) => {
                        v.dot(u)
                    }
                    _ => unreachable!("output kind is fixed per op"),
                }
            };
            let report = grad_check(objective, &point, &analytic, FD_EPS, tol);
            acc.absorb(check, &report);
        }
        acc.checks += 1;
    }
    acc.finish()
}

/// Fusion pullback in both gradient modes, all metrics. The full mode is
/// checked against `⟨U, fuse(E)⟩`; the fixed-attention mode against the
/// same blend with the weights frozen at the base point.
fn fusion_suite(seed: u64, count: usize, tol: f64, corrupt: bool) -> SuiteReport {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, SALT_FUSION));
    let mut acc = SuiteAcc::new("fusion", tol);
    let mut corrupt_pending = corrupt;
    for check in 0..count {
        for stop_attention_grad in [false, true] {
            for metric in SimMetric::ALL {
                let m = rng.random_range(2..=6);
                let d = rng.random_range(2..=6);
                let alpha = rng.random_range(0.5..1.0);
                let cfg = FusionConfig { alpha, metric, stop_attention_grad };
                let embeddings = normal_array2(&mut rng, m, d);
                let cot = normal_array2(&mut rng, m, d);
                let mut analytic: Vec<f64> =
                    fuse_vjp(embeddings.view(), cot.view(), &cfg).unwrap().iter().copied().collect();
                maybe_corrupt(&mut analytic, &mut corrupt_pending);
                let point: Vec<f64> = embeddings.iter().copied().collect();
                let frozen = if stop_attention_grad {
                    Some(attention_weights(embeddings.view(), metric).unwrap().weights)
                } else {
                    None
                };
                let objective = |flat: &[f64]| {
                    let e = Array2::from_shape_vec((m, d), flat.to_vec()).unwrap();
                    let fused = match &frozen {
                        Some(w) => {
                            e.mapv(|x| alpha * x) + w.dot(&e).mapv(|x| (1.0 - alpha) * x)
                        }
                        None => fuse(e.view(), &cfg).unwrap(),
                    };
                    (&fused * &cot).sum()
                };
                let report = grad_check(objective, &point, &analytic, FD_EPS, tol);
                acc.absorb(check, &report);
            }
        }
        acc.checks += 1;
    }
    acc.finish()
}

/// Margin loss pullback onto both features and class weights, jointly.
fn margin_loss_suite(seed: u64, count: usize, tol: f64, corrupt: bool) -> SuiteReport {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, SALT_LOSS));
    let mut acc = SuiteAcc::new("margin-loss", tol);
    let mut corrupt_pending = corrupt;
    let margins = [0.0, 0.1, 0.2, 0.4];
    for check in 0..count {
        let n_classes = rng.random_range(3..=6);
        let m = rng.random_range(1..=8);
        let d = rng.random_range(2..=6);
        let cfg = MarginLossConfig {
            margin: margins[rng.random_range(0..margins.len())],
            beta: 20.0,
            background_index: n_classes - 1,
        };
        let features = normal_array2(&mut rng, m, d);
        let weights = normal_array2(&mut rng, n_classes, d);
        let labels: Vec<usize> = (0..m).map(|_| rng.random_range(0..n_classes)).collect();
        let (_, zbar, wbar) =
            loss_vjp(features.view(), weights.view(), &labels, &cfg).unwrap();
        let mut analytic: Vec<f64> = zbar.iter().chain(wbar.iter()).copied().collect();
        maybe_corrupt(&mut analytic, &mut corrupt_pending);
        let point: Vec<f64> = features.iter().chain(weights.iter()).copied().collect();
        let split = m * d;
        let labels_ref = &labels;
        let cfg_ref = &cfg;
        let objective = move |flat: &[f64]| {
            let z = Array2::from_shape_vec((m, d), flat[..split].to_vec()).unwrap();
            let w = Array2::from_shape_vec((n_classes, d), flat[split..].to_vec()).unwrap();
            let table = class_cosines(z.view(), w.view()).unwrap();
            loss_forward(&table, labels_ref, cfg_ref).unwrap()
        };
        let report = grad_check(objective, &point, &analytic, FD_EPS, tol);
        acc.absorb(check, &report);
        acc.checks += 1;
    }
    acc.finish()
}

/// Full pipeline: projection, bias, and class weights through projection →
/// fusion → margin loss.
fn head_suite(seed: u64, count: usize, tol: f64, corrupt: bool) -> SuiteReport {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, SALT_HEAD));
    let mut acc = SuiteAcc::new("head", tol);
    let mut corrupt_pending = corrupt;
    for check in 0..count {
        let d_in = rng.random_range(3..=6);
        let d_feat = rng.random_range(2..=5);
        let n_real = rng.random_range(2..=4);
        let m = rng.random_range(2..=6);
        let fusion = FusionConfig {
            alpha: rng.random_range(0.5..1.0),
            metric: SimMetric::Cosine,
            stop_attention_grad: false,
        };
        let head =
            ClassifierHead::init(d_in, d_feat, n_real, fusion, 0.2, 20.0, rng.random::<u64>())
                .unwrap();
        let x = normal_array2(&mut rng, m, d_in);
        let labels: Vec<usize> = (0..m).map(|_| rng.random_range(0..=n_real)).collect();
        let (_, grads) = head.forward_train(x.view(), &labels).unwrap();
        let mut analytic: Vec<f64> = grads
            .projection
            .iter()
            .chain(grads.bias.iter())
            .chain(grads.class_weights.iter())
            .copied()
            .collect();
        maybe_corrupt(&mut analytic, &mut corrupt_pending);
        let point: Vec<f64> = head
            .projection
            .iter()
            .chain(head.bias.iter())
            .chain(head.class_weights.iter())
            .copied()
            .collect();
        let proj_len = d_in * d_feat;
        let bias_len = d_feat;
        let head_ref = &head;
        let x_ref = &x;
        let labels_ref = &labels;
        let objective = move |flat: &[f64]| {
            let mut probe = head_ref.clone();
            probe.projection =
                Array2::from_shape_vec((d_in, d_feat), flat[..proj_len].to_vec()).unwrap();
            probe.bias = Array1::from_vec(flat[proj_len..proj_len + bias_len].to_vec());
            probe.class_weights = Array2::from_shape_vec(
                (n_real + 1, d_feat),
                flat[proj_len + bias_len..].to_vec(),
            )
            .unwrap();
            probe.loss_eval(x_ref.view(), labels_ref).unwrap()
        };
        let report = grad_check(objective, &point, &analytic, FD_EPS, tol);
        acc.absorb(check, &report);
        acc.checks += 1;
    }
    acc.finish()
}

/// Runs all four suites. `corrupt` names a suite whose first analytic
/// gradient gets deliberately damaged — the negative control proving the
/// harness catches bad gradients.
pub fn run_suites(seed: u64, count: usize, tol: f64, corrupt: Option<&str>) -> Vec<SuiteReport> {
    let hit = |name: &str| corrupt == Some(name);
    vec![
        primitives_suite(seed, count, tol, hit("primitives")),
        fusion_suite(seed, count, tol, hit("fusion")),
        margin_loss_suite(seed, count, tol, hit("margin-loss")),
        head_suite(seed, count, tol, hit("head")),
    ]
}

/// Prints one line per suite (plus the worst offender on failure) and
/// returns the process exit code: 0 all pass, 3 otherwise.
pub fn cmd_gradcheck(seed: u64, count: usize, corrupt: Option<&str>) -> i32 {
    let reports = run_suites(seed, count, GRADCHECK_TOL, corrupt);
    let mut all_pass = true;
    for r in &reports {
        println!(
            "{:<12} checks {:>4}  coords {:>7}  max_rel_err {:.3e}  tol {:.0e}  {}",
            r.name,
            r.checks,
            r.coords,
            r.max_rel_error,
            r.tol,
            if r.pass { "PASS" } else { "FAIL" }
        );
        if !r.pass {
            all_pass = false;
            if let Some(w) = &r.worst {
                println!(
                    "  worst: check {} coordinate {}  analytic {:.9e}  numeric {:.9e}  rel_err {:.3e}",
                    w.check, w.coordinate, w.analytic, w.numeric, w.rel_error
                );
            }
        }
    }
    if all_pass {
        0
    } else {
        3
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_suites_pass_at_small_count() {
        for report in run_suites(1, 5, GRADCHECK_TOL, None) {
            assert!(
                report.pass,
                "{} failed: max rel err {:.3e} (worst {:?})",
                report.name, report.max_rel_error, report.worst
            );
            assert_eq!(report.checks, 5);
            assert!(report.coords > 0);
        }
    }

    #[test]
    fn corruption_fails_exactly_the_named_suite() {
        for target in SUITE_NAMES {
            let reports = run_suites(1, 2, GRADCHECK_TOL, Some(target));
            for r in &reports {
                if r.name == target {
                    assert!(!r.pass, "{target} should fail when corrupted");
                    let w = r.worst.as_ref().expect("failed suite reports its worst case");
                    assert!(w.rel_error > GRADCHECK_TOL);
                } else {
                    assert!(r.pass, "{} should still pass when {target} is corrupted", r.name);
                }
            }
        }
    }

    #[test]
    fn exit_codes_follow_outcomes() {
        assert_eq!(cmd_gradcheck(1, 2, None), 0);
        assert_eq!(cmd_gradcheck(1, 2, Some("fusion")), 3);
    }
}
