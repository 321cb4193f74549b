//! Experiment orchestration: per-seed pipelines, the one-at-a-time
//! ablation sweep, dataset emission, and metric recomputation from saved
//! artifacts.
//!
//! Every run is a pure function of (config, seed): sub-stage seeds are
//! derived, not shared, so sweep cells reuse the identical dataset, base
//! head, and support set for a seed, and parallel execution cannot change
//! any artifact byte.

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use ndarray::Array2;

use crate::cli::config::{resolve_output_dir, ExperimentConfig};
use crate::diffcore::SimMetric;
use crate::error::{AgcmError, Result};
use crate::head::ClassifierHead;
use crate::metrics::{
    accuracy_on_classes, cluster_stats, confusion, forgetting, ClusterStats, ConfusionMatrix,
};
use crate::synthdata::{self, generate, kshot_sample, Dataset, Label, SplitKind, SyntheticData};
use crate::trainer::{base_train, few_shot_adapt, TrainLog};

// Stage-seed salts. Deriving, rather than reusing, the run seed keeps the
// dataset, the init stream, and the batch stream decoupled: changing one
// stage's consumption pattern cannot shift another's draws.
const SEED_DATA: u64 = 1;
const SEED_BASE: u64 = 2;
const SEED_ADAPT: u64 = 3;
const SEED_SHOTS: u64 = 4;

/// Mixes a run seed with a salt into an independent stream seed
/// (splitmix64 finalizer).
pub fn derive_seed(base: u64, salt: u64) -> u64 {
    let mut z = base ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

// ---------------------------------------------------------------------------
// file plumbing
// ---------------------------------------------------------------------------

fn write_file(path: &Path, content: &str) -> Result<()> {
    std::fs::write(path, content).map_err(|e| AgcmError::io(path, e))
}

fn read_file(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| AgcmError::io(path, e))
}

fn create_dir_all(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| AgcmError::io(path, e))
}

/// Per-step losses as `step,loss` CSV; `{:.17e}` keeps the exact values.
pub fn write_log_csv(path: &Path, step_losses: &[f64]) -> Result<()> {
    let mut out = String::from("step,loss\n");
    for (i, loss) in step_losses.iter().enumerate() {
        out.push_str(&format!("{},{:.17e}\n", i + 1, loss));
    }
    write_file(path, &out)
}

pub fn read_log_csv(path: &Path) -> Result<Vec<f64>> {
    let text = read_file(path)?;
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, "step,loss")) => {}
        _ => return Err(AgcmError::parse(path, 1, "expected 'step,loss' header")),
    }
    let mut losses = Vec::new();
    for (idx, line) in lines {
        let line_no = idx + 1;
        if line.is_empty() {
            continue;
        }
        let Some((step, loss)) = line.split_once(',') else {
            return Err(AgcmError::parse(path, line_no, "expected 'step,loss' row"));
        };
        if step.parse::<usize>() != Ok(losses.len() + 1) {
            return Err(AgcmError::parse(path, line_no, "step numbers must count from 1"));
        }
        match loss.parse::<f64>() {
            Ok(v) if v.is_finite() => losses.push(v),
            _ => return Err(AgcmError::parse(path, line_no, &format!("bad loss '{loss}'"))),
        }
    }
    Ok(losses)
}

const SUMMARY_HEADER: &str = "seed,base_acc,novel_acc,forgetting_percent,confusion_percent";

/// One summary line: a seed's headline numbers, or the mean/std aggregate.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub label: String,
    pub base_acc: f64,
    pub novel_acc: f64,
    pub forgetting_percent: f64,
    pub confusion_percent: f64,
}

pub fn summary_csv(rows: &[SummaryRow]) -> String {
    let mut out = String::from(SUMMARY_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&format!(
            "{},{:.6},{:.6},{:.6},{:.6}\n",
            r.label, r.base_acc, r.novel_acc, r.forgetting_percent, r.confusion_percent
        ));
    }
    out
}

pub fn parse_summary_csv(text: &str, origin: &Path) -> Result<Vec<SummaryRow>> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h == SUMMARY_HEADER => {}
        _ => {
            return Err(AgcmError::parse(origin, 1, &format!("expected '{SUMMARY_HEADER}' header")))
        }
    }
    let mut rows = Vec::new();
    for (idx, line) in lines {
        let line_no = idx + 1;
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 5 {
            return Err(AgcmError::parse(origin, line_no, "expected 5 fields"));
        }
        let mut vals = [0.0f64; 4];
        for (slot, field) in vals.iter_mut().zip(&fields[1..]) {
            *slot = field
                .parse()
                .map_err(|_| AgcmError::parse(origin, line_no, &format!("bad number '{field}'")))?;
        }
        rows.push(SummaryRow {
            label: fields[0].to_string(),
            base_acc: vals[0],
            novel_acc: vals[1],
            forgetting_percent: vals[2],
            confusion_percent: vals[3],
        });
    }
    Ok(rows)
}

const SWEEP_HEADER: &str = "parameter,value,base_acc,novel_acc";

/// One ablation cell's aggregate: which knob moved, to what, and the
/// seed-mean accuracies.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub parameter: String,
    pub value: String,
    pub base_acc: f64,
    pub novel_acc: f64,
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from(SWEEP_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&format!(
            "{},{},{:.6},{:.6}\n",
            r.parameter, r.value, r.base_acc, r.novel_acc
        ));
    }
    out
}

pub fn parse_sweep_csv(text: &str, origin: &Path) -> Result<Vec<SweepRow>> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h == SWEEP_HEADER => {}
        _ => return Err(AgcmError::parse(origin, 1, &format!("expected '{SWEEP_HEADER}' header"))),
    }
    let mut rows = Vec::new();
    for (idx, line) in lines {
        let line_no = idx + 1;
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 4 {
            return Err(AgcmError::parse(origin, line_no, "expected 4 fields"));
        }
        let num = |s: &str| {
            s.parse::<f64>()
                .map_err(|_| AgcmError::parse(origin, line_no, &format!("bad number '{s}'")))
        };
        rows.push(SweepRow {
            parameter: fields[0].to_string(),
            value: fields[1].to_string(),
            base_acc: num(fields[2])?,
            novel_acc: num(fields[3])?,
        });
    }
    Ok(rows)
}

// ---------------------------------------------------------------------------
// per-seed pipeline
// ---------------------------------------------------------------------------

/// Everything measured for one seed after both stages.
#[derive(Debug, Clone)]
pub struct SeedOutcome {
    pub seed: u64,
    pub overall_acc: f64,
    pub base_acc: f64,
    pub novel_acc: f64,
    /// NaN when the eval split holds no background rows.
    pub background_acc: f64,
    pub confusion_percent: f64,
    pub base_acc_before: f64,
    pub forgetting_percent: f64,
    pub final_base_loss: f64,
    pub final_adapt_loss: f64,
    /// None when the eval split cannot support spread statistics.
    pub cluster: Option<ClusterStats>,
}

/// Stage-one products for a seed, shared verbatim by every sweep cell.
pub struct BasePhase {
    pub data: SyntheticData,
    pub head: ClassifierHead,
    pub log: TrainLog,
    pub base_acc_before: f64,
    pub shots: Dataset,
}

pub fn seed_base(cfg: &ExperimentConfig, seed: u64) -> Result<BasePhase> {
    let data = generate(&cfg.dataset, derive_seed(seed, SEED_DATA))?;
    let (head, log) = base_train(&data.base_train, &cfg.base_stage(derive_seed(seed, SEED_BASE)))?;
    let base_classes: Vec<usize> = (0..cfg.dataset.n_base).collect();
    let base_acc_before = accuracy_on_classes(&head, &data.eval, &base_classes)?;
    let shots = kshot_sample(&data.support_pool, cfg.k, derive_seed(seed, SEED_SHOTS))?;
    Ok(BasePhase { data, head, log, base_acc_before, shots })
}

fn eval_cluster(head: &ClassifierHead, eval: &Dataset) -> Option<ClusterStats> {
    let keep: Vec<usize> = (0..eval.len())
        .filter(|&i| matches!(eval.labels[i], Label::Class(_)))
        .collect();
    if keep.is_empty() {
        return None;
    }
    let x = Array2::from_shape_fn((keep.len(), eval.dim()), |(r, c)| {
        eval.features[[keep[r], c]]
    });
    let projected = head.project(x.view()).ok()?;
    let labels: Vec<usize> = keep
        .iter()
        .map(|&i| eval.labels[i].index(eval.n_real_classes))
        .collect();
    cluster_stats(projected.view(), &labels).ok()
}

fn evaluate_adapted(
    seed: u64,
    n_base: usize,
    adapted: &ClassifierHead,
    eval: &Dataset,
    base_acc_before: f64,
    final_base_loss: f64,
    final_adapt_loss: f64,
) -> Result<(ConfusionMatrix, SeedOutcome)> {
    let cm = confusion(adapted, eval)?;
    let n_real = eval.n_real_classes;
    let base_classes: Vec<usize> = (0..n_base).collect();
    let novel_classes: Vec<usize> = (n_base..n_real).collect();
    let base_acc = cm.accuracy_over(&base_classes)?;
    let novel_acc = cm.accuracy_over(&novel_classes)?;
    let background_acc = cm.accuracy_over(&[n_real]).unwrap_or(f64::NAN);
    let forget = forgetting(base_acc_before, base_acc)?;
    let outcome = SeedOutcome {
        seed,
        overall_acc: cm.accuracy()?,
        base_acc,
        novel_acc,
        background_acc,
        confusion_percent: cm.confusion_percentage()?,
        base_acc_before,
        forgetting_percent: forget.drop_percent,
        final_base_loss,
        final_adapt_loss,
        cluster: eval_cluster(adapted, eval),
    };
    Ok((cm, outcome))
}

/// Stage two plus evaluation, against an already-trained base phase. The
/// adapt-stage knobs come from `cfg`, so sweep cells can vary them while
/// sharing the base.
pub fn seed_adapt_eval(
    cfg: &ExperimentConfig,
    seed: u64,
    base: &BasePhase,
) -> Result<(ClassifierHead, TrainLog, ConfusionMatrix, SeedOutcome)> {
    let (adapted, log) =
        few_shot_adapt(&base.head, &base.shots, &cfg.adapt_stage(derive_seed(seed, SEED_ADAPT)))?;
    let (cm, outcome) = evaluate_adapted(
        seed,
        cfg.dataset.n_base,
        &adapted,
        &base.data.eval,
        base.base_acc_before,
        base.log.final_loss(),
        log.final_loss(),
    )?;
    Ok((adapted, log, cm, outcome))
}

fn cluster_field(cluster: &Option<ClusterStats>, pick: fn(&ClusterStats) -> f64) -> f64 {
    cluster.as_ref().map(pick).unwrap_or(f64::NAN)
}

/// One seed's metrics as a line-delimited record.
pub fn metrics_record(o: &SeedOutcome) -> String {
    format!(
        "seed = {}\n\
         overall_acc = {:.6}\n\
         base_acc = {:.6}\n\
         novel_acc = {:.6}\n\
         background_acc = {:.6}\n\
         confusion_percent = {:.6}\n\
         base_acc_before = {:.6}\n\
         base_acc_after = {:.6}\n\
         forgetting_percent = {:.6}\n\
         final_base_loss = {:.6e}\n\
         final_adapt_loss = {:.6e}\n\
         cluster_intra_mean = {:.6}\n\
         cluster_inter_mean = {:.6}\n\
         cluster_separation = {:.6}\n",
        o.seed,
        o.overall_acc,
        o.base_acc,
        o.novel_acc,
        o.background_acc,
        o.confusion_percent,
        o.base_acc_before,
        o.base_acc,
        o.forgetting_percent,
        o.final_base_loss,
        o.final_adapt_loss,
        cluster_field(&o.cluster, |c| c.intra_mean),
        cluster_field(&o.cluster, |c| c.inter_mean),
        cluster_field(&o.cluster, |c| c.separation),
    )
}

/// Full pipeline for one seed; with `artifacts`, writes the seed's logs,
/// checkpoints, eval split, confusion matrix, and metrics record there.
pub fn run_seed(cfg: &ExperimentConfig, seed: u64, artifacts: Option<&Path>) -> Result<SeedOutcome> {
    let base = seed_base(cfg, seed)?;
    let (adapted, adapt_log, cm, outcome) = seed_adapt_eval(cfg, seed, &base)?;
    if let Some(dir) = artifacts {
        create_dir_all(dir)?;
        write_log_csv(&dir.join("base_log.csv"), &base.log.step_losses)?;
        write_log_csv(&dir.join("adapt_log.csv"), &adapt_log.step_losses)?;
        base.head.save(&dir.join("head_base.bin"))?;
        adapted.save(&dir.join("head_adapted.bin"))?;
        synthdata::save_csv(&base.data.eval, &dir.join("eval.csv"))?;
        write_file(&dir.join("confusion.csv"), &cm.to_csv())?;
        write_file(&dir.join("metrics.txt"), &metrics_record(&outcome))?;
    }
    Ok(outcome)
}

// ---------------------------------------------------------------------------
// worker pool
// ---------------------------------------------------------------------------

/// Applies `f` to `0..n` on up to `jobs` threads; the output order is by
/// index, so parallelism never reorders results.
pub fn parallel_map<T, F>(n: usize, jobs: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync,
{
    let jobs = jobs.max(1).min(n.max(1));
    if jobs == 1 {
        return (0..n).map(f).collect();
    }
    let next = AtomicUsize::new(0);
    let slots: Vec<Mutex<Option<T>>> = (0..n).map(|_| Mutex::new(None)).collect();
    std::thread::scope(|scope| {
        for _ in 0..jobs {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= n {
                    break;
                }
                let value = f(i);
                *slots[i].lock().unwrap() = Some(value);
            });
        }
    });
    slots
        .into_iter()
        .map(|m| m.into_inner().unwrap().expect("worker filled every slot"))
        .collect()
}

// ---------------------------------------------------------------------------
// aggregation
// ---------------------------------------------------------------------------

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Sample standard deviation; zero for fewer than two values.
fn sample_std(values: &[f64]) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let m = mean(values);
    (values.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (values.len() - 1) as f64).sqrt()
}

/// Per-seed rows plus `mean` and `std` aggregate rows.
pub fn summarize(outcomes: &[SeedOutcome]) -> Vec<SummaryRow> {
    let mut rows: Vec<SummaryRow> = outcomes
        .iter()
        .map(|o| SummaryRow {
            label: o.seed.to_string(),
            base_acc: o.base_acc,
            novel_acc: o.novel_acc,
            forgetting_percent: o.forgetting_percent,
            confusion_percent: o.confusion_percent,
        })
        .collect();
    for (label, stat) in [("mean", mean as fn(&[f64]) -> f64), ("std", sample_std)] {
        let col = |pick: fn(&SeedOutcome) -> f64| {
            let vals: Vec<f64> = outcomes.iter().map(pick).collect();
            stat(&vals)
        };
        rows.push(SummaryRow {
            label: label.to_string(),
            base_acc: col(|o| o.base_acc),
            novel_acc: col(|o| o.novel_acc),
            forgetting_percent: col(|o| o.forgetting_percent),
            confusion_percent: col(|o| o.confusion_percent),
        });
    }
    rows
}

fn print_summary(rows: &[SummaryRow]) {
    for r in rows {
        println!(
            "{:<6} base_acc {:.4}  novel_acc {:.4}  forgetting {:.2}%  confusion {:.2}%",
            r.label, r.base_acc, r.novel_acc, r.forgetting_percent, r.confusion_percent
        );
    }
}

// ---------------------------------------------------------------------------
// commands
// ---------------------------------------------------------------------------

/// Two-stage experiment over every configured seed; exit 0 on success.
pub fn cmd_run(cfg: &ExperimentConfig) -> Result<i32> {
    let out = resolve_output_dir(&cfg.output_dir);
    create_dir_all(&out)?;
    write_file(&out.join("config.effective.txt"), &cfg.to_text())?;
    let results = parallel_map(cfg.seeds.len(), cfg.jobs, |i| {
        let seed = cfg.seeds[i];
        run_seed(cfg, seed, Some(&out.join(format!("seed_{seed}"))))
    });
    let mut outcomes = Vec::with_capacity(results.len());
    let mut first_err = None;
    for (result, &seed) in results.into_iter().zip(&cfg.seeds) {
        match result {
            Ok(o) => outcomes.push(o),
            Err(e) => {
                eprintln!("seed {seed}: {e}");
                first_err.get_or_insert(e);
            }
        }
    }
    if let Some(e) = first_err {
        return Err(e);
    }
    let rows = summarize(&outcomes);
    write_file(&out.join("summary.csv"), &summary_csv(&rows))?;
    print_summary(&rows);
    println!("artifacts: {}", out.display());
    Ok(0)
}

// ---------------------------------------------------------------------------
// sweep
// ---------------------------------------------------------------------------

/// Value lists for the one-at-a-time ablation; defaults reproduce the
/// published grid.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepGrid {
    pub alphas: Vec<f64>,
    pub metrics: Vec<SimMetric>,
    pub margins: Vec<f64>,
}

impl Default for SweepGrid {
    fn default() -> Self {
        SweepGrid {
            alphas: vec![0.5, 0.7, 0.8, 0.9, 1.0],
            metrics: vec![SimMetric::NegEuclidean, SimMetric::Cosine, SimMetric::Pearson],
            margins: vec![0.0, 0.1, 0.2, 0.4, 0.8, 1.0],
        }
    }
}

/// One grid cell: a single knob moved away from the configured defaults.
#[derive(Debug, Clone)]
pub struct SweepCell {
    pub parameter: &'static str,
    pub value: String,
    pub cfg: ExperimentConfig,
}

impl SweepCell {
    pub fn dir_name(&self) -> String {
        format!("{}_{}", self.parameter, self.value)
    }
}

impl SweepGrid {
    /// Cells in grid order: the alpha block, the distance block, then the
    /// margin block. Each overrides exactly one adapt-stage knob.
    pub fn cells(&self, base: &ExperimentConfig) -> Vec<SweepCell> {
        let mut cells = Vec::new();
        for &alpha in &self.alphas {
            let mut cfg = base.clone();
            cfg.alpha = alpha;
            cells.push(SweepCell { parameter: "alpha", value: format!("{alpha}"), cfg });
        }
        for &metric in &self.metrics {
            let mut cfg = base.clone();
            cfg.metric = metric;
            cells.push(SweepCell { parameter: "distance", value: metric.name().to_string(), cfg });
        }
        for &margin in &self.margins {
            let mut cfg = base.clone();
            cfg.margin = margin;
            cells.push(SweepCell { parameter: "margin", value: format!("{margin}"), cfg });
        }
        cells
    }
}

/// Ablation sweep: per seed, the base phase runs once and every cell
/// re-adapts from it, so cells are paired and order-independent. A failed
/// cell is recorded (NaN row plus `error.txt`) and the sweep continues;
/// exit 2 signals that at least one cell failed.
pub fn cmd_sweep(cfg: &ExperimentConfig, cells: &[SweepCell]) -> Result<i32> {
    let out = resolve_output_dir(&cfg.output_dir);
    create_dir_all(&out)?;
    write_file(&out.join("config.effective.txt"), &cfg.to_text())?;
    let cells_dir = out.join("cells");
    create_dir_all(&cells_dir)?;

    // per_seed[i][j]: seed i, cell j
    let per_seed: Vec<Vec<std::result::Result<SeedOutcome, String>>> =
        parallel_map(cfg.seeds.len(), cfg.jobs, |i| {
            let seed = cfg.seeds[i];
            match seed_base(cfg, seed) {
                Ok(base) => cells
                    .iter()
                    .map(|cell| {
                        seed_adapt_eval(&cell.cfg, seed, &base)
                            .map(|(_, _, _, outcome)| outcome)
                            .map_err(|e| e.to_string())
                    })
                    .collect(),
                Err(e) => vec![Err(e.to_string()); cells.len()],
            }
        });

    let mut rows = Vec::with_capacity(cells.len());
    let mut failed_cells = 0usize;
    for (j, cell) in cells.iter().enumerate() {
        let cell_dir = cells_dir.join(cell.dir_name());
        create_dir_all(&cell_dir)?;
        let mut outcomes = Vec::new();
        let mut errors = Vec::new();
        for (i, seed_results) in per_seed.iter().enumerate() {
            match &seed_results[j] {
                Ok(o) => outcomes.push(o.clone()),
                Err(msg) => errors.push(format!("seed {}: {msg}\n", cfg.seeds[i])),
            }
        }
        if errors.is_empty() {
            write_file(&cell_dir.join("summary.csv"), &summary_csv(&summarize(&outcomes)))?;
            rows.push(SweepRow {
                parameter: cell.parameter.to_string(),
                value: cell.value.clone(),
                base_acc: mean(&outcomes.iter().map(|o| o.base_acc).collect::<Vec<_>>()),
                novel_acc: mean(&outcomes.iter().map(|o| o.novel_acc).collect::<Vec<_>>()),
            });
        } else {
            failed_cells += 1;
            write_file(&cell_dir.join("error.txt"), &errors.concat())?;
            rows.push(SweepRow {
                parameter: cell.parameter.to_string(),
                value: cell.value.clone(),
                base_acc: f64::NAN,
                novel_acc: f64::NAN,
            });
        }
    }
    write_file(&out.join("sweep.csv"), &sweep_csv(&rows))?;
    for r in &rows {
        println!(
            "{:<9} {:<14} base_acc {:.4}  novel_acc {:.4}",
            r.parameter, r.value, r.base_acc, r.novel_acc
        );
    }
    println!("artifacts: {}", out.display());
    if failed_cells > 0 {
        eprintln!("{failed_cells} of {} cells failed; see cells/*/error.txt", cells.len());
        return Ok(2);
    }
    Ok(0)
}

/// Writes the three synthetic splits for one run seed; the files are the
/// exact datasets a `run` with that seed consumes.
pub fn cmd_datagen(cfg: &ExperimentConfig, seed: u64, out: &Path) -> Result<i32> {
    create_dir_all(out)?;
    let data = generate(&cfg.dataset, derive_seed(seed, SEED_DATA))?;
    for (name, split) in [
        ("base_train.csv", &data.base_train),
        ("support_pool.csv", &data.support_pool),
        ("eval.csv", &data.eval),
    ] {
        let path = out.join(name);
        synthdata::save_csv(split, &path)?;
        println!("wrote {} ({} samples)", path.display(), split.len());
    }
    Ok(0)
}

// ---------------------------------------------------------------------------
// report
// ---------------------------------------------------------------------------

fn seed_dirs(dir: &Path) -> Result<Vec<(u64, PathBuf)>> {
    let entries = std::fs::read_dir(dir).map_err(|e| AgcmError::io(dir, e))?;
    let mut found = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| AgcmError::io(dir, e))?;
        let name = entry.file_name();
        let Some(name) = name.to_str() else { continue };
        if let Some(n) = name.strip_prefix("seed_").and_then(|s| s.parse::<u64>().ok()) {
            if entry.path().is_dir() {
                found.push((n, entry.path()));
            }
        }
    }
    if found.is_empty() {
        return Err(AgcmError::io(
            dir,
            std::io::Error::new(std::io::ErrorKind::NotFound, "no seed_* directories"),
        ));
    }
    found.sort_by_key(|(n, _)| *n);
    Ok(found)
}

/// Recomputes one seed's metrics from its saved checkpoints, eval split,
/// and training logs.
pub fn recompute_seed(seed: u64, dir: &Path) -> Result<SeedOutcome> {
    let base_head = ClassifierHead::load(&dir.join("head_base.bin"))?;
    let adapted = ClassifierHead::load(&dir.join("head_adapted.bin"))?;
    let eval = synthdata::load_csv(&dir.join("eval.csv"), SplitKind::Eval)?;
    let base_losses = read_log_csv(&dir.join("base_log.csv"))?;
    let adapt_losses = read_log_csv(&dir.join("adapt_log.csv"))?;
    let n_base = base_head.n_real_classes();
    if adapted.n_real_classes() <= n_base {
        return Err(AgcmError::DimensionMismatch {
            expected: n_base + 1,
            got: adapted.n_real_classes(),
        });
    }
    let base_classes: Vec<usize> = (0..n_base).collect();
    let base_acc_before = accuracy_on_classes(&base_head, &eval, &base_classes)?;
    let last = |v: &[f64]| v.last().copied().unwrap_or(f64::NAN);
    let (_, outcome) = evaluate_adapted(
        seed,
        n_base,
        &adapted,
        &eval,
        base_acc_before,
        last(&base_losses),
        last(&adapt_losses),
    )?;
    Ok(outcome)
}

/// Recomputed per-seed records plus an aggregate block, as one printable
/// report.
pub fn report_text(dir: &Path) -> Result<String> {
    let mut out = String::new();
    let mut outcomes = Vec::new();
    for (seed, seed_dir) in seed_dirs(dir)? {
        let outcome = recompute_seed(seed, &seed_dir)?;
        out.push_str(&metrics_record(&outcome));
        out.push('\n');
        outcomes.push(outcome);
    }
    out.push_str("aggregate\n");
    out.push_str(&format!("seeds = {}\n", outcomes.len()));
    let cols: [(&str, fn(&SeedOutcome) -> f64); 4] = [
        ("base_acc", |o| o.base_acc),
        ("novel_acc", |o| o.novel_acc),
        ("forgetting_percent", |o| o.forgetting_percent),
        ("confusion_percent", |o| o.confusion_percent),
    ];
    for (name, pick) in cols {
        let vals: Vec<f64> = outcomes.iter().map(pick).collect();
        out.push_str(&format!("{name}_mean = {:.6}\n", mean(&vals)));
        out.push_str(&format!("{name}_std = {:.6}\n", sample_std(&vals)));
    }
    Ok(out)
}

pub fn cmd_report(dir: &Path) -> Result<i32> {
    print!("{}", report_text(dir)?);
    Ok(0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cli::config::ExperimentConfig;
    use crate::synthdata::ConfusablePair;

    /// Quick config: small enough that a full two-stage run takes well
    /// under a second.
    pub(crate) fn quick_config(dir: &Path) -> ExperimentConfig {
        let mut cfg = ExperimentConfig::default();
        cfg.dataset.dim = 12;
        cfg.dataset.n_base = 3;
        cfg.dataset.n_novel = 2;
        cfg.dataset.samples_per_class = 40;
        cfg.dataset.eval_per_class = 20;
        cfg.dataset.min_angle_deg = 30.0;
        cfg.dataset.confusable = vec![ConfusablePair { a: 3, b: 4, angle_deg: 20.0 }];
        cfg.base_epochs = 30;
        cfg.adapt_epochs = 20;
        cfg.k = 5;
        cfg.seeds = vec![1, 2];
        cfg.jobs = 2;
        cfg.output_dir = dir.to_path_buf();
        cfg.validate().unwrap();
        cfg
    }

    #[test]
    fn derive_seed_separates_streams() {
        let s = derive_seed(1, SEED_DATA);
        assert_ne!(s, derive_seed(1, SEED_BASE));
        assert_ne!(s, derive_seed(2, SEED_DATA));
        assert_eq!(s, derive_seed(1, SEED_DATA));
    }

    #[test]
    fn log_csv_roundtrips_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("log.csv");
        let losses = vec![1.5, 0.25, 1.0 / 3.0, 6.02e-23];
        write_log_csv(&path, &losses).unwrap();
        assert_eq!(read_log_csv(&path).unwrap(), losses);

        std::fs::write(&path, "step,loss\n2,0.5\n").unwrap();
        assert!(read_log_csv(&path).is_err());
        std::fs::write(&path, "loss\n").unwrap();
        assert!(read_log_csv(&path).is_err());
    }

    #[test]
    fn summary_and_sweep_csv_roundtrip() {
        let rows = vec![
            SummaryRow {
                label: "1".into(),
                base_acc: 0.5,
                novel_acc: 0.25,
                forgetting_percent: 1.5,
                confusion_percent: 2.25,
            },
            SummaryRow {
                label: "mean".into(),
                base_acc: 0.5,
                novel_acc: 0.25,
                forgetting_percent: 1.5,
                confusion_percent: 2.25,
            },
        ];
        let text = summary_csv(&rows);
        assert_eq!(parse_summary_csv(&text, Path::new("inline")).unwrap(), rows);

        let srows = vec![
            SweepRow {
                parameter: "alpha".into(),
                value: "0.5".into(),
                base_acc: 0.75,
                novel_acc: 0.5,
            },
            SweepRow {
                parameter: "distance".into(),
                value: "cosine".into(),
                base_acc: 0.875,
                novel_acc: 0.625,
            },
        ];
        let text = sweep_csv(&srows);
        assert_eq!(parse_sweep_csv(&text, Path::new("inline")).unwrap(), srows);
        assert!(parse_sweep_csv("bogus\n", Path::new("inline")).is_err());
    }

    #[test]
    fn parallel_map_matches_serial_and_preserves_order() {
        let square = |i: usize| (i * i) as u64;
        assert_eq!(parallel_map(9, 4, square), (0..9).map(square).collect::<Vec<_>>());
        assert_eq!(parallel_map(0, 4, square), Vec::<u64>::new());
        assert_eq!(parallel_map(3, 1, square), vec![0, 1, 4]);
    }

    #[test]
    fn aggregate_rows_use_sample_std() {
        let mk = |seed: u64, base: f64| SeedOutcome {
            seed,
            overall_acc: base,
            base_acc: base,
            novel_acc: base / 2.0,
            background_acc: f64::NAN,
            confusion_percent: 1.0,
            base_acc_before: base,
            forgetting_percent: 0.0,
            final_base_loss: 0.1,
            final_adapt_loss: 0.1,
            cluster: None,
        };
        let rows = summarize(&[mk(1, 0.4), mk(2, 0.6)]);
        assert_eq!(rows.len(), 4);
        assert_eq!(rows[2].label, "mean");
        assert!((rows[2].base_acc - 0.5).abs() < 1e-12);
        // sample std of {0.4, 0.6} = |0.2|/√2 · √2 = 0.1414…
        let expected = ((0.01f64 + 0.01) / 1.0).sqrt();
        assert!((rows[3].base_acc - expected).abs() < 1e-12);
    }

    #[test]
    fn grid_cells_override_one_knob_each() {
        let cfg = ExperimentConfig::default();
        let cells = SweepGrid::default().cells(&cfg);
        assert_eq!(cells.len(), 14);
        assert_eq!(cells.iter().filter(|c| c.parameter == "alpha").count(), 5);
        assert_eq!(cells.iter().filter(|c| c.parameter == "distance").count(), 3);
        assert_eq!(cells.iter().filter(|c| c.parameter == "margin").count(), 6);
        for cell in &cells {
            cell.cfg.validate().unwrap();
            match cell.parameter {
                "alpha" => {
                    assert_eq!(cell.cfg.margin, cfg.margin);
                    assert_eq!(cell.cfg.metric, cfg.metric);
                }
                "distance" => {
                    assert_eq!(cell.cfg.alpha, cfg.alpha);
                    assert_eq!(cell.cfg.margin, cfg.margin);
                }
                "margin" => {
                    assert_eq!(cell.cfg.alpha, cfg.alpha);
                    assert_eq!(cell.cfg.metric, cfg.metric);
                }
                other => panic!("unexpected parameter {other}"),
            }
        }
        assert_eq!(cells[0].dir_name(), "alpha_0.5");
        assert_eq!(cells[5].dir_name(), "distance_neg-euclidean");
    }

    #[test]
    fn run_writes_artifacts_and_report_recomputes_them() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = quick_config(&dir.path().join("exp"));
        assert_eq!(cmd_run(&cfg).unwrap(), 0);
        let out = resolve_output_dir(&cfg.output_dir);

        let echoed = ExperimentConfig::load(&out.join("config.effective.txt")).unwrap();
        assert_eq!(echoed, cfg);

        let summary = parse_summary_csv(
            &std::fs::read_to_string(out.join("summary.csv")).unwrap(),
            Path::new("summary.csv"),
        )
        .unwrap();
        assert_eq!(summary.len(), cfg.seeds.len() + 2);
        assert_eq!(summary[2].label, "mean");

        for seed in &cfg.seeds {
            let sd = out.join(format!("seed_{seed}"));
            for file in [
                "base_log.csv",
                "adapt_log.csv",
                "head_base.bin",
                "head_adapted.bin",
                "eval.csv",
                "confusion.csv",
                "metrics.txt",
            ] {
                assert!(sd.join(file).exists(), "missing {file} for seed {seed}");
            }
            let cm = ConfusionMatrix::parse_csv(
                &std::fs::read_to_string(sd.join("confusion.csv")).unwrap(),
                Path::new("confusion.csv"),
            )
            .unwrap();
            assert_eq!(cm.n_real_classes, 5);
        }

        // report reproduces the stored metrics records verbatim
        let text = report_text(&out).unwrap();
        for seed in &cfg.seeds {
            let stored =
                std::fs::read_to_string(out.join(format!("seed_{seed}/metrics.txt"))).unwrap();
            assert!(text.contains(&stored), "report drifted for seed {seed}");
        }
        assert!(text.contains("aggregate\nseeds = 2\n"));
    }

    #[test]
    fn degenerate_sweep_cell_matches_run() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = quick_config(&dir.path().join("exp"));
        cfg.seeds = vec![3];

        let run_outcome = run_seed(&cfg, 3, None).unwrap();

        let grid = SweepGrid {
            alphas: vec![cfg.alpha],
            metrics: vec![],
            margins: vec![],
        };
        let cells = grid.cells(&cfg);
        assert_eq!(cells.len(), 1);
        cfg.output_dir = dir.path().join("sweep");
        assert_eq!(cmd_sweep(&cfg, &cells).unwrap(), 0);

        let rows = parse_sweep_csv(
            &std::fs::read_to_string(resolve_output_dir(&cfg.output_dir).join("sweep.csv"))
                .unwrap(),
            Path::new("sweep.csv"),
        )
        .unwrap();
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].parameter, "alpha");
        assert!((rows[0].base_acc - run_outcome.base_acc).abs() < 5e-7); // {:.6} rounding
        assert!((rows[0].novel_acc - run_outcome.novel_acc).abs() < 5e-7);
    }

    #[test]
    fn datagen_emits_loadable_splits() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = quick_config(dir.path());
        assert_eq!(cmd_datagen(&cfg, 1, dir.path()).unwrap(), 0);
        let pool =
            synthdata::load_csv(&dir.path().join("support_pool.csv"), SplitKind::SupportPool)
                .unwrap();
        assert_eq!(pool.n_real_classes, 5);
        // identical to what run_seed consumes for the same seed
        let direct = generate(&cfg.dataset, derive_seed(1, SEED_DATA)).unwrap();
        assert_eq!(pool.features, direct.support_pool.features);
    }
}
