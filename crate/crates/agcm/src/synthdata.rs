//! Synthetic proposal embeddings with controlled class geometry.
//!
//! Classes live as unit-sphere means kept at least a minimum angle apart;
//! designated confusable pairs are instead placed at an exact, usually
//! smaller, angle to give the margin something to work against. Samples are
//! means plus isotropic noise, renormalized; background proposals are
//! uniform directions with no cluster structure at all.
//!
//! One generation call yields the three splits of the two-stage protocol —
//! base training, the support pool shots are drawn from, and a held-out
//! evaluation split — all sharing one set of class means.

use std::io::{BufRead, BufWriter, Write as _};
use std::path::Path;

use ndarray::{Array1, Array2};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::diffcore::EPS_NORM;
use crate::error::{AgcmError, Result};

const PLACEMENT_ATTEMPTS: usize = 10_000;

/// Class assignment of one proposal. Foreground classes are dense indices;
/// the background is its own marker and serializes as `-1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Label {
    Class(usize),
    Background,
}

impl Label {
    /// Row index in a weight matrix with the background last.
    pub fn index(self, n_real_classes: usize) -> usize {
        match self {
            Label::Class(c) => c,
            Label::Background => n_real_classes,
        }
    }

    pub fn from_index(index: usize, n_real_classes: usize) -> Label {
        if index == n_real_classes {
            Label::Background
        } else {
            Label::Class(index)
        }
    }
}

/// Which leg of the protocol a dataset belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitKind {
    BaseTrain,
    SupportPool,
    Eval,
}

impl SplitKind {
    pub fn name(self) -> &'static str {
        match self {
            SplitKind::BaseTrain => "base-train",
            SplitKind::SupportPool => "support-pool",
            SplitKind::Eval => "eval",
        }
    }
}

/// Two classes pinned at an exact angular separation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConfusablePair {
    pub a: usize,
    pub b: usize,
    pub angle_deg: f64,
}

/// Generation settings for one experiment's data.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSpec {
    pub dim: usize,
    pub n_base: usize,
    pub n_novel: usize,
    /// Per-class size of the base-train and support-pool splits.
    pub samples_per_class: usize,
    /// Per-class size of the evaluation split.
    pub eval_per_class: usize,
    /// Expected total noise magnitude around a class mean; spread over
    /// coordinates as `σ/√d` so it doesn't grow with dimension.
    pub intra_sigma: f64,
    /// Minimum pairwise angle between class means, confusable pairs aside.
    pub min_angle_deg: f64,
    pub confusable: Vec<ConfusablePair>,
    /// Background proposals per real proposal, applied split by split.
    pub background_rate: f64,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        DatasetSpec {
            dim: 32,
            n_base: 7,
            n_novel: 3,
            samples_per_class: 500,
            eval_per_class: 100,
            intra_sigma: 0.25,
            min_angle_deg: 25.0,
            confusable: vec![ConfusablePair { a: 6, b: 7, angle_deg: 12.0 }],
            background_rate: 0.1,
        }
    }
}

impl DatasetSpec {
    pub fn n_real_classes(&self) -> usize {
        self.n_base + self.n_novel
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(AgcmError::InvalidConfig(msg));
        if self.dim < 2 {
            return bad(format!("dim {} too small (need at least 2)", self.dim));
        }
        if self.n_base == 0 {
            return bad("need at least one base class".into());
        }
        if self.samples_per_class == 0 || self.eval_per_class == 0 {
            return bad("per-class sample counts must be positive".into());
        }
        if !self.intra_sigma.is_finite() || self.intra_sigma < 0.0 {
            return bad(format!("intra-class sigma {} invalid", self.intra_sigma));
        }
        if !(self.min_angle_deg > 0.0 && self.min_angle_deg < 180.0) {
            return bad(format!("min angle {}° outside (0, 180)", self.min_angle_deg));
        }
        if !(0.0..=10.0).contains(&self.background_rate) {
            return bad(format!("background rate {} outside [0, 10]", self.background_rate));
        }
        let n_real = self.n_real_classes();
        let mut seen = vec![false; n_real];
        for pair in &self.confusable {
            if pair.a >= n_real || pair.b >= n_real {
                return bad(format!(
                    "confusable pair {}:{} references a class outside 0..{n_real}",
                    pair.a, pair.b
                ));
            }
            if pair.a == pair.b {
                return bad(format!("confusable pair {}:{} is degenerate", pair.a, pair.b));
            }
            if !(pair.angle_deg > 0.0 && pair.angle_deg < 180.0) {
                return bad(format!("confusable angle {}° outside (0, 180)", pair.angle_deg));
            }
            for c in [pair.a, pair.b] {
                if seen[c] {
                    return bad(format!("class {c} appears in more than one confusable pair"));
                }
                seen[c] = true;
            }
        }
        Ok(())
    }
}

/// Labeled embeddings for one split.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub features: Array2<f64>,
    pub labels: Vec<Label>,
    /// Foreground classes this dataset's labels may reference.
    pub n_real_classes: usize,
    pub split: SplitKind,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.features.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }

    /// Label groups: one per foreground class plus background, in weight-row
    /// order.
    pub fn n_groups(&self) -> usize {
        self.n_real_classes + 1
    }

    /// Weight-row index per sample.
    pub fn label_indices(&self) -> Vec<usize> {
        self.labels.iter().map(|l| l.index(self.n_real_classes)).collect()
    }

    /// Sample positions per label group, background last.
    pub fn indices_by_group(&self) -> Vec<Vec<usize>> {
        let mut groups = vec![Vec::new(); self.n_groups()];
        for (i, label) in self.labels.iter().enumerate() {
            groups[label.index(self.n_real_classes)].push(i);
        }
        groups
    }

    pub fn group_counts(&self) -> Vec<usize> {
        self.indices_by_group().iter().map(|g| g.len()).collect()
    }
}

/// The three splits of one generated experiment, plus the means they share.
#[derive(Debug, Clone)]
pub struct SyntheticData {
    pub base_train: Dataset,
    pub support_pool: Dataset,
    pub eval: Dataset,
    pub class_means: Array2<f64>,
}

fn standard_normal_vec(rng: &mut ChaCha8Rng, d: usize) -> Array1<f64> {
    Array1::from_iter((0..d).map(|_| rng.sample::<f64, _>(StandardNormal)))
}

fn uniform_unit(rng: &mut ChaCha8Rng, d: usize) -> Array1<f64> {
    loop {
        let v = standard_normal_vec(rng, d);
        let n = v.dot(&v).sqrt();
        if n > 1e-6 {
            return v.mapv(|x| x / n);
        }
    }
}

fn angle_deg_between(u: &Array1<f64>, v: &Array1<f64>) -> f64 {
    u.dot(v).clamp(-1.0, 1.0).acos().to_degrees()
}

/// Places all class means: free classes and pair anchors by rejection
/// against the minimum angle, then each pair partner at its exact angle.
fn place_means(spec: &DatasetSpec, rng: &mut ChaCha8Rng) -> Result<Array2<f64>> {
    let n_real = spec.n_real_classes();
    let mut partner_of = vec![None; n_real];
    let mut is_partner = vec![false; n_real];
    for pair in &spec.confusable {
        partner_of[pair.b] = Some((pair.a, pair.angle_deg));
        is_partner[pair.b] = true;
    }

    let mut means: Vec<Option<Array1<f64>>> = vec![None; n_real];
    let placed_so_far = |means: &[Option<Array1<f64>>]| means.iter().flatten().count();

    // Free means and pair anchors first; partners depend on their anchor.
    for c in 0..n_real {
        if is_partner[c] {
            continue;
        }
        let mut accepted = None;
        for _ in 0..PLACEMENT_ATTEMPTS {
            let candidate = uniform_unit(rng, spec.dim);
            let ok = means
                .iter()
                .flatten()
                .all(|m| angle_deg_between(&candidate, m) >= spec.min_angle_deg);
            if ok {
                accepted = Some(candidate);
                break;
            }
        }
        match accepted {
            Some(m) => means[c] = Some(m),
            None => {
                return Err(AgcmError::InfeasibleSeparation {
                    placed: placed_so_far(&means),
                    attempts: PLACEMENT_ATTEMPTS,
                })
            }
        }
    }
    for c in 0..n_real {
        let Some((anchor, angle_deg)) = partner_of[c] else { continue };
        let m_a = means[anchor].clone().expect("anchor placed before partner");
        let (sin_t, cos_t) = angle_deg.to_radians().sin_cos();
        let mut accepted = None;
        for _ in 0..PLACEMENT_ATTEMPTS {
            // random unit direction orthogonal to the anchor
            let g = standard_normal_vec(rng, spec.dim);
            let mut u = &g - &m_a.mapv(|x| x * g.dot(&m_a));
            let n = u.dot(&u).sqrt();
            if n < 1e-6 {
                continue;
            }
            u.mapv_inplace(|x| x / n);
            let candidate = m_a.mapv(|x| cos_t * x) + u.mapv(|x| sin_t * x);
            let ok = means.iter().enumerate().all(|(other, m)| match m {
                Some(m) if other != anchor => {
                    angle_deg_between(&candidate, m) >= spec.min_angle_deg
                }
                _ => true,
            });
            if ok {
                accepted = Some(candidate);
                break;
            }
        }
        match accepted {
            Some(m) => means[c] = Some(m),
            None => {
                return Err(AgcmError::InfeasibleSeparation {
                    placed: placed_so_far(&means),
                    attempts: PLACEMENT_ATTEMPTS,
                })
            }
        }
    }

    let mut out = Array2::zeros((n_real, spec.dim));
    for (c, m) in means.into_iter().enumerate() {
        out.row_mut(c).assign(&m.expect("all means placed"));
    }
    Ok(out)
}

fn noisy_sample(rng: &mut ChaCha8Rng, mean: ndarray::ArrayView1<'_, f64>, per_coord: f64) -> Array1<f64> {
    loop {
        let noise = standard_normal_vec(rng, mean.len());
        let raw = &mean.to_owned() + &noise.mapv(|x| per_coord * x);
        let n = raw.dot(&raw).sqrt();
        if n > EPS_NORM {
            return raw.mapv(|x| x / n);
        }
    }
}

/// One split: a block of samples per listed class, then the background
/// block sized by the rate.
fn generate_split(
    spec: &DatasetSpec,
    means: &Array2<f64>,
    classes: std::ops::Range<usize>,
    per_class: usize,
    split: SplitKind,
    rng: &mut ChaCha8Rng,
) -> Dataset {
    let per_coord = spec.intra_sigma / (spec.dim as f64).sqrt();
    let n_real_present = classes.len();
    let n_bg = (spec.background_rate * (n_real_present * per_class) as f64).round() as usize;
    let total = n_real_present * per_class + n_bg;
    let mut features = Array2::zeros((total, spec.dim));
    let mut labels = Vec::with_capacity(total);
    let mut row = 0;
    for c in classes.clone() {
        for _ in 0..per_class {
            features.row_mut(row).assign(&noisy_sample(rng, means.row(c), per_coord));
            labels.push(Label::Class(c));
            row += 1;
        }
    }
    for _ in 0..n_bg {
        features.row_mut(row).assign(&uniform_unit(rng, spec.dim));
        labels.push(Label::Background);
        row += 1;
    }
    let n_real_classes = classes.end;
    Dataset { features, labels, n_real_classes, split }
}

/// Generates the base-train, support-pool, and eval splits from one seed.
pub fn generate(spec: &DatasetSpec, seed: u64) -> Result<SyntheticData> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let means = place_means(spec, &mut rng)?;
    let n_real = spec.n_real_classes();
    let base_train = generate_split(
        spec,
        &means,
        0..spec.n_base,
        spec.samples_per_class,
        SplitKind::BaseTrain,
        &mut rng,
    );
    let support_pool = generate_split(
        spec,
        &means,
        0..n_real,
        spec.samples_per_class,
        SplitKind::SupportPool,
        &mut rng,
    );
    let eval = generate_split(
        spec,
        &means,
        0..n_real,
        spec.eval_per_class,
        SplitKind::Eval,
        &mut rng,
    );
    Ok(SyntheticData { base_train, support_pool, eval, class_means: means })
}

/// Exactly `k` samples per label group — every foreground class and the
/// background — drawn without replacement.
pub fn kshot_sample(dataset: &Dataset, k: usize, seed: u64) -> Result<Dataset> {
    if k == 0 {
        return Err(AgcmError::InvalidConfig("shot count must be positive".into()));
    }
    if dataset.is_empty() {
        return Err(AgcmError::EmptyDataset);
    }
    let groups = dataset.indices_by_group();
    for (g, members) in groups.iter().enumerate() {
        if members.len() < k {
            let class = if g == dataset.n_real_classes {
                "background".to_string()
            } else {
                format!("class {g}")
            };
            return Err(AgcmError::ShotCountMismatch { class, expected: k, got: members.len() });
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut features = Array2::zeros((groups.len() * k, dataset.dim()));
    let mut labels = Vec::with_capacity(groups.len() * k);
    let mut row = 0;
    for members in &groups {
        let picks = rand::seq::index::sample(&mut rng, members.len(), k);
        for p in picks.iter() {
            let src = members[p];
            features.row_mut(row).assign(&dataset.features.row(src));
            labels.push(dataset.labels[src]);
            row += 1;
        }
    }
    Ok(Dataset { features, labels, n_real_classes: dataset.n_real_classes, split: dataset.split })
}

/// Writes `label,x0,x1,…` rows; background is `-1`. Values are printed with
/// enough digits to round-trip exactly.
pub fn save_csv(dataset: &Dataset, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| AgcmError::io(path, e))?;
    let mut w = BufWriter::new(file);
    let mut write = |line: &str| w.write_all(line.as_bytes()).map_err(|e| AgcmError::io(path, e));
    let mut header = String::from("label");
    for j in 0..dataset.dim() {
        header.push_str(&format!(",x{j}"));
    }
    header.push('\n');
    write(&header)?;
    for (i, label) in dataset.labels.iter().enumerate() {
        let tag: i64 = match label {
            Label::Class(c) => *c as i64,
            Label::Background => -1,
        };
        let mut line = tag.to_string();
        for v in dataset.features.row(i).iter() {
            line.push_str(&format!(",{v:.16e}"));
        }
        line.push('\n');
        write(&line)?;
    }
    w.flush().map_err(|e| AgcmError::io(path, e))
}

/// Reads a dataset written by [`save_csv`]. The foreground class count is
/// taken as one past the largest class index present.
pub fn load_csv(path: &Path, split: SplitKind) -> Result<Dataset> {
    let file = std::fs::File::open(path).map_err(|e| AgcmError::io(path, e))?;
    let reader = std::io::BufReader::new(file);
    let mut labels = Vec::new();
    let mut values: Vec<f64> = Vec::new();
    let mut dim = 0usize;
    for (line_no, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| AgcmError::io(path, e))?;
        let line_no = line_no + 1;
        if line_no == 1 {
            let mut cols = line.split(',');
            if cols.next().map(str::trim) != Some("label") {
                return Err(AgcmError::parse(path, 1, "missing `label,x0,…` header"));
            }
            dim = cols.count();
            if dim == 0 {
                return Err(AgcmError::parse(path, 1, "header lists no coordinates"));
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let mut fields = line.split(',');
        let label_field = fields.next().unwrap();
        let tag: i64 = label_field
            .trim()
            .parse()
            .map_err(|_| AgcmError::parse(path, line_no, &format!("bad label '{label_field}'")))?;
        let label = match tag {
            -1 => Label::Background,
            t if t >= 0 => Label::Class(t as usize),
            t => {
                return Err(AgcmError::parse(path, line_no, &format!("negative label {t}")));
            }
        };
        let mut row = Vec::new();
        for field in fields {
            let v: f64 = field.trim().parse().map_err(|_| {
                AgcmError::parse(path, line_no, &format!("bad value '{field}'"))
            })?;
            if !v.is_finite() {
                return Err(AgcmError::parse(path, line_no, "non-finite value"));
            }
            row.push(v);
        }
        if row.len() != dim {
            return Err(AgcmError::parse(
                path,
                line_no,
                &format!("row holds {} values, expected {dim}", row.len()),
            ));
        }
        labels.push(label);
        values.extend_from_slice(&row);
    }
    if labels.is_empty() {
        return Err(AgcmError::EmptyDataset);
    }
    let features = Array2::from_shape_vec((labels.len(), dim), values).expect("row count checked");
    let n_real_classes = labels
        .iter()
        .filter_map(|l| match l {
            Label::Class(c) => Some(c + 1),
            Label::Background => None,
        })
        .max()
        .unwrap_or(0);
    Ok(Dataset { features, labels, n_real_classes, split })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_spec() -> DatasetSpec {
        DatasetSpec {
            dim: 16,
            n_base: 4,
            n_novel: 2,
            samples_per_class: 30,
            eval_per_class: 20,
            intra_sigma: 0.25,
            min_angle_deg: 25.0,
            confusable: vec![ConfusablePair { a: 3, b: 4, angle_deg: 12.0 }],
            background_rate: 0.1,
        }
    }

    #[test]
    fn generation_is_seeded() {
        let spec = small_spec();
        let a = generate(&spec, 42).unwrap();
        let b = generate(&spec, 42).unwrap();
        assert_eq!(a.base_train.features, b.base_train.features);
        assert_eq!(a.support_pool.features, b.support_pool.features);
        assert_eq!(a.eval.features, b.eval.features);
        assert_eq!(a.class_means, b.class_means);
        let c = generate(&spec, 43).unwrap();
        assert_ne!(a.class_means, c.class_means);
    }

    #[test]
    fn split_shapes_and_label_blocks() {
        let spec = small_spec();
        let data = generate(&spec, 7).unwrap();

        // base-train: base classes only, 10% background on 120 real rows
        assert_eq!(data.base_train.len(), 4 * 30 + 12);
        assert_eq!(data.base_train.n_real_classes, 4);
        assert_eq!(data.base_train.group_counts(), vec![30, 30, 30, 30, 12]);

        // support pool and eval span all six classes
        assert_eq!(data.support_pool.len(), 6 * 30 + 18);
        assert_eq!(data.support_pool.n_real_classes, 6);
        assert_eq!(data.eval.len(), 6 * 20 + 12);
        assert_eq!(data.eval.group_counts(), vec![20; 6].into_iter().chain([12]).collect::<Vec<_>>());

        for ds in [&data.base_train, &data.support_pool, &data.eval] {
            for row in ds.features.rows() {
                let n = row.dot(&row).sqrt();
                assert!((n - 1.0).abs() < 1e-12, "sample off the unit sphere");
            }
        }
    }

    #[test]
    fn means_respect_angles() {
        let spec = small_spec();
        let data = generate(&spec, 11).unwrap();
        let m = &data.class_means;
        for i in 0..6 {
            let row = m.row(i).to_owned();
            assert!((row.dot(&row).sqrt() - 1.0).abs() < 1e-12);
            for j in i + 1..6 {
                let angle = angle_deg_between(&row, &m.row(j).to_owned());
                if (i, j) == (3, 4) {
                    assert!((angle - 12.0).abs() < 1e-9, "confusable pair at {angle}°");
                } else {
                    assert!(angle >= 25.0 - 1e-9, "means {i},{j} only {angle}° apart");
                }
            }
        }
    }

    #[test]
    fn infeasible_packing_reports() {
        // ten means on a circle with 60° spacing cannot fit
        let spec = DatasetSpec {
            dim: 2,
            n_base: 10,
            n_novel: 0,
            samples_per_class: 1,
            eval_per_class: 1,
            intra_sigma: 0.1,
            min_angle_deg: 60.0,
            confusable: vec![],
            background_rate: 0.0,
        };
        assert!(matches!(
            generate(&spec, 3),
            Err(AgcmError::InfeasibleSeparation { .. })
        ));
    }

    #[test]
    fn sigma_controls_cluster_tightness() {
        let mut spec = small_spec();
        spec.confusable.clear();
        spec.samples_per_class = 100;
        let mean_self_cos = |sigma: f64, seed: u64| -> f64 {
            let mut s = spec.clone();
            s.intra_sigma = sigma;
            let data = generate(&s, seed).unwrap();
            let ds = &data.base_train;
            let mut total = 0.0;
            let mut count = 0;
            for (i, label) in ds.labels.iter().enumerate() {
                if let Label::Class(c) = label {
                    total += ds.features.row(i).dot(&data.class_means.row(*c));
                    count += 1;
                }
            }
            total / count as f64
        };
        let tight = mean_self_cos(0.05, 5);
        let medium = mean_self_cos(0.25, 5);
        let loose = mean_self_cos(0.8, 5);
        assert!(tight > 0.995, "σ=0.05 gave mean self-cosine {tight}");
        assert!(medium > 0.93, "σ=0.25 gave mean self-cosine {medium}");
        assert!(tight > medium && medium > loose);
    }

    #[test]
    fn samples_sit_nearest_their_own_mean() {
        let mut spec = small_spec();
        spec.confusable.clear(); // the 12° pair would legitimately overlap
        let data = generate(&spec, 9).unwrap();
        let ds = &data.base_train;
        let mut correct = 0;
        let mut real = 0;
        for (i, label) in ds.labels.iter().enumerate() {
            let Label::Class(c) = label else { continue };
            real += 1;
            let x = ds.features.row(i);
            let mut best = 0;
            for k in 1..spec.n_real_classes() {
                if x.dot(&data.class_means.row(k)) > x.dot(&data.class_means.row(best)) {
                    best = k;
                }
            }
            if best == *c {
                correct += 1;
            }
        }
        assert!(correct as f64 / real as f64 > 0.95);
    }

    #[test]
    fn kshot_draws_exactly_k_per_group() {
        let spec = small_spec();
        let data = generate(&spec, 13).unwrap();
        let shots = kshot_sample(&data.support_pool, 5, 99).unwrap();
        assert_eq!(shots.group_counts(), vec![5; 7]);
        assert_eq!(shots.n_real_classes, 6);

        // every drawn row exists in the pool
        for i in 0..shots.len() {
            let row = shots.features.row(i);
            let found = data
                .support_pool
                .features
                .rows()
                .into_iter()
                .any(|r| r == row);
            assert!(found);
        }

        let again = kshot_sample(&data.support_pool, 5, 99).unwrap();
        assert_eq!(shots.features, again.features);
        let other = kshot_sample(&data.support_pool, 5, 100).unwrap();
        assert_ne!(shots.features, other.features);
    }

    #[test]
    fn kshot_rejects_thin_groups() {
        let spec = small_spec();
        let data = generate(&spec, 17).unwrap();
        // background group holds 18 rows; ask for more
        let err = kshot_sample(&data.support_pool, 19, 1).unwrap_err();
        match err {
            AgcmError::ShotCountMismatch { class, expected, got } => {
                assert_eq!(class, "background");
                assert_eq!(expected, 19);
                assert_eq!(got, 18);
            }
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn csv_roundtrip_is_exact() {
        let spec = small_spec();
        let data = generate(&spec, 21).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("eval.csv");
        save_csv(&data.eval, &path).unwrap();
        let loaded = load_csv(&path, SplitKind::Eval).unwrap();
        assert_eq!(loaded.features, data.eval.features);
        assert_eq!(loaded.labels, data.eval.labels);
        assert_eq!(loaded.n_real_classes, data.eval.n_real_classes);
    }

    #[test]
    fn csv_parse_errors_carry_line_numbers() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csv");

        std::fs::write(&path, "label,x0,x1\n0,1.0,2.0\nfoo,1.0,2.0\n").unwrap();
        match load_csv(&path, SplitKind::Eval) {
            Err(AgcmError::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected parse error, got {other:?}"),
        }

        std::fs::write(&path, "label,x0,x1\n0,1.0\n").unwrap();
        assert!(load_csv(&path, SplitKind::Eval).is_err());

        std::fs::write(&path, "label,x0,x1\n0,1.0,2.0\n1,1.0,inf\n").unwrap();
        assert!(matches!(load_csv(&path, SplitKind::Eval), Err(AgcmError::Parse { line: 3, .. })));

        std::fs::write(&path, "label,x0,x1\n-2,1.0,2.0\n").unwrap();
        assert!(matches!(load_csv(&path, SplitKind::Eval), Err(AgcmError::Parse { line: 2, .. })));

        std::fs::write(&path, "x0,x1\n").unwrap();
        assert!(matches!(load_csv(&path, SplitKind::Eval), Err(AgcmError::Parse { line: 1, .. })));

        std::fs::write(&path, "label,x0,x1\n").unwrap();
        assert!(matches!(load_csv(&path, SplitKind::Eval), Err(AgcmError::EmptyDataset)));
    }

    #[test]
    fn spec_validation_catches_bad_pairs() {
        let mut spec = small_spec();
        spec.confusable = vec![ConfusablePair { a: 3, b: 9, angle_deg: 12.0 }];
        assert!(spec.validate().is_err());
        spec.confusable = vec![ConfusablePair { a: 3, b: 3, angle_deg: 12.0 }];
        assert!(spec.validate().is_err());
        spec.confusable = vec![
            ConfusablePair { a: 0, b: 1, angle_deg: 12.0 },
            ConfusablePair { a: 1, b: 2, angle_deg: 15.0 },
        ];
        assert!(spec.validate().is_err());
        spec.confusable = vec![
            ConfusablePair { a: 0, b: 1, angle_deg: 12.0 },
            ConfusablePair { a: 2, b: 3, angle_deg: 15.0 },
        ];
        assert!(spec.validate().is_ok());
    }

    #[test]
    fn label_index_mapping() {
        assert_eq!(Label::Class(3).index(7), 3);
        assert_eq!(Label::Background.index(7), 7);
        assert_eq!(Label::from_index(7, 7), Label::Background);
        assert_eq!(Label::from_index(2, 7), Label::Class(2));
    }
}
