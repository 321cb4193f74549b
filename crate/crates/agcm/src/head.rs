//! Trainable classification head.
//!
//! Pipeline: input embeddings are projected through a learned affine map,
//! refined by attentive fusion, and scored against per-class weight vectors
//! under the cosine-margin objective. The class weight matrix keeps the
//! background row last; growing the head for novel classes inserts their
//! rows before it so base-class indices stay stable.

use std::io::{Read as _, Write as _};
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::apf::{fuse, fuse_vjp, FusionConfig};
use crate::diffcore::SimMetric;
use crate::error::{AgcmError, Result};
use crate::margin_loss::{class_cosines, loss_forward, loss_vjp, MarginLossConfig};

const MAGIC: &[u8; 8] = b"AGCMHEAD";
const FORMAT_VERSION: u32 = 1;

/// Classifier state: affine projection into feature space plus one weight
/// row per class, background last.
#[derive(Debug, Clone)]
pub struct ClassifierHead {
    /// `d_in × d_feat`.
    pub projection: Array2<f64>,
    /// `d_feat`.
    pub bias: Array1<f64>,
    /// `n_classes × d_feat`; the final row is the background class.
    pub class_weights: Array2<f64>,
    pub background_index: usize,
    pub fusion: FusionConfig,
    pub loss_cfg: MarginLossConfig,
}

/// Parameter cotangents from one training step, shaped like the head.
#[derive(Debug, Clone)]
pub struct HeadGradients {
    pub projection: Array2<f64>,
    pub bias: Array1<f64>,
    pub class_weights: Array2<f64>,
}

/// Nearest class by cosine for one sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    pub class_index: usize,
    pub cosine: f64,
}

fn unit_row(rng: &mut ChaCha8Rng, d: usize) -> Array1<f64> {
    loop {
        let v = Array1::from_iter((0..d).map(|_| rng.sample::<f64, _>(StandardNormal)));
        let n = v.dot(&v).sqrt();
        if n > 1e-6 {
            return v.mapv(|x| x / n);
        }
    }
}

impl ClassifierHead {
    /// Fresh head for `n_real_classes` foreground classes plus background.
    /// The projection starts uniform in `±1/√d_in`, the bias at zero, and
    /// every class weight as a random unit vector.
    pub fn init(
        d_in: usize,
        d_feat: usize,
        n_real_classes: usize,
        fusion: FusionConfig,
        margin: f64,
        beta: f64,
        seed: u64,
    ) -> Result<Self> {
        if d_in == 0 || d_feat == 0 || n_real_classes == 0 {
            return Err(AgcmError::InvalidConfig(
                "head dimensions and class count must be positive".into(),
            ));
        }
        fusion.validate()?;
        let n_classes = n_real_classes + 1;
        let loss_cfg = MarginLossConfig { margin, beta, background_index: n_real_classes };
        loss_cfg.validate(n_classes)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bound = 1.0 / (d_in as f64).sqrt();
        let projection =
            Array2::from_shape_fn((d_in, d_feat), |_| rng.random_range(-bound..bound));
        let bias = Array1::zeros(d_feat);
        let mut class_weights = Array2::zeros((n_classes, d_feat));
        for mut row in class_weights.rows_mut() {
            row.assign(&unit_row(&mut rng, d_feat));
        }
        Ok(ClassifierHead {
            projection,
            bias,
            class_weights,
            background_index: n_real_classes,
            fusion,
            loss_cfg,
        })
    }

    pub fn d_in(&self) -> usize {
        self.projection.nrows()
    }

    pub fn d_feat(&self) -> usize {
        self.projection.ncols()
    }

    pub fn n_classes(&self) -> usize {
        self.class_weights.nrows()
    }

    pub fn n_real_classes(&self) -> usize {
        self.n_classes() - 1
    }

    fn check_input(&self, x: ArrayView2<'_, f64>) -> Result<()> {
        if x.ncols() != self.d_in() {
            return Err(AgcmError::DimensionMismatch { expected: self.d_in(), got: x.ncols() });
        }
        if x.nrows() == 0 {
            return Err(AgcmError::EmptyBatch);
        }
        Ok(())
    }

    /// Affine projection into feature space.
    pub fn project(&self, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        self.check_input(x)?;
        Ok(x.dot(&self.projection) + &self.bias)
    }

    /// Loss and parameter cotangents for one labeled batch, with fusion in
    /// the training path.
    pub fn forward_train(
        &self,
        x: ArrayView2<'_, f64>,
        labels: &[usize],
    ) -> Result<(f64, HeadGradients)> {
        let proposals = self.project(x)?;
        let fused = fuse(proposals.view(), &self.fusion)?;
        let (loss, fused_bar, weights_bar) =
            loss_vjp(fused.view(), self.class_weights.view(), labels, &self.loss_cfg)?;
        let proposals_bar = fuse_vjp(proposals.view(), fused_bar.view(), &self.fusion)?;
        let projection_bar = x.t().dot(&proposals_bar);
        let bias_bar = proposals_bar.sum_axis(Axis(0));
        Ok((
            loss,
            HeadGradients {
                projection: projection_bar,
                bias: bias_bar,
                class_weights: weights_bar,
            },
        ))
    }

    /// Training loss without gradients.
    pub fn loss_eval(&self, x: ArrayView2<'_, f64>, labels: &[usize]) -> Result<f64> {
        let proposals = self.project(x)?;
        let fused = fuse(proposals.view(), &self.fusion)?;
        let table = class_cosines(fused.view(), self.class_weights.view())?;
        loss_forward(&table, labels, &self.loss_cfg)
    }

    fn predict_features(&self, features: ArrayView2<'_, f64>) -> Result<Vec<Prediction>> {
        let table = class_cosines(features, self.class_weights.view())?;
        Ok(table
            .cosines
            .rows()
            .into_iter()
            .map(|row| {
                let mut best = 0;
                for (j, v) in row.iter().enumerate() {
                    if *v > row[best] {
                        best = j;
                    }
                }
                Prediction { class_index: best, cosine: row[best] }
            })
            .collect())
    }

    /// Nearest class by cosine; inference skips fusion.
    pub fn predict(&self, x: ArrayView2<'_, f64>) -> Result<Vec<Prediction>> {
        let features = self.project(x)?;
        self.predict_features(features.view())
    }

    /// Prediction with the fusion step kept in the path, for measuring what
    /// the blend contributes at evaluation time.
    pub fn predict_fused(&self, x: ArrayView2<'_, f64>) -> Result<Vec<Prediction>> {
        let proposals = self.project(x)?;
        let fused = fuse(proposals.view(), &self.fusion)?;
        self.predict_features(fused.view())
    }

    /// One gradient step. A frozen projection leaves the affine map (and
    /// its bias) untouched.
    pub fn apply_gradients(&mut self, grads: &HeadGradients, lr: f64, freeze_projection: bool) {
        if !freeze_projection {
            self.projection.zip_mut_with(&grads.projection, |p, g| *p -= lr * g);
            self.bias.zip_mut_with(&grads.bias, |b, g| *b -= lr * g);
        }
        self.class_weights.zip_mut_with(&grads.class_weights, |w, g| *w -= lr * g);
    }

    /// Head with `n_novel` extra foreground classes. Base rows keep their
    /// indices, novel rows are fresh unit vectors, the background row moves
    /// to stay last.
    pub fn expanded(&self, n_novel: usize, seed: u64) -> Result<ClassifierHead> {
        if n_novel == 0 {
            return Err(AgcmError::InvalidConfig("need at least one novel class".into()));
        }
        let old_real = self.n_real_classes();
        let total = old_real + n_novel + 1;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut class_weights = Array2::zeros((total, self.d_feat()));
        for i in 0..old_real {
            class_weights.row_mut(i).assign(&self.class_weights.row(i));
        }
        for i in old_real..old_real + n_novel {
            class_weights.row_mut(i).assign(&unit_row(&mut rng, self.d_feat()));
        }
        class_weights
            .row_mut(total - 1)
            .assign(&self.class_weights.row(self.background_index));
        let mut loss_cfg = self.loss_cfg;
        loss_cfg.background_index = total - 1;
        Ok(ClassifierHead {
            projection: self.projection.clone(),
            bias: self.bias.clone(),
            class_weights,
            background_index: total - 1,
            fusion: self.fusion,
            loss_cfg,
        })
    }

    /// Writes the versioned binary checkpoint plus a `<path>.txt` sidecar
    /// describing it in `key = value` lines.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf: Vec<u8> = Vec::new();
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        let metric_tag: u32 = match self.fusion.metric {
            SimMetric::Cosine => 0,
            SimMetric::NegEuclidean => 1,
            SimMetric::Pearson => 2,
        };
        buf.extend_from_slice(&metric_tag.to_le_bytes());
        let flags: u32 = if self.fusion.stop_attention_grad { 1 } else { 0 };
        buf.extend_from_slice(&flags.to_le_bytes());
        for dim in [self.d_in(), self.d_feat(), self.n_classes(), self.background_index] {
            buf.extend_from_slice(&(dim as u64).to_le_bytes());
        }
        for v in [self.fusion.alpha, self.loss_cfg.margin, self.loss_cfg.beta] {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        for v in self.projection.iter().chain(self.bias.iter()).chain(self.class_weights.iter()) {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        let mut file = std::fs::File::create(path).map_err(|e| AgcmError::io(path, e))?;
        file.write_all(&buf).map_err(|e| AgcmError::io(path, e))?;

        let sidecar_path = sidecar(path);
        let sidecar_text = format!(
            "format_version = {FORMAT_VERSION}\n\
             d_in = {}\n\
             d_feat = {}\n\
             n_classes = {}\n\
             background_index = {}\n\
             metric = {}\n\
             alpha = {}\n\
             margin = {}\n\
             beta = {}\n\
             stop_attention_grad = {}\n",
            self.d_in(),
            self.d_feat(),
            self.n_classes(),
            self.background_index,
            self.fusion.metric,
            self.fusion.alpha,
            self.loss_cfg.margin,
            self.loss_cfg.beta,
            self.fusion.stop_attention_grad,
        );
        std::fs::write(&sidecar_path, sidecar_text).map_err(|e| AgcmError::io(&sidecar_path, e))?;
        Ok(())
    }

    /// Reads a checkpoint written by [`ClassifierHead::save`]; the byte
    /// length must match the header exactly.
    pub fn load(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| AgcmError::io(path, e))?;
        let fail = |msg: &str| AgcmError::parse(path, 0, msg);
        let mut cur = Cursor { bytes: &bytes, at: 0 };
        if cur.take(8).ok_or_else(|| fail("truncated checkpoint"))? != MAGIC {
            return Err(fail("not a head checkpoint (bad magic)"));
        }
        let version = cur.u32().ok_or_else(|| fail("truncated checkpoint"))?;
        if version != FORMAT_VERSION {
            return Err(fail(&format!("unsupported checkpoint version {version}")));
        }
        let metric = match cur.u32().ok_or_else(|| fail("truncated checkpoint"))? {
            0 => SimMetric::Cosine,
            1 => SimMetric::NegEuclidean,
            2 => SimMetric::Pearson,
            t => return Err(fail(&format!("unknown metric tag {t}"))),
        };
        let flags = cur.u32().ok_or_else(|| fail("truncated checkpoint"))?;
        let mut dims = [0usize; 4];
        for d in dims.iter_mut() {
            *d = cur.u64().ok_or_else(|| fail("truncated checkpoint"))? as usize;
        }
        let [d_in, d_feat, n_classes, background_index] = dims;
        let alpha = cur.f64().ok_or_else(|| fail("truncated checkpoint"))?;
        let margin = cur.f64().ok_or_else(|| fail("truncated checkpoint"))?;
        let beta = cur.f64().ok_or_else(|| fail("truncated checkpoint"))?;

        if d_in == 0 || d_feat == 0 || n_classes < 2 || background_index != n_classes - 1 {
            return Err(fail("inconsistent checkpoint dimensions"));
        }
        let n_params = d_in * d_feat + d_feat + n_classes * d_feat;
        let expected_len = cur.at + 8 * n_params;
        if bytes.len() != expected_len {
            return Err(fail(&format!(
                "checkpoint holds {} bytes, header implies {expected_len}",
                bytes.len()
            )));
        }
        let mut values = Vec::with_capacity(n_params);
        for _ in 0..n_params {
            let v = cur.f64().ok_or_else(|| fail("truncated checkpoint"))?;
            if !v.is_finite() {
                return Err(fail("non-finite parameter"));
            }
            values.push(v);
        }
        let projection =
            Array2::from_shape_vec((d_in, d_feat), values[..d_in * d_feat].to_vec()).unwrap();
        let bias = Array1::from_vec(values[d_in * d_feat..d_in * d_feat + d_feat].to_vec());
        let class_weights = Array2::from_shape_vec(
            (n_classes, d_feat),
            values[d_in * d_feat + d_feat..].to_vec(),
        )
        .unwrap();

        let fusion = FusionConfig { alpha, metric, stop_attention_grad: flags & 1 != 0 };
        fusion.validate().map_err(|_| fail("checkpoint alpha outside [0.5, 1.0]"))?;
        let loss_cfg = MarginLossConfig { margin, beta, background_index };
        loss_cfg
            .validate(n_classes)
            .map_err(|_| fail("checkpoint margin/beta out of range"))?;
        Ok(ClassifierHead { projection, bias, class_weights, background_index, fusion, loss_cfg })
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        if self.at + n > self.bytes.len() {
            return None;
        }
        let s = &self.bytes[self.at..self.at + n];
        self.at += n;
        Some(s)
    }

    fn u32(&mut self) -> Option<u32> {
        self.take(4).map(|s| u32::from_le_bytes(s.try_into().unwrap()))
    }

    fn u64(&mut self) -> Option<u64> {
        self.take(8).map(|s| u64::from_le_bytes(s.try_into().unwrap()))
    }

    fn f64(&mut self) -> Option<f64> {
        self.take(8).map(|s| f64::from_le_bytes(s.try_into().unwrap()))
    }
}

/// Sidecar path for a checkpoint: `<path>.txt`.
pub fn sidecar(path: &Path) -> std::path::PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".txt");
    std::path::PathBuf::from(s)
}
