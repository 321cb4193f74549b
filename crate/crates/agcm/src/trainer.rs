//! Two-stage training protocol.
//!
//! Stage one fits the head on base classes with a plain scaled
//! cosine-softmax: the margin is forced to zero and fusion to the identity,
//! whatever the config asks, so the base representation is learned without
//! the few-shot machinery. Stage two grows the head for novel classes and
//! fine-tunes on a class-balanced stream of support shots with fusion and
//! the margin active; the projection stays frozen unless asked otherwise.
//!
//! Both stages draw every random decision from one sequential generator
//! seeded by the stage config, so a run is reproducible bit for bit.

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::apf::FusionConfig;
use crate::error::{AgcmError, Result};
use crate::head::ClassifierHead;
use crate::synthdata::Dataset;

/// Which leg of the protocol a config drives.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Base,
    Adapt,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Base => "base",
            Stage::Adapt => "adapt",
        }
    }
}

/// Settings for one training stage.
#[derive(Debug, Clone, PartialEq)]
pub struct StageConfig {
    pub stage: Stage,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    /// Fusion settings for adaptation; the base stage overrides the blend
    /// to the identity.
    pub fusion: FusionConfig,
    /// Margin for adaptation; the base stage forces zero.
    pub margin: f64,
    pub beta: f64,
    pub freeze_projection: bool,
    /// Feature dimension of a freshly initialized head; defaults to the
    /// input dimension.
    pub feat_dim: Option<usize>,
}

impl StageConfig {
    pub fn base(seed: u64) -> Self {
        StageConfig {
            stage: Stage::Base,
            epochs: 200,
            batch_size: 64,
            learning_rate: 0.001,
            seed,
            fusion: FusionConfig::default(),
            margin: 0.2,
            beta: 20.0,
            freeze_projection: false,
            feat_dim: None,
        }
    }

    pub fn adapt(seed: u64) -> Self {
        StageConfig {
            stage: Stage::Adapt,
            epochs: 600,
            batch_size: 16,
            learning_rate: 0.001,
            seed,
            fusion: FusionConfig::default(),
            margin: 0.2,
            beta: 20.0,
            freeze_projection: true,
            feat_dim: None,
        }
    }

    fn validate(&self, expected_stage: Stage) -> Result<()> {
        if self.stage != expected_stage {
            return Err(AgcmError::InvalidConfig(format!(
                "{} config handed to the {} stage",
                self.stage.name(),
                expected_stage.name()
            )));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(AgcmError::InvalidConfig(
                "epochs and batch size must be positive".into(),
            ));
        }
        if !self.learning_rate.is_finite() || self.learning_rate <= 0.0 {
            return Err(AgcmError::InvalidConfig(format!(
                "learning rate {} not positive",
                self.learning_rate
            )));
        }
        Ok(())
    }
}

/// Mean loss of one epoch's steps.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub mean_loss: f64,
}

/// What a stage actually did: per-step and per-epoch losses plus the
/// effective knob values after stage overrides.
#[derive(Debug, Clone)]
pub struct TrainLog {
    pub stage: Stage,
    pub epochs: Vec<EpochRecord>,
    pub step_losses: Vec<f64>,
    pub effective_alpha: f64,
    pub effective_margin: f64,
    /// Wall-clock time, for eyeballing only — it never enters any artifact
    /// that determinism guarantees cover.
    pub wall_ms: u128,
}

impl TrainLog {
    pub fn final_loss(&self) -> f64 {
        self.step_losses.last().copied().unwrap_or(f64::NAN)
    }
}

/// How batch indices are drawn for an epoch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BatchScheme {
    /// One pass over a shuffled permutation; the trailing partial batch is
    /// kept.
    Shuffled,
    /// Draws with replacement, picking a label group uniformly first, so
    /// scarce groups appear as often as plentiful ones. Epoch size matches
    /// the dataset.
    ClassBalanced,
}

/// Index batches for one epoch under the given scheme.
pub fn make_batches(
    dataset: &Dataset,
    batch_size: usize,
    scheme: BatchScheme,
    rng: &mut ChaCha8Rng,
) -> Vec<Vec<usize>> {
    let n = dataset.len();
    let order: Vec<usize> = match scheme {
        BatchScheme::Shuffled => {
            let mut order: Vec<usize> = (0..n).collect();
            order.shuffle(rng);
            order
        }
        BatchScheme::ClassBalanced => {
            let groups: Vec<Vec<usize>> = dataset
                .indices_by_group()
                .into_iter()
                .filter(|g| !g.is_empty())
                .collect();
            (0..n)
                .map(|_| {
                    let g = &groups[rng.random_range(0..groups.len())];
                    g[rng.random_range(0..g.len())]
                })
                .collect()
        }
    };
    order.chunks(batch_size).map(|c| c.to_vec()).collect()
}

fn gather(features: &Array2<f64>, indices: &[usize]) -> Array2<f64> {
    Array2::from_shape_fn((indices.len(), features.ncols()), |(r, c)| {
        features[[indices[r], c]]
    })
}

fn run_epochs(
    head: &mut ClassifierHead,
    dataset: &Dataset,
    cfg: &StageConfig,
    scheme: BatchScheme,
    rng: &mut ChaCha8Rng,
) -> Result<TrainLog> {
    let started = std::time::Instant::now();
    let label_indices = dataset.label_indices();
    let mut step_losses = Vec::new();
    let mut epochs = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let batches = make_batches(dataset, cfg.batch_size, scheme, rng);
        let mut epoch_total = 0.0;
        let mut steps = 0;
        for batch in &batches {
            let x = gather(&dataset.features, batch);
            let labels: Vec<usize> = batch.iter().map(|&i| label_indices[i]).collect();
            let (loss, grads) = head.forward_train(x.view(), &labels)?;
            if !loss.is_finite() {
                return Err(AgcmError::NonFinite { what: format!("loss at epoch {epoch}") });
            }
            head.apply_gradients(&grads, cfg.learning_rate, cfg.freeze_projection);
            step_losses.push(loss);
            epoch_total += loss;
            steps += 1;
        }
        epochs.push(EpochRecord { epoch, mean_loss: epoch_total / steps as f64 });
    }
    Ok(TrainLog {
        stage: cfg.stage,
        epochs,
        step_losses,
        effective_alpha: head.fusion.alpha,
        effective_margin: head.loss_cfg.margin,
        wall_ms: started.elapsed().as_millis(),
    })
}

/// Stage one: fit a fresh head on base classes with margin zero and fusion
/// off. Returns the trained head and its log.
pub fn base_train(dataset: &Dataset, cfg: &StageConfig) -> Result<(ClassifierHead, TrainLog)> {
    cfg.validate(Stage::Base)?;
    if dataset.is_empty() {
        return Err(AgcmError::EmptyDataset);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let init_seed = rng.random::<u64>();
    let d_in = dataset.dim();
    let d_feat = cfg.feat_dim.unwrap_or(d_in);
    let mut fusion = cfg.fusion;
    fusion.alpha = 1.0; // identity blend: base training sees raw projections
    let mut head = ClassifierHead::init(
        d_in,
        d_feat,
        dataset.n_real_classes,
        fusion,
        0.0, // margin held out of the base objective
        cfg.beta,
        init_seed,
    )?;
    let log = run_epochs(&mut head, dataset, cfg, BatchScheme::Shuffled, &mut rng)?;
    Ok((head, log))
}

/// Stage two: grow the base head for the novel classes in `shots` and
/// fine-tune on class-balanced batches with fusion and the margin active.
pub fn few_shot_adapt(
    base_head: &ClassifierHead,
    shots: &Dataset,
    cfg: &StageConfig,
) -> Result<(ClassifierHead, TrainLog)> {
    cfg.validate(Stage::Adapt)?;
    if shots.is_empty() {
        return Err(AgcmError::EmptyDataset);
    }
    if shots.dim() != base_head.d_in() {
        return Err(AgcmError::DimensionMismatch {
            expected: base_head.d_in(),
            got: shots.dim(),
        });
    }
    let n_base = base_head.n_real_classes();
    if shots.n_real_classes <= n_base {
        return Err(AgcmError::InvalidConfig(format!(
            "support set spans {} classes; the base head already holds {n_base}",
            shots.n_real_classes
        )));
    }
    let n_novel = shots.n_real_classes - n_base;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let expand_seed = rng.random::<u64>();
    let mut head = base_head.expanded(n_novel, expand_seed)?;
    head.fusion = cfg.fusion;
    head.fusion.validate()?;
    head.loss_cfg.margin = cfg.margin;
    head.loss_cfg.beta = cfg.beta;
    head.loss_cfg.validate(head.n_classes())?;
    let log = run_epochs(&mut head, shots, cfg, BatchScheme::ClassBalanced, &mut rng)?;
    Ok((head, log))
}
