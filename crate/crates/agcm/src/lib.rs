//! Few-shot classification head built around two pieces: an attentive
//! fusion step that refines each proposal embedding with a convex blend of
//! its similarity-weighted neighbors, and a scaled cosine-softmax loss that
//! carves an angular margin between foreground classes while leaving the
//! background class unconstrained.
//!
//! The crate is organized bottom-up: `diffcore` holds the differentiable
//! primitives and the finite-difference checker, `apf` the fusion step,
//! `margin_loss` the objective, `head` the trainable classifier,
//! `synthdata`/`trainer`/`metrics` the experiment loop, and `cli` the
//! command-line front end.

pub mod apf;
pub mod cli;
pub mod diffcore;
pub mod error;
pub mod head;
pub mod margin_loss;
pub mod metrics;
pub mod synthdata;
pub mod trainer;

pub use apf::{AttentionMatrix, FusionConfig, ProposalBatch};
pub use head::{ClassifierHead, HeadGradients, Prediction};
pub use margin_loss::{CosineTable, MarginLossConfig};
pub use metrics::{ConfusionMatrix, ForgettingReport};
pub use synthdata::{Dataset, DatasetSpec, Label, SplitKind};
pub use trainer::{Stage, StageConfig, TrainLog};
pub use diffcore::{GradCheckReport, SimMetric};
pub use error::{AgcmError, Result};
