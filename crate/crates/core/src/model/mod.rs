//! The pruning network, its losses and the training loop.

mod config;
mod eval;
mod labels;
mod losses;
mod network;
mod prune;
mod train;

pub use config::{kept_count, Branches, CorrAdaptorConfig};
pub use eval::{evaluate_model, evaluate_oracle, evaluate_ransac, predict_pair, PosePath};
pub use labels::inlier_labels;
pub use losses::{
    classification_loss, hybrid_loss, regression_loss, HybridLoss, VirtualRows, VIRTUAL_COUNT,
};
pub use network::{
    correspondence_tensor, CorrAdaptor, ModelOutput, PruneState, TapeForward, MIN_CANDIDATES,
};
pub use prune::{inlier_weights, prune};
pub use train::{lambda_at, train, train_step, LogRecord, PreparedPair, StepLoss, TrainConfig};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(
        "{n} correspondences leave {remaining} candidates after pruning; at least 8 are needed"
    )]
    TooFewCandidates { n: usize, remaining: usize },
    #[error("only {0} final candidates have positive weight; at least 8 are needed")]
    TooFewWeights(usize),
    #[error("non-finite training loss at step {step} (cls {cls}, reg {reg}): {detail}")]
    NonFiniteLoss {
        step: usize,
        cls: f64,
        reg: f64,
        detail: String,
    },
    #[error("invalid argument: {0}")]
    Invalid(String),
    #[error(transparent)]
    Numerics(#[from] crate::numerics::NumericsError),
    #[error(transparent)]
    Geometry(#[from] crate::geometry::GeometryError),
    #[error(transparent)]
    Data(#[from] crate::data_eval::DataError),
}
