//! Synthetic scenes, the `corrpairs` text format and evaluation metrics.

mod format;
mod metrics;
mod scene;

pub use format::{load_pairs, read_pairs, write_pairs, PAIR_FILE_EXTENSION};
pub use metrics::{
    pose_auc, prf_metrics, MetricsReport, PairMetrics, Prf, Summary, AUC_THRESHOLDS,
    FAILED_POSE_ERROR,
};
pub use scene::{split_seed, synth_scene, GroundTruth, ScenePair, SceneParams};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },
    #[error("invalid argument: {0}")]
    Invalid(String),
    #[error(transparent)]
    Geometry(#[from] crate::geometry::GeometryError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
