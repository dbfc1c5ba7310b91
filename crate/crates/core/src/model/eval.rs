use serde::{Deserialize, Serialize};

use super::network::CorrAdaptor;
use super::ModelError;
use crate::data_eval::{prf_metrics, MetricsReport, PairMetrics, ScenePair, FAILED_POSE_ERROR};
use crate::geometry::{
    decompose_essential, pose_error, ransac_essential, Correspondence, EssentialMatrix,
    RansacConfig, RelativePose,
};

/// How a relative pose is recovered from the network output.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PosePath {
    /// RANSAC over the correspondences the network marks as inliers.
    Ransac(RansacConfig),
    /// Decompose the network's essential matrix directly.
    Direct,
}

impl Default for PosePath {
    fn default() -> Self {
        Self::Ransac(RansacConfig::default())
    }
}

fn select(cs: &[Correspondence], mask: &[bool]) -> Vec<Correspondence> {
    cs.iter()
        .zip(mask)
        .filter(|(_, m)| **m)
        .map(|(c, _)| *c)
        .collect()
}

fn pose_from(e: &EssentialMatrix, cs: &[Correspondence], mask: &[bool]) -> Option<RelativePose> {
    let inliers = select(cs, mask);
    decompose_essential(e, &inliers).ok()
}

fn metrics_row(
    index: usize,
    pair: &ScenePair,
    mask: &[bool],
    pose: Option<RelativePose>,
) -> Result<PairMetrics, ModelError> {
    let prf = match pair.labels_or_derived() {
        Some(labels) => Some(prf_metrics(mask, &labels)?),
        None => None,
    };
    let (rot_err, trans_err) = match &pair.ground_truth {
        Some(gt) => {
            let (r, t) = pose
                .map(|p| pose_error(&p, &gt.pose))
                .unwrap_or((FAILED_POSE_ERROR, FAILED_POSE_ERROR));
            (Some(r), Some(t))
        }
        None => (None, None),
    };
    Ok(PairMetrics {
        pair: index,
        prf,
        rot_err,
        trans_err,
    })
}

/// Network prediction for one pair: the inlier mask and, when recoverable,
/// the pose. A pair on which the network cannot produce an essential matrix
/// predicts no inliers and no pose.
pub fn predict_pair(
    model: &CorrAdaptor,
    cs: &[Correspondence],
    path: PosePath,
) -> Result<(Vec<bool>, Option<RelativePose>), ModelError> {
    let out = match model.forward(cs) {
        Ok(out) => out,
        Err(ModelError::TooFewWeights(_)) => return Ok((vec![false; cs.len()], None)),
        Err(e) => return Err(e),
    };
    let pose = match path {
        PosePath::Direct => pose_from(&out.e_hat, cs, &out.inlier_mask),
        PosePath::Ransac(cfg) => {
            let selected = select(cs, &out.inlier_mask);
            match ransac_essential(&selected, &cfg) {
                Ok((e, m)) => pose_from(&e, &selected, &m),
                Err(_) => pose_from(&out.e_hat, cs, &out.inlier_mask),
            }
        }
    };
    Ok((out.inlier_mask, pose))
}

pub fn evaluate_model(
    model: &CorrAdaptor,
    pairs: &[ScenePair],
    path: PosePath,
) -> Result<MetricsReport, ModelError> {
    let rows = pairs
        .iter()
        .enumerate()
        .map(|(i, pair)| {
            let (mask, pose) = predict_pair(model, &pair.correspondences, path)?;
            metrics_row(i, pair, &mask, pose)
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(MetricsReport::from_rows(rows)?)
}

/// RANSAC on all correspondences, the learning-free baseline.
pub fn evaluate_ransac(
    pairs: &[ScenePair],
    cfg: &RansacConfig,
) -> Result<MetricsReport, ModelError> {
    let rows = pairs
        .iter()
        .enumerate()
        .map(|(i, pair)| {
            let cs = &pair.correspondences;
            let (mask, pose) = match ransac_essential(cs, cfg) {
                Ok((e, mask)) => {
                    let pose = pose_from(&e, cs, &mask);
                    (mask, pose)
                }
                Err(_) => (vec![false; cs.len()], None),
            };
            metrics_row(i, pair, &mask, pose)
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(MetricsReport::from_rows(rows)?)
}

/// Uses the labels themselves as predictions and the ground-truth pose as
/// the estimate; every metric is perfect by construction.
pub fn evaluate_oracle(pairs: &[ScenePair]) -> Result<MetricsReport, ModelError> {
    let rows = pairs
        .iter()
        .enumerate()
        .map(|(i, pair)| {
            let mask = pair
                .labels_or_derived()
                .unwrap_or_else(|| vec![false; pair.len()]);
            metrics_row(i, pair, &mask, pair.ground_truth.map(|g| g.pose))
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(MetricsReport::from_rows(rows)?)
}
