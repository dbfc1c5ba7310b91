use crate::geometry::{full_size_verification, Correspondence, EssentialMatrix, INLIER_THRESHOLD};

/// Ground-truth inlier labels: symmetric epipolar distance to the true
/// geometry below the inlier threshold.
pub fn inlier_labels(cs: &[Correspondence], e_gt: &EssentialMatrix) -> Vec<bool> {
    full_size_verification(e_gt, cs, INLIER_THRESHOLD)
}
