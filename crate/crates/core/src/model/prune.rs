use super::config::kept_count;

/// Local indices of the `ceil(α·n)` highest logits, ties to the lower index,
/// returned in ascending order.
pub fn prune(logits: &[f64], alpha: f64) -> Vec<usize> {
    let keep = kept_count(logits.len(), alpha);
    let mut order: Vec<usize> = (0..logits.len()).collect();
    order.sort_by(|&a, &b| logits[b].total_cmp(&logits[a]).then(a.cmp(&b)));
    order.truncate(keep);
    order.sort_unstable();
    order
}

/// Eight-point weights from logits: `tanh(relu(o))`, in `[0, 1)`.
pub fn inlier_weights(logits: &[f64]) -> Vec<f64> {
    logits.iter().map(|o| o.max(0.0).tanh()).collect()
}
