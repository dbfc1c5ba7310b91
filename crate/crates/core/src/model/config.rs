use serde::{Deserialize, Serialize};

use super::ModelError;
use crate::motion_attention::{AttentionKind, DEFAULT_HEADS};

/// Which local-context branches feed the fusion.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Branches {
    #[default]
    Both,
    ExplicitOnly,
    ImplicitOnly,
}

impl Branches {
    pub fn explicit(self) -> bool {
        self != Self::ImplicitOnly
    }

    pub fn implicit(self) -> bool {
        self != Self::ExplicitOnly
    }
}

impl std::str::FromStr for Branches {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "both" => Ok(Self::Both),
            "explicit-only" => Ok(Self::ExplicitOnly),
            "implicit-only" => Ok(Self::ImplicitOnly),
            other => Err(format!("unknown branch setting {other:?}")),
        }
    }
}

/// Architecture and loss settings. Defaults are the full-size network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CorrAdaptorConfig {
    /// Neighbour count of each pruning block; its length is the number of
    /// pruning blocks.
    pub k_per_block: Vec<usize>,
    /// Feature width.
    pub d: usize,
    /// Cluster count of the implicit branch.
    pub clusters: usize,
    /// Rounds of motion injection per branch.
    pub motion_iterations: usize,
    /// Rounds of branch computation and fusion per block.
    pub fusion_iterations: usize,
    /// Fraction of candidates kept by each pruning block.
    pub alpha: f64,
    pub heads: usize,
    pub attention: AttentionKind,
    pub branches: Branches,
    /// Cross-attention to motion; off leaves self-attention and feed-forward.
    pub motion: bool,
    /// Weight of the essential-matrix regression loss.
    pub lambda: f64,
    /// Fraction of training steps run with the regression weight at zero.
    pub lambda_warmup: f64,
    /// Logit scale inside the classification loss.
    pub omega: f64,
}

impl Default for CorrAdaptorConfig {
    fn default() -> Self {
        Self {
            k_per_block: vec![9, 6],
            d: 128,
            clusters: 250,
            motion_iterations: 2,
            fusion_iterations: 1,
            alpha: 0.5,
            heads: DEFAULT_HEADS,
            attention: AttentionKind::Flow,
            branches: Branches::Both,
            motion: true,
            lambda: 0.5,
            lambda_warmup: 0.1,
            omega: 1.0,
        }
    }
}

impl CorrAdaptorConfig {
    /// Smaller network for the synthetic desk-scale dataset (500
    /// correspondences per pair); small enough to train for 2000 steps in a
    /// few minutes on one core.
    pub fn desk() -> Self {
        Self {
            d: 16,
            clusters: 32,
            motion_iterations: 1,
            ..Self::default()
        }
    }

    pub fn pruning_blocks(&self) -> usize {
        self.k_per_block.len()
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: String| Err(ModelError::Config(m));
        if self.k_per_block.is_empty() || self.k_per_block.contains(&0) {
            return bad(format!(
                "k_per_block must be nonempty and positive: {:?}",
                self.k_per_block
            ));
        }
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return bad(format!("alpha {} outside (0, 1]", self.alpha));
        }
        if self.d == 0 || self.heads == 0 || self.d % self.heads != 0 {
            return bad(format!(
                "d={} must be a positive multiple of heads={}",
                self.d, self.heads
            ));
        }
        if self.clusters == 0 {
            return bad("clusters must be positive".into());
        }
        if self.motion_iterations == 0 || self.fusion_iterations == 0 {
            return bad("motion and fusion iteration counts must be positive".into());
        }
        if !(self.lambda >= 0.0) || !(0.0..=1.0).contains(&self.lambda_warmup) {
            return bad(format!(
                "lambda {} / warmup {}",
                self.lambda, self.lambda_warmup
            ));
        }
        if !(self.omega > 0.0 && self.omega.is_finite()) {
            return bad(format!("omega {} must be positive", self.omega));
        }
        Ok(())
    }

    /// Candidate count after each pruning block, starting from `n`.
    pub fn stage_sizes(&self, n: usize) -> Vec<usize> {
        let mut sizes = vec![n];
        for _ in 0..self.pruning_blocks() {
            let last = *sizes.last().expect("nonempty");
            sizes.push(kept_count(last, self.alpha));
        }
        sizes
    }
}

/// `ceil(α·n)`, robust to the rounding of `α·n` just above an integer.
pub fn kept_count(n: usize, alpha: f64) -> usize {
    ((alpha * n as f64 - 1e-9).ceil().max(1.0) as usize).min(n)
}
