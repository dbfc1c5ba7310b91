//! Dense tensors, a reverse-mode tape, parameters, checkpoints and the
//! building blocks every network layer in this crate is made of.

mod gradcheck;
mod layers;
pub mod linalg;
mod optim;
mod param;
mod tape;
mod tensor;

pub use gradcheck::{grad_check, grad_check_input, grad_check_params};
pub use layers::{Affine, Linear, Mlp, PointCn};
pub use optim::{Adam, AdamConfig};
pub use param::{Init, Param, ParamId, ParamStore, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use tape::{Axis, Gradients, ParamGrads, Tape, Var};
pub use tensor::Tensor;

use thiserror::Error;

/// Epsilon used by context normalisation unless a layer overrides it.
pub const NORM_EPS: f64 = 1e-5;

#[derive(Debug, Error)]
pub enum NumericsError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("index {index} out of range for {len} rows")]
    Index { index: usize, len: usize },
    #[error("non-finite value produced by {0}")]
    NonFinite(String),
    #[error("duplicate parameter name {0}")]
    DuplicateParam(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("invalid argument: {0}")]
    Invalid(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Context normalisation of an `[N, C]` tensor: every column is shifted and
/// scaled to zero mean and unit variance across the `N` rows.
pub fn context_norm(x: &Tensor, eps: f64) -> Result<Tensor, NumericsError> {
    let mut tape = Tape::detached();
    let v = tape.constant(x.clone())?;
    let y = tape.context_norm(v, eps)?;
    Ok(tape.value(y).clone())
}

/// Keeps freed heap memory in the process instead of returning it to the
/// system. A training step allocates and frees tens of megabytes of
/// short-lived buffers; without this, glibc maps each large buffer fresh and
/// the page faults cost about a third of the step. No-op off glibc.
pub fn retain_freed_memory() {
    #[cfg(all(target_os = "linux", target_env = "gnu"))]
    // SAFETY: mallopt only adjusts allocator thresholds.
    unsafe {
        libc::mallopt(libc::M_MMAP_THRESHOLD, 1 << 30);
        libc::mallopt(libc::M_TRIM_THRESHOLD, 1 << 30);
    }
}

#[cfg(test)]
mod tests;
