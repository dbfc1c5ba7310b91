//! Motion vectors, linear-complexity flow attention, dense softmax attention
//! and the block that injects motion into correspondence features.

mod attention;
mod bench;
mod injection;

pub use attention::{
    dense_attention, dense_attention_chunked, flow_attention, AttentionKind, FLOW_EPS,
};
pub use bench::{bench_attention, run_attention, BenchRow, BENCH_SIZES};
pub use injection::{
    FeedForward, InjectionLayer, MotionInjection, MultiHeadAttention, DEFAULT_HEADS,
};

use crate::geometry::Correspondence;
use crate::numerics::Tensor;

/// Per-correspondence motion `(x − u, y − v)` as an `[N, 2]` tensor.
pub fn compute_motion(cs: &[Correspondence]) -> Tensor {
    let data = cs.iter().flat_map(|c| [c.x - c.u, c.y - c.v]).collect();
    Tensor::new(&[cs.len(), 2], data).expect("two values per row")
}
