use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::{dense_attention_chunked, flow_attention, AttentionKind};
use crate::numerics::{NumericsError, Tape, Tensor};

/// Sequence lengths timed by default.
pub const BENCH_SIZES: [usize; 3] = [1024, 4096, 16384];

/// Query rows per block in the timed dense path.
const DENSE_CHUNK: usize = 256;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BenchRow {
    pub kind: &'static str,
    #[serde(rename = "N")]
    pub n: usize,
    pub d: usize,
    pub median_ms: f64,
    pub p90_ms: f64,
}

fn random(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Tensor {
    Tensor::new(
        &[n, d],
        (0..n * d).map(|_| rng.gen_range(-1.0..1.0)).collect(),
    )
    .expect("shape matches data")
}

/// Runs one attention evaluation on random `[n, d]` inputs.
pub fn run_attention(
    kind: AttentionKind,
    q: &Tensor,
    k: &Tensor,
    v: &Tensor,
) -> Result<Tensor, NumericsError> {
    match kind {
        AttentionKind::Flow => {
            let mut t = Tape::detached();
            let (q, k, v) = (
                t.constant(q.clone())?,
                t.constant(k.clone())?,
                t.constant(v.clone())?,
            );
            let y = flow_attention(&mut t, q, k, v)?;
            Ok(t.value(y).clone())
        }
        AttentionKind::Dense => dense_attention_chunked(q, k, v, DENSE_CHUNK),
    }
}

/// Times `runs` evaluations after `warmup` untimed ones and reports the
/// median and 90th percentile in milliseconds.
pub fn bench_attention(
    kind: AttentionKind,
    n: usize,
    d: usize,
    warmup: usize,
    runs: usize,
    seed: u64,
) -> Result<BenchRow, NumericsError> {
    if runs == 0 {
        return Err(NumericsError::Invalid(
            "benchmark needs at least one run".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (q, k, v) = (
        random(&mut rng, n, d),
        random(&mut rng, n, d),
        random(&mut rng, n, d),
    );
    for _ in 0..warmup {
        std::hint::black_box(run_attention(kind, &q, &k, &v)?);
    }
    let mut ms = Vec::with_capacity(runs);
    for _ in 0..runs {
        let start = Instant::now();
        std::hint::black_box(run_attention(kind, &q, &k, &v)?);
        ms.push(start.elapsed().as_secs_f64() * 1e3);
    }
    ms.sort_by(f64::total_cmp);
    let median = if runs % 2 == 1 {
        ms[runs / 2]
    } else {
        (ms[runs / 2 - 1] + ms[runs / 2]) / 2.0
    };
    let p90 = ms[((runs as f64 * 0.9).ceil() as usize).clamp(1, runs) - 1];
    Ok(BenchRow {
        kind: kind.name(),
        n,
        d,
        median_ms: median,
        p90_ms: p90,
    })
}
