use std::io::Write;
use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::Args;
use corradaptor::motion_attention::{bench_attention, AttentionKind, BENCH_SIZES};

#[derive(Args, Debug)]
pub struct BenchArgs {
    /// CSV destination; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', default_values_t = BENCH_SIZES)]
    sizes: Vec<usize>,
    #[arg(long, default_value_t = 128)]
    d: usize,
    /// Timed runs per size; the median and 90th percentile are reported.
    #[arg(long, default_value_t = 5)]
    runs: usize,
    #[arg(long, default_value_t = 1)]
    warmup: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Attention kinds to time (`plain` is an alias of `dense`).
    #[arg(long, value_delimiter = ',', default_values_t = [AttentionKind::Flow, AttentionKind::Dense])]
    kinds: Vec<AttentionKind>,
}

pub fn run(args: BenchArgs) -> Result<()> {
    let mut csv = String::from("kind,N,d,median_ms,p90_ms\n");
    for &kind in &args.kinds {
        for &n in &args.sizes {
            let row = bench_attention(kind, n, args.d, args.warmup, args.runs, args.seed)?;
            eprintln!("{} N={n}: median {:.2} ms", row.kind, row.median_ms);
            csv.push_str(&format!(
                "{},{},{},{:.4},{:.4}\n",
                row.kind, row.n, row.d, row.median_ms, row.p90_ms
            ));
        }
    }
    match &args.out {
        Some(path) => {
            std::fs::write(path, csv).with_context(|| format!("writing {}", path.display()))
        }
        None => Ok(std::io::stdout().write_all(csv.as_bytes())?),
    }
}
