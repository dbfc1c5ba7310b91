use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::Args;
use corradaptor::data_eval::{split_seed, synth_scene, write_pairs, PAIR_FILE_EXTENSION};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::{overlay, FileConfig, GenConfig};

#[derive(Args, Debug)]
pub struct GenArgs {
    /// Output directory; receives train/, val/, test/ and the manifest.
    #[arg(long)]
    out: PathBuf,
    /// Total number of pairs over all splits.
    #[arg(long)]
    pairs: Option<usize>,
    /// Correspondences per pair.
    #[arg(long)]
    n: Option<usize>,
    /// Outlier probability per correspondence.
    #[arg(long)]
    outliers: Option<f64>,
    /// Standard deviation of the coordinate noise on inliers.
    #[arg(long)]
    noise: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    val_pairs: Option<usize>,
    #[arg(long)]
    test_pairs: Option<usize>,
}

#[derive(Serialize)]
struct Generator {
    n: usize,
    outlier_ratio: f64,
    noise_sigma: f64,
}

#[derive(Serialize)]
struct Counts {
    train: usize,
    val: usize,
    test: usize,
}

#[derive(Serialize)]
struct FileEntry {
    split: &'static str,
    path: String,
    seed: u64,
    correspondences: usize,
    inliers: usize,
    sha256: String,
}

#[derive(Serialize)]
struct Manifest {
    format: &'static str,
    seed: u64,
    generator: Generator,
    counts: Counts,
    correspondences: usize,
    outliers: usize,
    outlier_fraction: f64,
    files: Vec<FileEntry>,
}

pub fn run(args: GenArgs, config: Option<&Path>) -> Result<()> {
    let file = FileConfig::load(config)?;
    let mut cfg = overlay(GenConfig::default(), file.gen.as_ref())?;
    cfg.pairs = args.pairs.unwrap_or(cfg.pairs);
    cfg.n = args.n.unwrap_or(cfg.n);
    cfg.outliers = args.outliers.unwrap_or(cfg.outliers);
    cfg.noise = args.noise.unwrap_or(cfg.noise);
    cfg.seed = args.seed.unwrap_or(cfg.seed);
    cfg.val_pairs = args.val_pairs.or(cfg.val_pairs);
    cfg.test_pairs = args.test_pairs.or(cfg.test_pairs);
    let (train, val, test) = cfg.split_counts()?;

    let mut files = Vec::with_capacity(cfg.pairs);
    let (mut total, mut inliers) = (0, 0);
    let splits = [("train", train), ("val", val), ("test", test)];
    let mut index = 0u64;
    for (split, count) in splits {
        let dir = args.out.join(split);
        fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
        for _ in 0..count {
            let seed = split_seed(cfg.seed, index);
            let pair = synth_scene(cfg.scene(seed))?;
            let mut bytes = Vec::new();
            write_pairs(&mut bytes, std::slice::from_ref(&pair))?;
            let name = format!("pair_{index:05}.{PAIR_FILE_EXTENSION}");
            let path = dir.join(&name);
            fs::write(&path, &bytes).with_context(|| format!("writing {}", path.display()))?;
            let n_in = pair
                .labels
                .as_ref()
                .map_or(0, |l| l.iter().filter(|x| **x).count());
            total += pair.len();
            inliers += n_in;
            files.push(FileEntry {
                split,
                path: format!("{split}/{name}"),
                seed,
                correspondences: pair.len(),
                inliers: n_in,
                sha256: hex(&Sha256::digest(&bytes)),
            });
            index += 1;
        }
    }
    let manifest = Manifest {
        format: "corrpairs v1",
        seed: cfg.seed,
        generator: Generator {
            n: cfg.n,
            outlier_ratio: cfg.outliers,
            noise_sigma: cfg.noise,
        },
        counts: Counts { train, val, test },
        correspondences: total,
        outliers: total - inliers,
        outlier_fraction: (total - inliers) as f64 / total.max(1) as f64,
        files,
    };
    let path = args.out.join(crate::MANIFEST_FILE);
    fs::write(&path, serde_json::to_string_pretty(&manifest)? + "\n")
        .with_context(|| format!("writing {}", path.display()))?;
    eprintln!(
        "wrote {} pairs ({train} train, {val} val, {test} test) to {}",
        cfg.pairs,
        args.out.display()
    );
    Ok(())
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
