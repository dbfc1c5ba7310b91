use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::Args;
use corradaptor::data_eval::{load_pairs, split_seed};
use corradaptor::model::{train, Branches, CorrAdaptor, ModelError, PreparedPair};
use corradaptor::motion_attention::AttentionKind;

use crate::config::{overlay, FileConfig, Preset, RunRecord};

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Dataset directory written by `gen` (reads train/ and val/).
    #[arg(long)]
    data: PathBuf,
    /// Output directory for the checkpoint, run config and log.
    #[arg(long)]
    out: PathBuf,
    /// Base settings before the config file and flags are applied.
    #[arg(long, value_enum)]
    preset: Option<Preset>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    lr: Option<f64>,
    /// Feature width.
    #[arg(long)]
    d: Option<usize>,
    /// Cluster count of the implicit branch.
    #[arg(long)]
    clusters: Option<usize>,
    /// Neighbour count per pruning block, e.g. `9,6`.
    #[arg(long, value_delimiter = ',')]
    k: Option<Vec<usize>>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    motion_iterations: Option<usize>,
    #[arg(long)]
    fusion_iterations: Option<usize>,
    /// `flow`, or `plain`/`dense` for softmax attention.
    #[arg(long)]
    attention: Option<AttentionKind>,
    /// Keep a single local-context branch: `explicit-only` or `implicit-only`.
    #[arg(long)]
    ablate: Option<Branches>,
    /// Drop cross-attention to motion (self-attention and feed-forward stay).
    #[arg(long)]
    motion_off: bool,
    /// Weight of the essential-matrix regression loss.
    #[arg(long)]
    lambda: Option<f64>,
    /// Validate every this many epochs; 0 disables validation.
    #[arg(long)]
    val_every: Option<usize>,
}

pub fn run(args: TrainArgs, config: Option<&Path>) -> Result<()> {
    let file = FileConfig::load(config)?;
    let preset = args.preset.or(file.preset).unwrap_or_default();
    let mut model_cfg = overlay(preset.model(), file.model.as_ref())?;
    let mut train_cfg = overlay(preset.train(), file.train.as_ref())?;

    macro_rules! set {
        ($dst:expr, $src:expr) => {
            if let Some(v) = $src {
                $dst = v;
            }
        };
    }
    set!(train_cfg.steps, args.steps);
    set!(train_cfg.batch, args.batch);
    set!(train_cfg.seed, args.seed);
    set!(train_cfg.lr, args.lr);
    set!(train_cfg.val_every_epochs, args.val_every);
    set!(model_cfg.d, args.d);
    set!(model_cfg.clusters, args.clusters);
    set!(model_cfg.k_per_block, args.k);
    set!(model_cfg.alpha, args.alpha);
    set!(model_cfg.motion_iterations, args.motion_iterations);
    set!(model_cfg.fusion_iterations, args.fusion_iterations);
    set!(model_cfg.attention, args.attention);
    set!(model_cfg.branches, args.ablate);
    set!(model_cfg.lambda, args.lambda);
    if args.motion_off {
        model_cfg.motion = false;
    }

    let train_pairs = load_pairs(&args.data.join("train"))
        .with_context(|| format!("loading {}/train", args.data.display()))?;
    let val_dir = args.data.join("val");
    let val = if val_dir.is_dir() {
        load_pairs(&val_dir)?
    } else {
        Vec::new()
    };
    let prepared = train_pairs
        .iter()
        .map(PreparedPair::new)
        .collect::<Result<Vec<_>, _>>()?;

    let mut model = CorrAdaptor::new(model_cfg.clone(), split_seed(train_cfg.seed, 0))?;
    fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    let record = RunRecord {
        model: model_cfg,
        train: train_cfg.clone(),
    };
    fs::write(
        args.out.join(crate::RUN_CONFIG_FILE),
        serde_json::to_string_pretty(&record)? + "\n",
    )?;

    let log_path = args.out.join(crate::TRAIN_LOG_FILE);
    let mut log = BufWriter::new(
        File::create(&log_path).with_context(|| format!("creating {}", log_path.display()))?,
    );
    let steps = train_cfg.steps;
    let losses = train(&mut model, &prepared, &val, &train_cfg, |r| {
        let line = serde_json::to_string(r).map_err(|e| ModelError::Invalid(e.to_string()))?;
        writeln!(log, "{line}").map_err(|e| ModelError::Invalid(e.to_string()))?;
        if let corradaptor::model::LogRecord::Step {
            step, loss_total, ..
        } = r
        {
            if (step + 1) % 100 == 0 || step + 1 == steps {
                eprintln!("step {}/{steps}: loss {loss_total:.4}", step + 1);
            }
        }
        Ok(())
    })?;
    log.flush()?;

    let ckpt = args.out.join(crate::CHECKPOINT_FILE);
    fs::write(&ckpt, model.checkpoint_bytes())
        .with_context(|| format!("writing {}", ckpt.display()))?;
    if let (Some(first), Some(last)) = (losses.first(), losses.last()) {
        eprintln!(
            "trained {} steps: loss {:.4} -> {:.4}; checkpoint {}",
            losses.len(),
            first.total,
            last.total,
            ckpt.display()
        );
    }
    Ok(())
}
