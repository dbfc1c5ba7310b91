use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, ValueEnum};
use corradaptor::data_eval::{load_pairs, MetricsReport, ScenePair};
use corradaptor::geometry::RansacConfig;
use corradaptor::model::{
    evaluate_model, evaluate_oracle, evaluate_ransac, predict_pair, CorrAdaptor, ModelError,
    PosePath,
};
use serde::Serialize;

use crate::config::RunRecord;

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum PoseArg {
    /// RANSAC over the predicted inliers.
    Ransac,
    /// Decompose the network's essential matrix directly.
    Direct,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Baseline {
    Ransac,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// Directory holding model.ckpt and config.json from `train`.
    #[arg(long, required_unless_present = "oracle")]
    model: Option<PathBuf>,
    /// Dataset directory (its test/ split is used when present) or a
    /// corrpairs file or directory.
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value_t = PoseArg::Ransac)]
    pose: PoseArg,
    /// Also score RANSAC on all correspondences.
    #[arg(long, value_enum)]
    baseline: Option<Baseline>,
    /// Score the ground-truth labels and poses instead of a model.
    #[arg(long)]
    oracle: bool,
    #[arg(long, default_value_t = 1000)]
    ransac_iters: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug)]
pub struct InferArgs {
    /// Directory holding model.ckpt and config.json from `train`.
    #[arg(long)]
    model: PathBuf,
    /// corrpairs file or directory.
    #[arg(long)]
    input: PathBuf,
    /// JSON-lines output, one object per pair.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value_t = PoseArg::Ransac)]
    pose: PoseArg,
    #[arg(long, default_value_t = 1000)]
    ransac_iters: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn pose_path(arg: PoseArg, iterations: usize, seed: u64) -> PosePath {
    match arg {
        PoseArg::Ransac => PosePath::Ransac(RansacConfig {
            iterations,
            seed,
            ..RansacConfig::default()
        }),
        PoseArg::Direct => PosePath::Direct,
    }
}

pub fn load_model(dir: &Path) -> Result<CorrAdaptor> {
    let record = RunRecord::load(dir)?;
    let path = dir.join(crate::CHECKPOINT_FILE);
    let file =
        File::open(&path).with_context(|| format!("opening checkpoint {}", path.display()))?;
    CorrAdaptor::from_checkpoint(record.model, std::io::BufReader::new(file))
        .with_context(|| format!("loading checkpoint {}", path.display()))
}

fn load_split(data: &Path) -> Result<Vec<ScenePair>> {
    let test = data.join("test");
    let path = if test.is_dir() {
        test
    } else {
        data.to_path_buf()
    };
    let pairs = load_pairs(&path).with_context(|| format!("loading {}", path.display()))?;
    if pairs.is_empty() {
        bail!("no pairs found in {}", path.display());
    }
    Ok(pairs)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| format!("{x}"))
}

fn write_report(dir: &Path, suffix: &str, report: &MetricsReport) -> Result<()> {
    let name = |stem: &str, ext: &str| dir.join(format!("{stem}{suffix}.{ext}"));
    fs::write(
        name("report", "json"),
        serde_json::to_string_pretty(&report.summary())? + "\n",
    )?;
    let mut rows =
        String::from("pair,precision,recall,fscore,rot_err_deg,trans_err_deg,pose_err_deg\n");
    for r in &report.rows {
        rows.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.pair,
            fmt_opt(r.prf.map(|p| p.precision)),
            fmt_opt(r.prf.map(|p| p.recall)),
            fmt_opt(r.prf.map(|p| p.fscore)),
            fmt_opt(r.rot_err),
            fmt_opt(r.trans_err),
            fmt_opt(r.pose_error()),
        ));
    }
    fs::write(name("pairs", "csv"), rows)?;
    let errors = report.sorted_pose_errors();
    let mut cdf = String::from("pose_err_deg,fraction\n");
    for (i, e) in errors.iter().enumerate() {
        cdf.push_str(&format!("{e},{}\n", (i + 1) as f64 / errors.len() as f64));
    }
    fs::write(name("pose_cdf", "csv"), cdf)?;
    Ok(())
}

fn comparison_row(method: &str, report: &MetricsReport) -> String {
    let s = report.summary();
    format!(
        "{method},{},{},{},{},{},{}\n",
        fmt_opt(s.precision),
        fmt_opt(s.recall),
        fmt_opt(s.fscore),
        fmt_opt(s.auc5),
        fmt_opt(s.auc10),
        fmt_opt(s.auc20)
    )
}

pub fn run(args: EvalArgs) -> Result<()> {
    let pairs = load_split(&args.data)?;
    fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    let (method, report) = if args.oracle {
        ("oracle", evaluate_oracle(&pairs)?)
    } else {
        let dir = args.model.as_deref().expect("required unless --oracle");
        let model = load_model(dir)?;
        let path = pose_path(args.pose, args.ransac_iters, args.seed);
        ("corradaptor", evaluate_model(&model, &pairs, path)?)
    };
    write_report(&args.out, "", &report)?;
    let mut comparison = String::from("method,precision,recall,fscore,auc5,auc10,auc20\n");
    comparison.push_str(&comparison_row(method, &report));
    if args.baseline.is_some() {
        let cfg = RansacConfig {
            iterations: args.ransac_iters,
            seed: args.seed,
            ..RansacConfig::default()
        };
        let baseline = evaluate_ransac(&pairs, &cfg)?;
        write_report(&args.out, "_ransac", &baseline)?;
        comparison.push_str(&comparison_row("ransac", &baseline));
    }
    fs::write(args.out.join("comparison.csv"), &comparison)?;
    eprint!("{comparison}");
    Ok(())
}

#[derive(Serialize)]
struct Prediction {
    pair: usize,
    /// Row-major essential matrix; absent when too few candidates carry
    /// positive weight.
    e_hat: Option<Vec<f64>>,
    inliers: Vec<usize>,
    rotation: Option<[[f64; 3]; 3]>,
    translation: Option<[f64; 3]>,
}

pub fn infer(args: InferArgs) -> Result<()> {
    let model = load_model(&args.model)?;
    let pairs =
        load_pairs(&args.input).with_context(|| format!("loading {}", args.input.display()))?;
    let path = pose_path(args.pose, args.ransac_iters, args.seed);
    let mut out = BufWriter::new(
        File::create(&args.out).with_context(|| format!("creating {}", args.out.display()))?,
    );
    for (i, pair) in pairs.iter().enumerate() {
        let cs = &pair.correspondences;
        let e_hat = match model.forward(cs) {
            Ok(o) => Some(o.e_hat.to_row_vec()),
            Err(ModelError::TooFewWeights(_)) => None,
            Err(e) => return Err(e.into()),
        };
        let (mask, pose) = predict_pair(&model, cs, path)?;
        let rotation = pose.map(|p| {
            let r = p.rotation.matrix();
            [0, 1, 2].map(|i| [r[(i, 0)], r[(i, 1)], r[(i, 2)]])
        });
        let translation = pose.map(|p| [p.translation.x, p.translation.y, p.translation.z]);
        let rec = Prediction {
            pair: i,
            e_hat,
            inliers: mask
                .iter()
                .enumerate()
                .filter(|(_, m)| **m)
                .map(|(j, _)| j)
                .collect(),
            rotation,
            translation,
        };
        writeln!(out, "{}", serde_json::to_string(&rec)?)?;
    }
    out.flush()?;
    eprintln!(
        "wrote predictions for {} pairs to {}",
        pairs.len(),
        args.out.display()
    );
    Ok(())
}
