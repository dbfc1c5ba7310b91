use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::eval::{evaluate_model, PosePath};
use super::losses::{hybrid_loss, VirtualRows};
use super::network::CorrAdaptor;
use super::ModelError;
use crate::data_eval::{ScenePair, Summary};
use crate::geometry::Correspondence;
use crate::numerics::{Adam, AdamConfig, NumericsError, Tape};

/// A training pair with everything the loss needs precomputed.
#[derive(Clone, Debug)]
pub struct PreparedPair {
    pub correspondences: Vec<Correspondence>,
    pub labels: Vec<bool>,
    pub rows: VirtualRows,
}

impl PreparedPair {
    pub fn new(pair: &ScenePair) -> Result<Self, ModelError> {
        let gt = pair
            .ground_truth
            .ok_or_else(|| ModelError::Invalid("training pair without ground truth".into()))?;
        Ok(Self {
            correspondences: pair.correspondences.clone(),
            labels: pair.labels_or_derived().expect("ground truth present"),
            rows: VirtualRows::new(&gt.essential),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch: usize,
    pub seed: u64,
    pub lr: f64,
    pub weight_decay: f64,
    /// Validate every this many epochs; 0 disables validation.
    pub val_every_epochs: usize,
    pub pose_path: PosePath,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 2000,
            batch: 8,
            seed: 0,
            lr: 1e-3,
            weight_decay: 0.0,
            val_every_epochs: 1,
            pose_path: PosePath::default(),
        }
    }
}

/// One line of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LogRecord {
    Step {
        step: usize,
        loss_cls: f64,
        loss_reg: f64,
        loss_total: f64,
    },
    Validation {
        epoch: usize,
        #[serde(flatten)]
        summary: Summary,
    },
}

/// Mean losses of one optimisation step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepLoss {
    pub cls: f64,
    /// Mean over the pairs that produced an essential matrix; 0 when none did.
    pub reg: f64,
    pub total: f64,
}

/// Forward, backward and gradient accumulation for one batch, then one
/// Adam update. Gradients are averaged over the batch in pair order.
pub fn train_step(
    model: &mut CorrAdaptor,
    adam: &mut Adam,
    batch: &[&PreparedPair],
    lambda: f64,
    step: usize,
) -> Result<StepLoss, ModelError> {
    model.params.zero_grad();
    let scale = 1.0 / batch.len() as f64;
    let (mut cls, mut reg, mut reg_count, mut total) = (0.0, 0.0, 0usize, 0.0);
    let omega = model.config.omega;
    for pair in batch {
        let grads = {
            let mut t = Tape::new(&model.params);
            let fw = model
                .forward_tape(&mut t, &pair.correspondences)
                .map_err(|e| diverged(step, cls, reg, e))?;
            let loss = hybrid_loss(&mut t, &fw, &pair.labels, &pair.rows, lambda, omega)
                .map_err(|e| diverged(step, cls, reg, e))?;
            let c = t.value(loss.cls).item();
            let r = loss.reg.map(|r| t.value(r).item());
            let l = t.value(loss.total).item();
            if !(c.is_finite() && l.is_finite() && r.map_or(true, f64::is_finite)) {
                return Err(ModelError::NonFiniteLoss {
                    step,
                    cls: c,
                    reg: r.unwrap_or(f64::NAN),
                    detail: "loss value".into(),
                });
            }
            cls += c * scale;
            total += l * scale;
            if let Some(r) = r {
                reg += r;
                reg_count += 1;
            }
            let g = t.backward(loss.total)?;
            t.param_grads(&g)
        };
        for (id, mut g) in grads.0 {
            g.iter_mut().for_each(|v| *v *= scale);
            model.params.get_mut(id).tensor.accumulate_grad(&g);
        }
    }
    adam.step(&mut model.params);
    Ok(StepLoss {
        cls,
        reg: if reg_count > 0 {
            reg / reg_count as f64
        } else {
            0.0
        },
        total,
    })
}

fn diverged(step: usize, cls: f64, reg: f64, e: ModelError) -> ModelError {
    match e {
        ModelError::Numerics(NumericsError::NonFinite(what)) => ModelError::NonFiniteLoss {
            step,
            cls,
            reg,
            detail: what,
        },
        other => other,
    }
}

/// Regression weight at `step`: zero during the warmup fraction of the run.
pub fn lambda_at(lambda: f64, warmup: f64, step: usize, steps: usize) -> f64 {
    if (step as f64) < warmup * steps as f64 {
        0.0
    } else {
        lambda
    }
}

/// Trains `model` in place. Batches walk a fresh seeded shuffle of the
/// training pairs every epoch. `log` receives every step and validation
/// record in order.
pub fn train<F>(
    model: &mut CorrAdaptor,
    pairs: &[PreparedPair],
    val: &[ScenePair],
    cfg: &TrainConfig,
    mut log: F,
) -> Result<Vec<StepLoss>, ModelError>
where
    F: FnMut(&LogRecord) -> Result<(), ModelError>,
{
    if pairs.is_empty() {
        return Err(ModelError::Invalid("empty training set".into()));
    }
    if cfg.steps == 0 || cfg.batch == 0 {
        return Err(ModelError::Invalid(
            "steps and batch must be positive".into(),
        ));
    }
    let mut adam = Adam::new(
        AdamConfig {
            lr: cfg.lr,
            weight_decay: cfg.weight_decay,
            ..AdamConfig::default()
        },
        &model.params,
    );
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = Vec::new();
    let mut cursor = 0;
    let mut epoch = 0;
    let mut losses = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let mut batch = Vec::with_capacity(cfg.batch);
        while batch.len() < cfg.batch {
            if cursor == order.len() {
                if !order.is_empty() {
                    epoch += 1;
                    validate(model, val, cfg, epoch, &mut log)?;
                }
                order = (0..pairs.len()).collect();
                order.shuffle(&mut rng);
                cursor = 0;
            }
            batch.push(&pairs[order[cursor]]);
            cursor += 1;
        }
        let c = &model.config;
        let lambda = lambda_at(c.lambda, c.lambda_warmup, step, cfg.steps);
        let loss = train_step(model, &mut adam, &batch, lambda, step)?;
        log(&LogRecord::Step {
            step,
            loss_cls: loss.cls,
            loss_reg: loss.reg,
            loss_total: loss.total,
        })?;
        losses.push(loss);
    }
    Ok(losses)
}

fn validate<F>(
    model: &CorrAdaptor,
    val: &[ScenePair],
    cfg: &TrainConfig,
    epoch: usize,
    log: &mut F,
) -> Result<(), ModelError>
where
    F: FnMut(&LogRecord) -> Result<(), ModelError>,
{
    if val.is_empty() || cfg.val_every_epochs == 0 || epoch % cfg.val_every_epochs != 0 {
        return Ok(());
    }
    let report = evaluate_model(model, val, cfg.pose_path)?;
    log(&LogRecord::Validation {
        epoch,
        summary: report.summary(),
    })
}
