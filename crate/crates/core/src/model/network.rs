use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::prune::{inlier_weights, prune};
use super::{CorrAdaptorConfig, ModelError};
use crate::geometry::{epipolar_distances, Correspondence, EssentialMatrix, INLIER_THRESHOLD};
use crate::graph_blocks::{ExplicitBranch, ImplicitBranch};
use crate::motion_attention::{compute_motion, MotionInjection};
use crate::numerics::{context_norm, Linear, ParamStore, PointCn, Tape, Tensor, Var, NORM_EPS};

/// Candidates needed by the eight-point solver.
pub const MIN_CANDIDATES: usize = 8;

/// One branch followed by its own motion-injection stack.
#[derive(Clone, Debug)]
struct ExplicitPath {
    branch: ExplicitBranch,
    injection: MotionInjection,
}

#[derive(Clone, Debug)]
struct ImplicitPath {
    branch: ImplicitBranch,
    injection: MotionInjection,
}

#[derive(Clone, Debug)]
struct FusionRound {
    explicit: Option<ExplicitPath>,
    implicit: Option<ImplicitPath>,
}

#[derive(Clone, Debug)]
struct PruneBlock {
    motion_embed: Linear,
    rounds: Vec<FusionRound>,
    head: Linear,
}

/// What one pruning block saw and kept.
#[derive(Clone, Debug, PartialEq)]
pub struct PruneState {
    pub stage: usize,
    /// Original indices of the candidates entering the block, ascending.
    pub candidates: Vec<usize>,
    /// One logit per entering candidate.
    pub logits: Vec<f64>,
    /// Original indices of the surviving candidates, ascending.
    pub kept: Vec<usize>,
    /// Eight-point weights of the survivors.
    pub weights: Vec<f64>,
}

/// Tape handles of a forward pass, for building losses.
#[derive(Clone, Debug)]
pub struct TapeForward {
    pub states: Vec<PruneState>,
    /// `[N_b, 1]` logits of every block.
    pub logits: Vec<Var>,
    /// `[1, 9]` row-major essential matrix; absent when fewer than eight
    /// survivors carry positive weight or the weighted system is degenerate.
    pub e_hat: Option<Var>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelOutput {
    pub states: Vec<PruneState>,
    pub e_hat: EssentialMatrix,
    /// Symmetric epipolar distance of every input correspondence to `e_hat`.
    pub distances: Vec<f64>,
    /// Full-size verification of every input correspondence.
    pub inlier_mask: Vec<bool>,
}

/// The pruning network with its parameters.
#[derive(Clone, Debug)]
pub struct CorrAdaptor {
    pub config: CorrAdaptorConfig,
    pub params: ParamStore,
    embed: Linear,
    stem: PointCn,
    blocks: Vec<PruneBlock>,
}

pub fn correspondence_tensor(cs: &[Correspondence]) -> Tensor {
    Tensor::new(
        &[cs.len(), 4],
        cs.iter().flat_map(|c| c.as_array()).collect(),
    )
    .expect("four values per row")
}

impl CorrAdaptor {
    /// Registers and initialises every parameter from `seed`.
    pub fn new(config: CorrAdaptorConfig, seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let c = &config;
        let d = c.d;
        let embed = Linear::new(&mut store, &mut rng, "embed", 4, d, true)?;
        let stem = PointCn::new(&mut store, &mut rng, "stem", d, d)?;
        let mut blocks = Vec::with_capacity(c.pruning_blocks());
        for (b, &k) in c.k_per_block.iter().enumerate() {
            let name = format!("block{b}");
            let motion_embed =
                Linear::new(&mut store, &mut rng, &format!("{name}.motion"), 2, d, true)?;
            let mut rounds = Vec::with_capacity(c.fusion_iterations);
            for r in 0..c.fusion_iterations {
                let p = format!("{name}.round{r}");
                let injection = |store: &mut ParamStore, rng: &mut ChaCha8Rng, which: &str| {
                    MotionInjection::new(
                        store,
                        rng,
                        &format!("{p}.{which}.inject"),
                        d,
                        c.heads,
                        c.motion_iterations,
                        c.attention,
                        c.motion,
                    )
                };
                let explicit = if c.branches.explicit() {
                    Some(ExplicitPath {
                        branch: ExplicitBranch::new(
                            &mut store,
                            &mut rng,
                            &format!("{p}.explicit"),
                            d,
                            k,
                        )?,
                        injection: injection(&mut store, &mut rng, "explicit")?,
                    })
                } else {
                    None
                };
                let implicit = if c.branches.implicit() {
                    Some(ImplicitPath {
                        branch: ImplicitBranch::new(
                            &mut store,
                            &mut rng,
                            &format!("{p}.implicit"),
                            d,
                            c.clusters,
                        )?,
                        injection: injection(&mut store, &mut rng, "implicit")?,
                    })
                } else {
                    None
                };
                rounds.push(FusionRound { explicit, implicit });
            }
            let head = Linear::new(&mut store, &mut rng, &format!("{name}.head"), d, 1, true)?;
            blocks.push(PruneBlock {
                motion_embed,
                rounds,
                head,
            });
        }
        Ok(Self {
            config,
            params: store,
            embed,
            stem,
            blocks,
        })
    }

    /// Builds the forward graph on `t`, which must read this model's
    /// parameters.
    pub fn forward_tape(
        &self,
        t: &mut Tape,
        cs: &[Correspondence],
    ) -> Result<TapeForward, ModelError> {
        let sizes = self.config.stage_sizes(cs.len());
        let last = *sizes.last().expect("nonempty");
        if last < MIN_CANDIDATES {
            return Err(ModelError::TooFewCandidates {
                n: cs.len(),
                remaining: last,
            });
        }
        let x = t.constant(correspondence_tensor(cs))?;
        let h = self.embed.forward(t, x)?;
        let h = self.stem.forward(t, h)?;

        let mut candidates: Vec<usize> = (0..cs.len()).collect();
        let mut states = Vec::with_capacity(self.blocks.len());
        let mut logit_vars = Vec::with_capacity(self.blocks.len());
        for (stage, block) in self.blocks.iter().enumerate() {
            let f = if stage == 0 {
                h
            } else {
                t.gather_rows(h, &candidates)?
            };
            let subset: Vec<Correspondence> = candidates.iter().map(|&i| cs[i]).collect();
            // Raw motion is a few hundredths of a unit; standardising it keeps
            // the projected keys distinct enough for attention to discriminate.
            let motion = context_norm(&compute_motion(&subset), NORM_EPS)?;
            let motion = t.constant(motion)?;
            let motion = block.motion_embed.forward(t, motion)?;
            let mut fused = f;
            for round in &block.rounds {
                let e = match &round.explicit {
                    Some(p) => {
                        let e = p.branch.forward(t, fused)?;
                        Some(p.injection.forward(t, e, motion)?)
                    }
                    None => None,
                };
                let i = match &round.implicit {
                    Some(p) => {
                        let i = p.branch.forward(t, fused)?;
                        Some(p.injection.forward(t, i, motion)?)
                    }
                    None => None,
                };
                fused = match (e, i) {
                    (Some(e), Some(i)) => t.add(e, i)?,
                    (Some(v), None) | (None, Some(v)) => v,
                    (None, None) => unreachable!("configuration validated"),
                };
            }
            let logits = block.head.forward(t, fused)?;
            let values = t.value(logits).data().to_vec();
            let local = prune(&values, self.config.alpha);
            let kept: Vec<usize> = local.iter().map(|&i| candidates[i]).collect();
            let weights = inlier_weights(&local.iter().map(|&i| values[i]).collect::<Vec<_>>());
            states.push(PruneState {
                stage,
                candidates: std::mem::replace(&mut candidates, kept.clone()),
                logits: values,
                kept,
                weights,
            });
            logit_vars.push((logits, local));
        }

        let final_state = states.last().expect("at least one block");
        let positive = final_state.weights.iter().filter(|w| **w > 0.0).count();
        let e_hat = if positive >= MIN_CANDIDATES {
            let (logits, local) = logit_vars.last().expect("at least one block");
            let o = t.gather_rows(*logits, local)?;
            let w = t.relu(o)?;
            let w = t.tanh(w)?;
            let rows: Vec<f64> = final_state
                .kept
                .iter()
                .flat_map(|&i| cs[i].epipolar_row())
                .collect();
            let rows = t.constant(Tensor::new(&[final_state.kept.len(), 9], rows)?)?;
            t.weighted_null_vector(rows, w).ok()
        } else {
            None
        };
        Ok(TapeForward {
            states,
            logits: logit_vars.into_iter().map(|(v, _)| v).collect(),
            e_hat,
        })
    }

    /// Inference: pruning states, the estimated essential matrix and the
    /// full-size verification of `cs` against it.
    pub fn forward(&self, cs: &[Correspondence]) -> Result<ModelOutput, ModelError> {
        let mut t = Tape::inference(&self.params);
        let out = self.forward_tape(&mut t, cs)?;
        let Some(e) = out.e_hat else {
            let last = out.states.last().expect("at least one block");
            return Err(ModelError::TooFewWeights(
                last.weights.iter().filter(|w| **w > 0.0).count(),
            ));
        };
        let e_hat = EssentialMatrix::from_row_slice(t.value(e).data())?;
        let distances = epipolar_distances(&e_hat, cs);
        let inlier_mask = distances.iter().map(|d| *d < INLIER_THRESHOLD).collect();
        Ok(ModelOutput {
            states: out.states,
            e_hat,
            distances,
            inlier_mask,
        })
    }

    pub fn checkpoint_bytes(&self) -> Vec<u8> {
        self.params.to_checkpoint_bytes()
    }

    /// Rebuilds the network for `config` and loads its parameters.
    pub fn from_checkpoint<R: std::io::Read>(
        config: CorrAdaptorConfig,
        r: R,
    ) -> Result<Self, ModelError> {
        let mut model = Self::new(config, 0)?;
        model.params.load_checkpoint(r)?;
        Ok(model)
    }
}
