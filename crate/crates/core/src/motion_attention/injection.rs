use rand::Rng;

use super::AttentionKind;
use crate::numerics::{Linear, NumericsError, ParamStore, Tape, Var};

type Result<T> = std::result::Result<T, NumericsError>;

pub const DEFAULT_HEADS: usize = 4;

/// Multi-head attention: per-head projections of queries, keys and values,
/// attention per head, concatenation, output projection.
#[derive(Clone, Debug)]
pub struct MultiHeadAttention {
    pub heads: usize,
    pub kind: AttentionKind,
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub out: Linear,
}

impl MultiHeadAttention {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        rng: &mut R,
        name: &str,
        d: usize,
        heads: usize,
        kind: AttentionKind,
    ) -> Result<Self> {
        if heads == 0 || d % heads != 0 {
            return Err(NumericsError::Invalid(format!(
                "model dim {d} is not divisible by {heads} heads"
            )));
        }
        Ok(Self {
            heads,
            kind,
            q: Linear::new(store, rng, &format!("{name}.q"), d, d, true)?,
            k: Linear::new(store, rng, &format!("{name}.k"), d, d, true)?,
            v: Linear::new(store, rng, &format!("{name}.v"), d, d, true)?,
            out: Linear::new(store, rng, &format!("{name}.out"), d, d, true)?,
        })
    }

    /// Queries from `x`, keys and values from `source`.
    pub fn forward(&self, t: &mut Tape, x: Var, source: Var) -> Result<Var> {
        let q = self.q.forward(t, x)?;
        let k = self.k.forward(t, source)?;
        let v = self.v.forward(t, source)?;
        let dh = t.shape(q).1 / self.heads;
        let mut parts = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let qh = t.slice_cols(q, h * dh, dh)?;
            let kh = t.slice_cols(k, h * dh, dh)?;
            let vh = t.slice_cols(v, h * dh, dh)?;
            parts.push(self.kind.apply(t, qh, kh, vh)?);
        }
        let cat = if parts.len() == 1 {
            parts[0]
        } else {
            t.concat_cols(&parts)?
        };
        self.out.forward(t, cat)
    }
}

/// `Linear(d → 2d) → ReLU → Linear(2d → d)`.
#[derive(Clone, Debug)]
pub struct FeedForward {
    pub first: Linear,
    pub second: Linear,
}

impl FeedForward {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        rng: &mut R,
        name: &str,
        d: usize,
    ) -> Result<Self> {
        Ok(Self {
            first: Linear::new(store, rng, &format!("{name}.0"), d, 2 * d, true)?,
            second: Linear::new(store, rng, &format!("{name}.1"), 2 * d, d, true)?,
        })
    }

    pub fn forward(&self, t: &mut Tape, x: Var) -> Result<Var> {
        let h = self.first.forward(t, x)?;
        let h = t.relu(h)?;
        self.second.forward(t, h)
    }
}

/// One round of self-attention, optional cross-attention to the motion
/// embedding, and feed-forward, each with a residual connection.
#[derive(Clone, Debug)]
pub struct InjectionLayer {
    pub self_attn: MultiHeadAttention,
    pub cross_attn: Option<MultiHeadAttention>,
    pub ffn: FeedForward,
}

/// `L_m` stacked [`InjectionLayer`]s. Built without cross-attention it only
/// refines features (the motion-off ablation).
#[derive(Clone, Debug)]
pub struct MotionInjection {
    pub layers: Vec<InjectionLayer>,
}

impl MotionInjection {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        rng: &mut R,
        name: &str,
        d: usize,
        heads: usize,
        iterations: usize,
        kind: AttentionKind,
        with_motion: bool,
    ) -> Result<Self> {
        if iterations == 0 {
            return Err(NumericsError::Invalid(
                "motion injection needs at least one iteration".into(),
            ));
        }
        let layers = (0..iterations)
            .map(|l| {
                let p = format!("{name}.{l}");
                Ok(InjectionLayer {
                    self_attn: MultiHeadAttention::new(
                        store,
                        rng,
                        &format!("{p}.self"),
                        d,
                        heads,
                        kind,
                    )?,
                    cross_attn: if with_motion {
                        Some(MultiHeadAttention::new(
                            store,
                            rng,
                            &format!("{p}.cross"),
                            d,
                            heads,
                            kind,
                        )?)
                    } else {
                        None
                    },
                    ffn: FeedForward::new(store, rng, &format!("{p}.ffn"), d)?,
                })
            })
            .collect::<Result<_>>()?;
        Ok(Self { layers })
    }

    /// `motion` is the embedded motion `[N, d]`; it is ignored by layers
    /// without cross-attention.
    pub fn forward(&self, t: &mut Tape, f: Var, motion: Var) -> Result<Var> {
        let mut f = f;
        for layer in &self.layers {
            let a = layer.self_attn.forward(t, f, f)?;
            f = t.add(f, a)?;
            if let Some(cross) = &layer.cross_attn {
                let a = cross.forward(t, f, motion)?;
                f = t.add(f, a)?;
            }
            let a = layer.ffn.forward(t, f)?;
            f = t.add(f, a)?;
        }
        Ok(f)
    }

    /// Zeroes every output projection, making the block the identity.
    pub fn zero_outputs(&self, store: &mut ParamStore) {
        for layer in &self.layers {
            layer.self_attn.out.zero(store);
            if let Some(c) = &layer.cross_attn {
                c.out.zero(store);
            }
            layer.ffn.second.zero(store);
        }
    }
}
