//! Residual gates on edge features laid out as `[N·k, C]`, row `i·k + j`
//! holding neighbour `j` of correspondence `i`. Each block computes
//! `Ĝ = PointCN(G)`, pools `Ĝ` (average plus max) down to one axis, turns the
//! pooled descriptor into a sigmoid gate with a small MLP and returns
//! `Ĝ ⊙ gate + G`.

use rand::Rng;

use super::Result;
use crate::numerics::{Axis, Mlp, ParamStore, PointCn, Tape, Tensor, Var};

/// Hidden width of a gate MLP: a quarter of its input, at least one.
pub fn gate_hidden(dim: usize) -> usize {
    dim.div_ceil(4).max(1)
}

fn avg_plus_max(t: &mut Tape, x: Var, axis: Axis) -> Result<Var> {
    let a = t.mean(x, axis)?;
    let m = t.max(x, axis)?;
    t.add(a, m)
}

fn rows_of(t: &Tape, g: Var, k: usize) -> usize {
    t.shape(g).0 / k
}

/// Gate over the neighbour slots of every correspondence (one value per
/// edge, shared by all channels).
#[derive(Clone, Debug)]
pub struct SpatialAttention {
    pub k: usize,
    pub encoder: PointCn,
    pub gate: Mlp,
}

impl SpatialAttention {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        rng: &mut R,
        name: &str,
        k: usize,
        channels: usize,
    ) -> Result<Self> {
        Ok(Self {
            k,
            encoder: PointCn::new(store, rng, &format!("{name}.cn"), channels, channels)?,
            gate: Mlp::new(store, rng, &format!("{name}.mlp"), k, gate_hidden(k), k)?,
        })
    }

    pub fn forward(&self, t: &mut Tape, g: Var) -> Result<Var> {
        let n = rows_of(t, g, self.k);
        let h = self.encoder.forward(t, g)?;
        let pooled = avg_plus_max(t, h, Axis::Cols)?;
        let pooled = t.reshape(pooled, n, self.k)?;
        let a = self.gate.forward(t, pooled)?;
        let a = t.sigmoid(a)?;
        let a = t.reshape(a, n * self.k, 1)?;
        let y = t.mul(h, a)?;
        t.add(y, g)
    }
}

/// One gate per neighbour slot, pooled over correspondences and channels.
#[derive(Clone, Debug)]
pub struct NeighborhoodAttention {
    pub k: usize,
    pub encoder: PointCn,
    pub gate: Mlp,
}

impl NeighborhoodAttention {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        rng: &mut R,
        name: &str,
        k: usize,
        channels: usize,
    ) -> Result<Self> {
        Ok(Self {
            k,
            encoder: PointCn::new(store, rng, &format!("{name}.cn"), channels, channels)?,
            gate: Mlp::new(store, rng, &format!("{name}.mlp"), k, gate_hidden(k), k)?,
        })
    }

    pub fn forward(&self, t: &mut Tape, g: Var) -> Result<Var> {
        let n = rows_of(t, g, self.k);
        let h = self.encoder.forward(t, g)?;
        let mean = t.mean(h, Axis::Cols)?;
        let mean = t.reshape(mean, n, self.k)?;
        let mean = t.mean(mean, Axis::Rows)?;
        let max = t.max(h, Axis::Cols)?;
        let max = t.reshape(max, n, self.k)?;
        let max = t.max(max, Axis::Rows)?;
        let pooled = t.add(mean, max)?;
        let a = self.gate.forward(t, pooled)?;
        let a = t.sigmoid(a)?;
        // [1, k] → [N, k] → [N·k, 1]
        let ones = t.constant(Tensor::full(&[n, self.k], 1.0))?;
        let a = t.mul(ones, a)?;
        let a = t.reshape(a, n * self.k, 1)?;
        let y = t.mul(h, a)?;
        t.add(y, g)
    }
}

/// One gate per channel, pooled over correspondences and neighbours.
#[derive(Clone, Debug)]
pub struct ChannelAttention {
    pub encoder: PointCn,
    pub gate: Mlp,
}

impl ChannelAttention {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        rng: &mut R,
        name: &str,
        channels: usize,
    ) -> Result<Self> {
        Ok(Self {
            encoder: PointCn::new(store, rng, &format!("{name}.cn"), channels, channels)?,
            gate: Mlp::new(
                store,
                rng,
                &format!("{name}.mlp"),
                channels,
                gate_hidden(channels),
                channels,
            )?,
        })
    }

    pub fn forward(&self, t: &mut Tape, g: Var) -> Result<Var> {
        let h = self.encoder.forward(t, g)?;
        let pooled = avg_plus_max(t, h, Axis::Rows)?;
        let a = self.gate.forward(t, pooled)?;
        let a = t.sigmoid(a)?;
        let y = t.mul(h, a)?;
        t.add(y, g)
    }
}
