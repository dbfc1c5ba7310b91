use rand::Rng;

use super::Result;
use crate::numerics::{Axis, Linear, NumericsError, ParamStore, PointCn, Tape, Var};

/// Guards the per-cluster normalisation of the pooled features.
pub const POOL_EPS: f64 = 1e-9;

/// Row-stochastic `[N, M]` assignment of correspondences to clusters, as a
/// tape variable.
#[derive(Clone, Copy, Debug)]
pub struct SoftAssignment(pub Var);

/// `S = softmax_clusters(F W + b)` and cluster features
/// `G = Sᵀ F / (colsum(S) + ε)`, each cluster a weighted mean of rows.
#[derive(Clone, Debug)]
pub struct ClusterPool {
    pub clusters: usize,
    pub score: Linear,
}

impl ClusterPool {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        rng: &mut R,
        name: &str,
        d: usize,
        clusters: usize,
    ) -> Result<Self> {
        Ok(Self {
            clusters,
            score: Linear::new(store, rng, &format!("{name}.score"), d, clusters, true)?,
        })
    }

    pub fn forward(&self, t: &mut Tape, f: Var) -> Result<(Var, SoftAssignment)> {
        let (n, _) = t.shape(f);
        if self.clusters >= n {
            return Err(NumericsError::Invalid(format!(
                "{} clusters for {n} correspondences; need fewer clusters than rows",
                self.clusters
            )));
        }
        let logits = self.score.forward(t, f)?;
        let s = t.softmax(logits, Axis::Cols)?;
        Ok((pool_with(t, f, s)?, SoftAssignment(s)))
    }
}

/// Assignment-weighted cluster means for a given `[N, M]` assignment.
pub fn pool_with(t: &mut Tape, f: Var, s: Var) -> Result<Var> {
    let g = t.matmul_t(s, f, true, false)?;
    let mass = t.sum(s, Axis::Rows)?;
    let mass = t.transpose(mass)?;
    let mass = t.offset(mass, POOL_EPS)?;
    t.div(g, mass)
}

/// `g + mixᵀ(PointCN(g))`, where `mix` is a linear map over the cluster axis.
/// With the mixing weights at zero the block is the identity.
#[derive(Clone, Debug)]
pub struct OaFilter {
    pub encoder: PointCn,
    pub mix: Linear,
}

impl OaFilter {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        rng: &mut R,
        name: &str,
        clusters: usize,
        d: usize,
    ) -> Result<Self> {
        Ok(Self {
            encoder: PointCn::new(store, rng, &format!("{name}.cn"), d, d)?,
            mix: Linear::new(store, rng, &format!("{name}.mix"), clusters, clusters, true)?,
        })
    }

    pub fn forward(&self, t: &mut Tape, g: Var) -> Result<Var> {
        let h = self.encoder.forward(t, g)?;
        let h = t.transpose(h)?;
        let h = self.mix.forward(t, h)?;
        let h = t.transpose(h)?;
        t.add(g, h)
    }
}

/// `S · g`: every correspondence receives the assignment-weighted mix of
/// cluster features.
pub fn unpool(t: &mut Tape, g: Var, s: &SoftAssignment) -> Result<Var> {
    let (_, m) = t.shape(s.0);
    let (mg, _) = t.shape(g);
    if m != mg {
        return Err(NumericsError::Shape(format!(
            "unpool: assignment has {m} clusters, features {mg}"
        )));
    }
    t.matmul(s.0, g)
}
