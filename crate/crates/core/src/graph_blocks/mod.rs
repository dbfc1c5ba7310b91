//! Local context for correspondence sets: an explicit k-nearest-neighbour
//! graph in feature space with attention and annular aggregation, and an
//! implicit soft clustering (pool, order-aware filter, unpool).

mod annular;
mod attention;
mod cluster;
mod knn;

pub use annular::{annular_group_size, AnnularAggregate};
pub use attention::{gate_hidden, ChannelAttention, NeighborhoodAttention, SpatialAttention};
pub use cluster::{pool_with, unpool, ClusterPool, OaFilter, SoftAssignment, POOL_EPS};
pub use knn::{edge_features, knn_feature_graph, LocalGraph};

use rand::Rng;

use crate::numerics::{NumericsError, ParamStore, Tape, Var};

type Result<T> = std::result::Result<T, NumericsError>;

/// KNN graph → edge features → spatial, neighbourhood and channel attention
/// → annular aggregation. Maps `[N, d]` to `[N, d]`.
#[derive(Clone, Debug)]
pub struct ExplicitBranch {
    pub k: usize,
    pub spatial: SpatialAttention,
    pub neighborhood: NeighborhoodAttention,
    pub channel: ChannelAttention,
    pub annular: AnnularAggregate,
}

impl ExplicitBranch {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        rng: &mut R,
        name: &str,
        d: usize,
        k: usize,
    ) -> Result<Self> {
        let c = 2 * d;
        Ok(Self {
            k,
            spatial: SpatialAttention::new(store, rng, &format!("{name}.sa"), k, c)?,
            neighborhood: NeighborhoodAttention::new(store, rng, &format!("{name}.na"), k, c)?,
            channel: ChannelAttention::new(store, rng, &format!("{name}.ca"), c)?,
            annular: AnnularAggregate::new(store, rng, &format!("{name}.annular"), k, c, d)?,
        })
    }

    pub fn forward(&self, t: &mut Tape, f: Var) -> Result<Var> {
        let graph = knn_feature_graph(t.value(f), self.k)?;
        let g = edge_features(t, f, &graph)?;
        let g = self.spatial.forward(t, g)?;
        let g = self.neighborhood.forward(t, g)?;
        let g = self.channel.forward(t, g)?;
        self.annular.forward(t, g)
    }
}

/// Soft-assignment pool → order-aware filter → unpool. Maps `[N, d]` to
/// `[N, d]`; requires `N` greater than the cluster count.
#[derive(Clone, Debug)]
pub struct ImplicitBranch {
    pub pool: ClusterPool,
    pub filter: OaFilter,
}

impl ImplicitBranch {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        rng: &mut R,
        name: &str,
        d: usize,
        clusters: usize,
    ) -> Result<Self> {
        Ok(Self {
            pool: ClusterPool::new(store, rng, &format!("{name}.pool"), d, clusters)?,
            filter: OaFilter::new(store, rng, &format!("{name}.oa"), clusters, d)?,
        })
    }

    pub fn forward(&self, t: &mut Tape, f: Var) -> Result<Var> {
        let (g, s) = self.pool.forward(t, f)?;
        let g = self.filter.forward(t, g)?;
        unpool(t, g, &s)
    }
}
