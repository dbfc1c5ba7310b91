use rand::Rng;

use super::Result;
use crate::numerics::{Affine, Linear, NumericsError, ParamStore, Tape, Var};

/// Neighbours per group in the first aggregation stage.
pub fn annular_group_size(k: usize) -> usize {
    if k % 3 == 0 {
        3
    } else if k % 2 == 0 {
        2
    } else {
        k
    }
}

/// Collapses the `k` neighbour features of each correspondence in two
/// grouped stages: consecutive groups of neighbours are mixed into one
/// feature each, then the groups are mixed into one. Each stage is
/// `Linear → batch norm → ReLU`. Maps `[N·k, C]` to `[N, output]`.
#[derive(Clone, Debug)]
pub struct AnnularAggregate {
    pub k: usize,
    pub group: usize,
    pub inner: Linear,
    pub inner_norm: Affine,
    pub outer: Linear,
    pub outer_norm: Affine,
}

impl AnnularAggregate {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        rng: &mut R,
        name: &str,
        k: usize,
        channels: usize,
        output: usize,
    ) -> Result<Self> {
        if k == 0 {
            return Err(NumericsError::Invalid(
                "annular aggregation with k = 0".into(),
            ));
        }
        let group = annular_group_size(k);
        let groups = k / group;
        Ok(Self {
            k,
            group,
            inner: Linear::new(
                store,
                rng,
                &format!("{name}.inner"),
                group * channels,
                output,
                true,
            )?,
            inner_norm: Affine::new(store, rng, &format!("{name}.inner_bn"), output)?,
            outer: Linear::new(
                store,
                rng,
                &format!("{name}.outer"),
                groups * output,
                output,
                true,
            )?,
            outer_norm: Affine::new(store, rng, &format!("{name}.outer_bn"), output)?,
        })
    }

    pub fn groups(&self) -> usize {
        self.k / self.group
    }

    pub fn forward(&self, t: &mut Tape, g: Var) -> Result<Var> {
        let (rows, c) = t.shape(g);
        if rows % self.k != 0 {
            return Err(NumericsError::Shape(format!(
                "annular: {rows} edge rows is not a multiple of k={}",
                self.k
            )));
        }
        let n = rows / self.k;
        let x = t.reshape(g, n * self.groups(), self.group * c)?;
        let x = self.inner.forward(t, x)?;
        let x = self.inner_norm.batch_norm(t, x)?;
        let x = t.relu(x)?;
        let x = t.reshape(x, n, self.groups() * self.inner.output)?;
        let x = self.outer.forward(t, x)?;
        let x = self.outer_norm.batch_norm(t, x)?;
        t.relu(x)
    }
}
