use rand::Rng;

use super::{Init, NumericsError, ParamId, ParamStore, Tape, Var, NORM_EPS};

type Result<T> = std::result::Result<T, NumericsError>;

/// Row-wise affine map `x · W + b`, `W` of shape `[input, output]`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub w: ParamId,
    pub b: Option<ParamId>,
    pub input: usize,
    pub output: usize,
}

impl Linear {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        rng: &mut R,
        name: &str,
        input: usize,
        output: usize,
        bias: bool,
    ) -> Result<Self> {
        let w = store.add(
            &format!("{name}.weight"),
            &[input, output],
            Init::Uniform { fan_in: input },
            rng,
        )?;
        let b = if bias {
            Some(store.add(
                &format!("{name}.bias"),
                &[1, output],
                Init::Uniform { fan_in: input },
                rng,
            )?)
        } else {
            None
        };
        Ok(Self {
            w,
            b,
            input,
            output,
        })
    }

    pub fn forward(&self, t: &mut Tape, x: Var) -> Result<Var> {
        let w = t.param(self.w)?;
        let b = self.b.map(|b| t.param(b)).transpose()?;
        t.linear(x, w, b)
    }

    /// Sets weight and bias to zero.
    pub fn zero(&self, store: &mut ParamStore) {
        store.get_mut(self.w).tensor.data_mut().fill(0.0);
        if let Some(b) = self.b {
            store.get_mut(b).tensor.data_mut().fill(0.0);
        }
    }
}

/// Per-channel scale and shift.
#[derive(Clone, Debug)]
pub struct Affine {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl Affine {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        rng: &mut R,
        name: &str,
        channels: usize,
    ) -> Result<Self> {
        Ok(Self {
            gamma: store.add(&format!("{name}.gamma"), &[1, channels], Init::Ones, rng)?,
            beta: store.add(&format!("{name}.beta"), &[1, channels], Init::Zeros, rng)?,
        })
    }

    pub fn forward(&self, t: &mut Tape, x: Var) -> Result<Var> {
        let g = t.param(self.gamma)?;
        let b = t.param(self.beta)?;
        let y = t.mul(x, g)?;
        t.add(y, b)
    }

    /// Batch normalisation with per-batch statistics. Correspondence sets are
    /// processed one pair at a time, so the batch statistics are the
    /// statistics over the rows of `x`.
    pub fn batch_norm(&self, t: &mut Tape, x: Var) -> Result<Var> {
        let n = t.context_norm(x, NORM_EPS)?;
        self.forward(t, n)
    }
}

/// Two-layer perceptron `Linear → ReLU → Linear`.
#[derive(Clone, Debug)]
pub struct Mlp {
    pub first: Linear,
    pub second: Linear,
}

impl Mlp {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        rng: &mut R,
        name: &str,
        input: usize,
        hidden: usize,
        output: usize,
    ) -> Result<Self> {
        Ok(Self {
            first: Linear::new(store, rng, &format!("{name}.0"), input, hidden, true)?,
            second: Linear::new(store, rng, &format!("{name}.1"), hidden, output, true)?,
        })
    }

    pub fn forward(&self, t: &mut Tape, x: Var) -> Result<Var> {
        let h = self.first.forward(t, x)?;
        let h = t.relu(h)?;
        self.second.forward(t, h)
    }

    /// Zeroes the output layer so the MLP emits exactly zero.
    pub fn zero_output(&self, store: &mut ParamStore) {
        self.second.zero(store);
    }
}

/// Residual PointCN block: two rounds of
/// `context norm → batch norm → ReLU → Linear`, plus a shortcut (projected
/// when the channel count changes).
#[derive(Clone, Debug)]
pub struct PointCn {
    pub norm1: Affine,
    pub lin1: Linear,
    pub norm2: Affine,
    pub lin2: Linear,
    pub shortcut: Option<Linear>,
}

impl PointCn {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        rng: &mut R,
        name: &str,
        input: usize,
        output: usize,
    ) -> Result<Self> {
        Ok(Self {
            norm1: Affine::new(store, rng, &format!("{name}.bn1"), input)?,
            lin1: Linear::new(store, rng, &format!("{name}.fc1"), input, output, true)?,
            norm2: Affine::new(store, rng, &format!("{name}.bn2"), output)?,
            lin2: Linear::new(store, rng, &format!("{name}.fc2"), output, output, true)?,
            shortcut: if input != output {
                Some(Linear::new(
                    store,
                    rng,
                    &format!("{name}.shortcut"),
                    input,
                    output,
                    true,
                )?)
            } else {
                None
            },
        })
    }

    pub fn forward(&self, t: &mut Tape, x: Var) -> Result<Var> {
        let h = self.norm1.batch_norm(t, x)?;
        let h = t.relu(h)?;
        let h = self.lin1.forward(t, h)?;
        let h = self.norm2.batch_norm(t, h)?;
        let h = t.relu(h)?;
        let h = self.lin2.forward(t, h)?;
        let skip = match &self.shortcut {
            Some(s) => s.forward(t, x)?,
            None => x,
        };
        t.add(h, skip)
    }
}
