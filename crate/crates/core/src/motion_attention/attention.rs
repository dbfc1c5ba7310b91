use serde::{Deserialize, Serialize};

use crate::numerics::linalg::{gemm, Transpose};
use crate::numerics::{Axis, NumericsError, Tape, Tensor, Var};

type Result<T> = std::result::Result<T, NumericsError>;

/// Guards incoming and outgoing flow against underflow.
pub const FLOW_EPS: f64 = 1e-9;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttentionKind {
    /// Linear-complexity flow attention.
    #[default]
    Flow,
    /// Softmax attention over the full `N × N` score matrix.
    #[serde(alias = "plain")]
    Dense,
}

impl AttentionKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::Flow => "flow",
            Self::Dense => "dense",
        }
    }

    pub fn apply(self, t: &mut Tape, q: Var, k: Var, v: Var) -> Result<Var> {
        match self {
            Self::Flow => flow_attention(t, q, k, v),
            Self::Dense => dense_attention(t, q, k, v),
        }
    }
}

impl std::fmt::Display for AttentionKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for AttentionKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "flow" => Ok(Self::Flow),
            "dense" | "plain" => Ok(Self::Dense),
            other => Err(format!("unknown attention kind {other:?}")),
        }
    }
}

fn check_shapes(t: &Tape, q: Var, k: Var, v: Var) -> Result<()> {
    let (_, dq) = t.shape(q);
    let (mk, dk) = t.shape(k);
    let (mv, _) = t.shape(v);
    if dq != dk || mk != mv {
        return Err(NumericsError::Shape(format!(
            "attention: q {:?}, k {:?}, v {:?}",
            t.shape(q),
            t.shape(k),
            t.shape(v)
        )));
    }
    Ok(())
}

/// Flow attention with `φ = elu + 1`, evaluated key side first so that no
/// `N × M` matrix is formed:
///
/// ```text
/// I = φQ · Σ_j φK_j + ε                    incoming flow of each sink
/// O = φK · Σ_i (φQ_i / I_i) + ε            outgoing flow of each source
/// Î = φQ · Σ_j (φK_j / O_j)                conserved incoming flow
/// V̂ = M · softmax_sources(O) ⊙ V           competition among sources
/// out = sigmoid(Î) ⊙ (φQ / I) (φKᵀ V̂)      allocation to sinks
/// ```
pub fn flow_attention(t: &mut Tape, q: Var, k: Var, v: Var) -> Result<Var> {
    check_shapes(t, q, k, v)?;
    let sources = t.shape(k).0;
    let pq = t.elu_plus_one(q)?;
    let pk = t.elu_plus_one(k)?;

    let k_sum = t.sum(pk, Axis::Rows)?;
    let incoming = t.matmul_t(pq, k_sum, false, true)?;
    let incoming = t.offset(incoming, FLOW_EPS)?;
    let q_norm = t.div(pq, incoming)?;

    let q_sum = t.sum(q_norm, Axis::Rows)?;
    let outgoing = t.matmul_t(pk, q_sum, false, true)?;
    let outgoing = t.offset(outgoing, FLOW_EPS)?;
    let k_norm = t.div(pk, outgoing)?;

    let k_norm_sum = t.sum(k_norm, Axis::Rows)?;
    let conserved = t.matmul_t(pq, k_norm_sum, false, true)?;

    let competition = t.softmax(outgoing, Axis::Rows)?;
    let competition = t.scale(competition, sources as f64)?;
    let v_hat = t.mul(v, competition)?;

    let kv = t.matmul_t(pk, v_hat, true, false)?;
    let agg = t.matmul(q_norm, kv)?;
    let gate = t.sigmoid(conserved)?;
    t.mul(agg, gate)
}

/// `softmax(Q Kᵀ / √d) V` with the full score matrix on the tape.
pub fn dense_attention(t: &mut Tape, q: Var, k: Var, v: Var) -> Result<Var> {
    check_shapes(t, q, k, v)?;
    let d = t.shape(q).1;
    let s = t.matmul_t(q, k, false, true)?;
    let s = t.scale(s, 1.0 / (d as f64).sqrt())?;
    let p = t.softmax(s, Axis::Cols)?;
    t.matmul(p, v)
}

/// Forward-only dense attention evaluated `chunk` query rows at a time, so
/// peak memory is `chunk × M` scores rather than `N × M`.
pub fn dense_attention_chunked(q: &Tensor, k: &Tensor, v: &Tensor, chunk: usize) -> Result<Tensor> {
    let (n, d) = (q.rows(), q.cols());
    let (m, dv) = (k.rows(), v.cols());
    if k.cols() != d || v.rows() != m || chunk == 0 {
        return Err(NumericsError::Shape(format!(
            "attention: q {:?}, k {:?}, v {:?}, chunk {chunk}",
            q.shape(),
            k.shape(),
            v.shape()
        )));
    }
    let scale = 1.0 / (d as f64).sqrt();
    let mut out = vec![0.0; n * dv];
    let mut scores = vec![0.0; chunk.min(n) * m];
    for start in (0..n).step_by(chunk) {
        let rows = chunk.min(n - start);
        let s = &mut scores[..rows * m];
        gemm(
            rows,
            d,
            m,
            &q.data()[start * d..],
            Transpose::No,
            d,
            k.data(),
            Transpose::Yes,
            d,
            s,
            false,
        );
        for row in s.chunks_mut(m) {
            let mx = row.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b * scale));
            let mut total = 0.0;
            for x in row.iter_mut() {
                *x = (*x * scale - mx).exp();
                total += *x;
            }
            row.iter_mut().for_each(|x| *x /= total);
        }
        gemm(
            rows,
            m,
            dv,
            s,
            Transpose::No,
            m,
            v.data(),
            Transpose::No,
            dv,
            &mut out[start * dv..(start + rows) * dv],
            false,
        );
    }
    Tensor::new(&[n, dv], out)
}
