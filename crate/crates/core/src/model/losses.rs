use super::network::TapeForward;
use super::ModelError;
use crate::geometry::{virtual_correspondences, Correspondence, EssentialMatrix, EPIPOLAR_EPS};
use crate::numerics::{Tape, Tensor, Var};

/// Virtual correspondences scored by the regression loss.
pub const VIRTUAL_COUNT: usize = 169;

/// Epipolar rows of the virtual correspondences of a ground-truth matrix and
/// their inverse squared-gradient normalisers, precomputed once per pair.
#[derive(Clone, Debug, PartialEq)]
pub struct VirtualRows {
    /// `[M, 9]`.
    pub rows: Tensor,
    /// `[M, 1]`.
    pub inv_den: Tensor,
}

impl VirtualRows {
    pub fn new(e_gt: &EssentialMatrix) -> Self {
        let v = virtual_correspondences(e_gt, VIRTUAL_COUNT);
        let e = e_gt.matrix();
        let mut rows = Vec::with_capacity(9 * v.len());
        let mut inv_den = Vec::with_capacity(v.len());
        for (p, q) in v.p.iter().zip(&v.q) {
            let c = Correspondence::new(p.x, p.y, q.x, q.y);
            rows.extend(c.epipolar_row());
            let ep = e * p;
            let etq = e.transpose() * q;
            let den = ep.x * ep.x + ep.y * ep.y + etq.x * etq.x + etq.y * etq.y + EPIPOLAR_EPS;
            inv_den.push(1.0 / den);
        }
        let m = inv_den.len();
        Self {
            rows: Tensor::new(&[m, 9], rows).expect("nine values per row"),
            inv_den: Tensor::new(&[m, 1], inv_den).expect("one value per row"),
        }
    }

    pub fn len(&self) -> usize {
        self.inv_den.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inv_den.is_empty()
    }

    /// Loss of a row-major essential matrix against these rows.
    pub fn loss(&self, e: &[f64]) -> f64 {
        let m = self.len();
        (0..m)
            .map(|i| {
                let r: f64 = self.rows.row(i).iter().zip(e).map(|(a, b)| a * b).sum();
                r * r * self.inv_den.data()[i]
            })
            .sum::<f64>()
            / m as f64
    }

    /// Tape version of [`VirtualRows::loss`]; `e` is `[1, 9]`.
    pub fn loss_tape(&self, t: &mut Tape, e: Var) -> Result<Var, ModelError> {
        let rows = t.constant(self.rows.clone())?;
        let inv_den = t.constant(self.inv_den.clone())?;
        let r = t.matmul_t(rows, e, false, true)?;
        let r2 = t.square(r)?;
        let w = t.mul(r2, inv_den)?;
        let s = t.sum_all(w)?;
        Ok(t.scale(s, 1.0 / self.len() as f64)?)
    }
}

/// Mean normalised epipolar residual of the virtual correspondences of
/// `e_gt` under `e_hat`.
pub fn regression_loss(e_hat: &EssentialMatrix, e_gt: &EssentialMatrix) -> f64 {
    VirtualRows::new(e_gt).loss(&e_hat.to_row_vec())
}

/// Sum over pruning blocks of the mean binary cross-entropy of the scaled
/// logits against the labels of the candidates each block saw.
pub fn classification_loss(
    t: &mut Tape,
    forward: &TapeForward,
    labels: &[bool],
    omega: f64,
) -> Result<Var, ModelError> {
    let mut total: Option<Var> = None;
    for (state, &logits) in forward.states.iter().zip(&forward.logits) {
        let y: Vec<f64> = state
            .candidates
            .iter()
            .map(|&i| {
                labels
                    .get(i)
                    .map(|&l| if l { 1.0 } else { 0.0 })
                    .ok_or_else(|| ModelError::Invalid(format!("no label for candidate {i}")))
            })
            .collect::<Result<_, _>>()?;
        let x = t.scale(logits, omega)?;
        let l = t.bce_with_logits(x, &y)?;
        total = Some(match total {
            Some(acc) => t.add(acc, l)?,
            None => l,
        });
    }
    total.ok_or_else(|| ModelError::Invalid("forward pass has no pruning blocks".into()))
}

#[derive(Clone, Copy, Debug)]
pub struct HybridLoss {
    pub cls: Var,
    /// Absent when the forward pass produced no essential matrix.
    pub reg: Option<Var>,
    pub total: Var,
}

/// `cls + λ·reg`. The regression term is skipped (not zero-weighted) when
/// `λ` is zero or the forward pass has no essential matrix.
pub fn hybrid_loss(
    t: &mut Tape,
    forward: &TapeForward,
    labels: &[bool],
    rows: &VirtualRows,
    lambda: f64,
    omega: f64,
) -> Result<HybridLoss, ModelError> {
    let cls = classification_loss(t, forward, labels, omega)?;
    let reg = match forward.e_hat {
        Some(e) => Some(rows.loss_tape(t, e)?),
        None => None,
    };
    let total = match reg {
        Some(r) if lambda > 0.0 => {
            let r = t.scale(r, lambda)?;
            t.add(cls, r)?
        }
        _ => cls,
    };
    Ok(HybridLoss { cls, reg, total })
}
