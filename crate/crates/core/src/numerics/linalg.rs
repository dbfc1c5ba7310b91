use nalgebra::{DMatrix, SymmetricEigen};

use super::NumericsError;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Transpose {
    No,
    Yes,
}

impl From<bool> for Transpose {
    fn from(t: bool) -> Self {
        if t {
            Transpose::Yes
        } else {
            Transpose::No
        }
    }
}

/// `c (+)= op(a) · op(b)` with `op(a)` of shape `[m, k]` and `op(b)` of shape
/// `[k, n]`. `lda`/`ldb` are the row strides of the stored matrices.
#[allow(clippy::too_many_arguments)]
pub fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    ta: Transpose,
    lda: usize,
    b: &[f64],
    tb: Transpose,
    ldb: usize,
    c: &mut [f64],
    accumulate: bool,
) {
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        if !accumulate {
            c.fill(0.0);
        }
        return;
    }
    let (rsa, csa) = match ta {
        Transpose::No => (lda, 1),
        Transpose::Yes => (1, lda),
    };
    let (rsb, csb) = match tb {
        Transpose::No => (ldb, 1),
        Transpose::Yes => (1, ldb),
    };
    assert!(
        a.len() >= (m - 1) * rsa + (k - 1) * csa + 1,
        "gemm: lhs too short"
    );
    assert!(
        b.len() >= (k - 1) * rsb + (n - 1) * csb + 1,
        "gemm: rhs too short"
    );
    assert!(c.len() >= m * n, "gemm: output too short");
    let beta = if accumulate { 1.0 } else { 0.0 };
    // SAFETY: the asserts above bound every index touched by dgemm.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// `out = m · x` for a dense square `m` stored row-major.
pub fn sym_matvec(m: &[f64], x: &[f64], out: &mut [f64]) {
    let d = x.len();
    for (i, o) in out.iter_mut().enumerate().take(d) {
        *o = m[i * d..(i + 1) * d]
            .iter()
            .zip(x)
            .map(|(a, b)| a * b)
            .sum();
    }
}

/// `+1` or `-1` such that the largest-magnitude entry of `v` becomes
/// positive. Near-ties resolve to the earliest index.
pub fn canonical_sign(v: &[f64]) -> f64 {
    let max = v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let tol = max * 1e-9;
    v.iter()
        .find(|x| x.abs() >= max - tol)
        .map_or(1.0, |&x| if x < 0.0 { -1.0 } else { 1.0 })
}

/// Eigen-decomposition of a weighted Gram matrix `Σ w_i r_i r_iᵀ`, sorted by
/// ascending eigenvalue.
#[derive(Clone, Debug)]
pub struct GramEigen {
    pub dim: usize,
    pub values: Vec<f64>,
    /// Eigenvectors stored row by row, `vectors[k*dim..(k+1)*dim]`.
    pub vectors: Vec<f64>,
}

/// Relative eigen-gap below which a null-vector gradient term is dropped.
const MIN_GAP: f64 = 1e-12;

impl GramEigen {
    pub fn vector(&self, k: usize) -> Vec<f64> {
        self.vectors[k * self.dim..(k + 1) * self.dim].to_vec()
    }

    /// Given `g = dL/dv` for the smallest-eigenvalue eigenvector `v`,
    /// returns the symmetric `dL/dA` (row-major `dim × dim`).
    pub fn null_vector_gradient(&self, g: &[f64]) -> Vec<f64> {
        let d = self.dim;
        let v0 = self.vector(0);
        let scale = self.values.last().copied().unwrap_or(1.0).abs().max(1e-300);
        let mut m = vec![0.0; d * d];
        for k in 1..d {
            let gap = self.values[0] - self.values[k];
            if gap.abs() <= MIN_GAP * scale {
                continue;
            }
            let vk = &self.vectors[k * d..(k + 1) * d];
            let coef = vk.iter().zip(g).map(|(a, b)| a * b).sum::<f64>() / gap;
            for a in 0..d {
                for b in 0..d {
                    m[a * d + b] += coef * vk[a] * v0[b];
                }
            }
        }
        let mut sym = vec![0.0; d * d];
        for a in 0..d {
            for b in 0..d {
                sym[a * d + b] = 0.5 * (m[a * d + b] + m[b * d + a]);
            }
        }
        sym
    }
}

pub fn weighted_gram(rows: &[f64], dim: usize, w: &[f64]) -> Vec<f64> {
    let mut a = vec![0.0; dim * dim];
    for (r, &wi) in rows.chunks(dim).zip(w) {
        if wi == 0.0 {
            continue;
        }
        for i in 0..dim {
            let s = wi * r[i];
            for j in 0..dim {
                a[i * dim + j] += s * r[j];
            }
        }
    }
    a
}

pub fn weighted_gram_eigen(
    rows: &[f64],
    dim: usize,
    w: &[f64],
) -> Result<GramEigen, NumericsError> {
    let a = weighted_gram(rows, dim, w);
    if a.iter().any(|v| !v.is_finite()) {
        return Err(NumericsError::NonFinite("weighted gram matrix".into()));
    }
    let eig = SymmetricEigen::new(DMatrix::from_row_slice(dim, dim, &a));
    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut vectors = Vec::with_capacity(dim * dim);
    for &i in &order {
        vectors.extend(eig.eigenvectors.column(i).iter());
    }
    Ok(GramEigen {
        dim,
        values,
        vectors,
    })
}
