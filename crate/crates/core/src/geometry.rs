//! Calibrated two-view geometry: essential matrices, epipolar distances,
//! pose decomposition, RANSAC and pose errors.
//!
//! Conventions: a correspondence pairs `p = (x, y, 1)` in view A with
//! `q = (u, v, 1)` in view B, both in intrinsics-normalised coordinates.
//! A 3-D point `X` in frame A maps to `R X + t` in frame B, and the essential
//! matrix `E = [t]ₓ R` satisfies `qᵀ E p = 0`.

use nalgebra::{Matrix3, Rotation3, Unit, Vector3, SVD};
use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numerics::linalg::{canonical_sign, weighted_gram_eigen};

/// Classification threshold on the symmetric epipolar distance.
pub const INLIER_THRESHOLD: f64 = 1e-4;

/// Guards the denominator of the symmetric epipolar distance.
pub const EPIPOLAR_EPS: f64 = 1e-12;

/// Grid side used for virtual correspondences.
pub const VIRTUAL_GRID: usize = 13;

#[derive(Debug, Error)]
pub enum GeometryError {
    #[error("invalid camera intrinsics: fx={fx}, fy={fy}")]
    InvalidIntrinsics { fx: f64, fy: f64 },
    #[error("need at least 8 positively weighted correspondences, got {0}")]
    NotEnoughPoints(usize),
    #[error("degenerate configuration: {0}")]
    Degenerate(String),
    #[error("ransac found no model supported by 8 or more inliers")]
    NoConsensus,
    #[error("invalid argument: {0}")]
    Invalid(String),
}

type Result<T> = std::result::Result<T, GeometryError>;

/// One putative match `(x, y) ↔ (u, v)` in normalised coordinates.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Correspondence {
    pub x: f64,
    pub y: f64,
    pub u: f64,
    pub v: f64,
}

impl Correspondence {
    pub fn new(x: f64, y: f64, u: f64, v: f64) -> Self {
        Self { x, y, u, v }
    }

    pub fn p(&self) -> Vector3<f64> {
        Vector3::new(self.x, self.y, 1.0)
    }

    pub fn q(&self) -> Vector3<f64> {
        Vector3::new(self.u, self.v, 1.0)
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.x, self.y, self.u, self.v]
    }

    pub fn is_finite(&self) -> bool {
        self.as_array().iter().all(|v| v.is_finite())
    }

    /// Row of the linear system `X · vec(E) = 0`, with `E` flattened
    /// row-major.
    pub fn epipolar_row(&self) -> [f64; 9] {
        let (x, y, u, v) = (self.x, self.y, self.u, self.v);
        [u * x, u * y, u, v * x, v * y, v, x, y, 1.0]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64) -> Result<Self> {
        let k = Self { fx, fy, cx, cy };
        k.validate()?;
        Ok(k)
    }

    fn validate(&self) -> Result<()> {
        if self.fx > 0.0 && self.fy > 0.0 && self.fx.is_finite() && self.fy.is_finite() {
            Ok(())
        } else {
            Err(GeometryError::InvalidIntrinsics {
                fx: self.fx,
                fy: self.fy,
            })
        }
    }
}

/// Pixel coordinates to the normalised image plane.
pub fn normalize_keypoints(pts: &[[f64; 2]], k: &CameraIntrinsics) -> Result<Vec<[f64; 2]>> {
    k.validate()?;
    Ok(pts
        .iter()
        .map(|p| [(p[0] - k.cx) / k.fx, (p[1] - k.cy) / k.fy])
        .collect())
}

/// Inverse of [`normalize_keypoints`].
pub fn denormalize_keypoints(pts: &[[f64; 2]], k: &CameraIntrinsics) -> Result<Vec<[f64; 2]>> {
    k.validate()?;
    Ok(pts
        .iter()
        .map(|p| [p[0] * k.fx + k.cx, p[1] * k.fy + k.cy])
        .collect())
}

/// Essential matrix scaled to unit Frobenius norm with its largest-magnitude
/// entry positive.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EssentialMatrix(Matrix3<f64>);

impl EssentialMatrix {
    pub fn from_matrix(m: Matrix3<f64>) -> Result<Self> {
        let n = m.norm();
        if !(n.is_finite() && n > 0.0) {
            return Err(GeometryError::Degenerate(
                "essential matrix with zero or non-finite norm".into(),
            ));
        }
        let m = m / n;
        let sign = canonical_sign(m.transpose().as_slice());
        Ok(Self(m * sign))
    }

    /// From nine values in row-major order.
    pub fn from_row_slice(v: &[f64]) -> Result<Self> {
        if v.len() != 9 {
            return Err(GeometryError::Invalid(format!(
                "essential matrix needs 9 values, got {}",
                v.len()
            )));
        }
        Self::from_matrix(Matrix3::from_row_slice(v))
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    /// Row-major entries.
    pub fn to_row_vec(&self) -> Vec<f64> {
        self.0.transpose().as_slice().to_vec()
    }

    pub fn residual(&self, c: &Correspondence) -> f64 {
        c.q().dot(&(self.0 * c.p()))
    }

    pub fn frobenius_distance(&self, other: &EssentialMatrix) -> f64 {
        (self.0 - other.0).norm()
    }
}

/// Rotation plus unit translation direction of view B relative to view A.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RelativePose {
    pub rotation: Rotation3<f64>,
    pub translation: Unit<Vector3<f64>>,
}

impl RelativePose {
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        let rtr = rotation * rotation.transpose();
        if (rtr - Matrix3::identity()).norm() > 1e-9 || (rotation.determinant() - 1.0).abs() > 1e-9
        {
            return Err(GeometryError::Invalid("rotation is not orthonormal".into()));
        }
        let n = translation.norm();
        if !(n.is_finite() && n > 0.0) {
            return Err(GeometryError::Invalid("zero translation".into()));
        }
        // Leave already-unit vectors untouched so text round trips are exact.
        let translation = if (n - 1.0).abs() <= 4.0 * f64::EPSILON {
            Unit::new_unchecked(translation)
        } else {
            Unit::new_normalize(translation)
        };
        Ok(Self {
            rotation: Rotation3::from_matrix_unchecked(rotation),
            translation,
        })
    }

    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        *self.rotation.matrix()
    }

    pub fn transform(&self, x: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * x + self.translation.into_inner()
    }
}

/// Virtual correspondence pairs that satisfy a ground-truth epipolar
/// constraint exactly.
#[derive(Clone, Debug, PartialEq)]
pub struct VirtualCorrespondences {
    pub p: Vec<Vector3<f64>>,
    pub q: Vec<Vector3<f64>>,
}

impl VirtualCorrespondences {
    pub fn len(&self) -> usize {
        self.p.len()
    }

    pub fn is_empty(&self) -> bool {
        self.p.is_empty()
    }
}

pub fn skew(t: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -t.z, t.y, t.z, 0.0, -t.x, -t.y, t.x, 0.0)
}

/// `E = [t]ₓ R`, canonicalised.
pub fn compose_essential(pose: &RelativePose) -> EssentialMatrix {
    EssentialMatrix::from_matrix(skew(&pose.translation) * pose.rotation_matrix())
        .expect("a valid pose has a nonzero essential matrix")
}

/// Minimises `Σ w_i (q_iᵀ E p_i)²` over unit-norm `E`: the eigenvector of the
/// smallest eigenvalue of `Xᵀ W X`.
pub fn weighted_eight_point(cands: &[Correspondence], weights: &[f64]) -> Result<EssentialMatrix> {
    if cands.len() != weights.len() {
        return Err(GeometryError::Invalid(format!(
            "{} correspondences but {} weights",
            cands.len(),
            weights.len()
        )));
    }
    if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
        return Err(GeometryError::Invalid(
            "weights must be finite and nonnegative".into(),
        ));
    }
    let positive = weights.iter().filter(|w| **w > 0.0).count();
    if positive < 8 {
        return Err(GeometryError::NotEnoughPoints(positive));
    }
    let rows: Vec<f64> = cands.iter().flat_map(|c| c.epipolar_row()).collect();
    let eig = weighted_gram_eigen(&rows, 9, weights)
        .map_err(|e| GeometryError::Degenerate(e.to_string()))?;
    let scale = eig.values[8].abs().max(f64::MIN_POSITIVE);
    if eig.values[1] <= 1e-14 * scale {
        return Err(GeometryError::Degenerate(
            "null space of the eight-point system has dimension above one".into(),
        ));
    }
    EssentialMatrix::from_row_slice(&eig.vector(0))
}

/// `(qᵀEp)² / ((Ep)₁² + (Ep)₂² + (Eᵀq)₁² + (Eᵀq)₂² + ε)`.
pub fn symmetric_epipolar_distance(e: &EssentialMatrix, c: &Correspondence) -> f64 {
    let (p, q) = (c.p(), c.q());
    let ep = e.matrix() * p;
    let etq = e.matrix().transpose() * q;
    let num = q.dot(&ep).powi(2);
    num / (ep.x * ep.x + ep.y * ep.y + etq.x * etq.x + etq.y * etq.y + EPIPOLAR_EPS)
}

pub fn epipolar_distances(e: &EssentialMatrix, cs: &[Correspondence]) -> Vec<f64> {
    cs.iter()
        .map(|c| symmetric_epipolar_distance(e, c))
        .collect()
}

/// Re-classifies every correspondence against `e`: inlier iff its symmetric
/// epipolar distance is below `threshold`.
pub fn full_size_verification(
    e: &EssentialMatrix,
    cs: &[Correspondence],
    threshold: f64,
) -> Vec<bool> {
    cs.iter()
        .map(|c| symmetric_epipolar_distance(e, c) < threshold)
        .collect()
}

/// The four `(R, t)` factorisations of `E`.
pub fn pose_candidates(e: &EssentialMatrix) -> [(Matrix3<f64>, Vector3<f64>); 4] {
    let svd = SVD::new(*e.matrix(), true, true);
    let mut u = svd.u.expect("u requested");
    let mut vt = svd.v_t.expect("v_t requested");
    // SVD returns singular values in descending order; the null direction is
    // the third column of U.
    if u.determinant() < 0.0 {
        u = -u;
    }
    if vt.determinant() < 0.0 {
        vt = -vt;
    }
    let w = Matrix3::new(0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0);
    let r1 = u * w * vt;
    let r2 = u * w.transpose() * vt;
    let t = u.column(2).into_owned();
    [(r1, t), (r1, -t), (r2, t), (r2, -t)]
}

/// Depths `(z_a, z_b)` with `z_b q ≈ z_a R p + t`, by linear least squares.
pub fn triangulate_depths(
    r: &Matrix3<f64>,
    t: &Vector3<f64>,
    c: &Correspondence,
) -> Option<(f64, f64)> {
    let a = r * c.p();
    let b = c.q();
    let (aa, bb, ab) = (a.dot(&a), b.dot(&b), a.dot(&b));
    let det = aa * bb - ab * ab;
    if det.abs() <= 1e-12 * aa * bb {
        return None;
    }
    // minimise |z_a a - z_b b + t|²
    let ra = -a.dot(t);
    let rb = b.dot(t);
    let za = (bb * ra + ab * rb) / det;
    let zb = (ab * ra + aa * rb) / det;
    Some((za, zb))
}

fn count_in_front(r: &Matrix3<f64>, t: &Vector3<f64>, cs: &[Correspondence]) -> usize {
    cs.iter()
        .filter(|c| matches!(triangulate_depths(r, t, c), Some((za, zb)) if za > 0.0 && zb > 0.0))
        .count()
}

/// Picks the factorisation of `e` that puts the most inliers in front of
/// both cameras. Fails when no candidate reaches a strict majority.
pub fn decompose_essential(
    e: &EssentialMatrix,
    inliers: &[Correspondence],
) -> Result<RelativePose> {
    if inliers.is_empty() {
        return Err(GeometryError::Invalid(
            "cheirality check needs at least one inlier".into(),
        ));
    }
    let cands = pose_candidates(e);
    let (best, count) = cands
        .iter()
        .enumerate()
        .map(|(i, (r, t))| (i, count_in_front(r, t, inliers)))
        .fold((0, 0), |acc, x| if x.1 > acc.1 { x } else { acc });
    if 2 * count <= inliers.len() {
        return Err(GeometryError::Degenerate(format!(
            "best pose has only {count} of {} points in front of both views",
            inliers.len()
        )));
    }
    let (r, t) = cands[best];
    RelativePose::new(r, t)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RansacConfig {
    pub iterations: usize,
    pub threshold: f64,
    pub seed: u64,
}

impl Default for RansacConfig {
    fn default() -> Self {
        Self {
            iterations: 1000,
            threshold: INLIER_THRESHOLD,
            seed: 0,
        }
    }
}

/// Eight-point RANSAC. Hypotheses are ranked by inlier count (ties keep the
/// earliest hypothesis); the winner is refit on its consensus set.
pub fn ransac_essential(
    cs: &[Correspondence],
    cfg: &RansacConfig,
) -> Result<(EssentialMatrix, Vec<bool>)> {
    if cfg.iterations == 0 {
        return Err(GeometryError::Invalid(
            "ransac needs at least one iteration".into(),
        ));
    }
    if cs.len() < 8 {
        return Err(GeometryError::NotEnoughPoints(cs.len()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let ones = [1.0; 8];
    let mut best: Option<(usize, EssentialMatrix)> = None;
    let mut sample = Vec::with_capacity(8);
    for _ in 0..cfg.iterations {
        sample.clear();
        sample.extend(index::sample(&mut rng, cs.len(), 8).iter().map(|i| cs[i]));
        let Ok(e) = weighted_eight_point(&sample, &ones) else {
            continue;
        };
        let support = cs
            .iter()
            .filter(|c| symmetric_epipolar_distance(&e, c) < cfg.threshold)
            .count();
        if best.as_ref().map_or(true, |(n, _)| support > *n) {
            best = Some((support, e));
        }
    }
    let (support, e) = best.ok_or(GeometryError::NoConsensus)?;
    if support < 8 {
        return Err(GeometryError::NoConsensus);
    }
    let mask = full_size_verification(&e, cs, cfg.threshold);
    let consensus: Vec<Correspondence> = cs
        .iter()
        .zip(&mask)
        .filter(|(_, m)| **m)
        .map(|(c, _)| *c)
        .collect();
    let refit = weighted_eight_point(&consensus, &vec![1.0; consensus.len()]).unwrap_or(e);
    let refit_mask = full_size_verification(&refit, cs, cfg.threshold);
    // Keep the refit only when it does not lose support.
    if refit_mask.iter().filter(|m| **m).count() >= support {
        Ok((refit, refit_mask))
    } else {
        Ok((e, mask))
    }
}

/// Pairs `(p, q)` generated by projecting a grid of 3-D points at depths in
/// `[4, 8]` in front of view A through a pose consistent with `e`.
pub fn virtual_correspondences(e: &EssentialMatrix, count: usize) -> VirtualCorrespondences {
    let side = VIRTUAL_GRID.max((count as f64).sqrt().ceil() as usize);
    let mut points = Vec::with_capacity(side * side);
    for i in 0..side {
        for j in 0..side {
            let x = -0.5 + i as f64 / (side - 1) as f64;
            let y = -0.5 + j as f64 / (side - 1) as f64;
            let z = 4.0 + 4.0 * ((i + 2 * j) % side) as f64 / (side - 1) as f64;
            points.push(Vector3::new(x, y, 1.0) * z);
        }
    }
    points.truncate(count);
    let (r, t) = pose_candidates(e)
        .into_iter()
        .max_by_key(|(r, t)| points.iter().filter(|x| (r * *x + t).z > 0.0).count())
        .expect("four candidates");
    let mut out = VirtualCorrespondences {
        p: Vec::with_capacity(count),
        q: Vec::with_capacity(count),
    };
    for x in &points {
        let xb = r * x + t;
        if xb.z.abs() < 1e-9 {
            continue;
        }
        out.p.push(x / x.z);
        out.q.push(xb / xb.z);
    }
    out
}

/// Angle of a rotation matrix in radians, via `atan2` for accuracy near 0.
pub fn rotation_angle(r: &Matrix3<f64>) -> f64 {
    let cos = (r.trace() - 1.0) / 2.0;
    let axis = Vector3::new(
        r[(2, 1)] - r[(1, 2)],
        r[(0, 2)] - r[(2, 0)],
        r[(1, 0)] - r[(0, 1)],
    );
    let sin = axis.norm() / 2.0;
    sin.atan2(cos).clamp(0.0, std::f64::consts::PI)
}

/// `(rotation error, translation error)` in degrees. The translation error
/// ignores the sign of `t`, which an essential matrix does not determine.
pub fn pose_error(est: &RelativePose, gt: &RelativePose) -> (f64, f64) {
    let rel = est.rotation_matrix().transpose() * gt.rotation_matrix();
    let rot = rotation_angle(&rel).to_degrees();
    let (a, b) = (est.translation.into_inner(), gt.translation.into_inner());
    let trans = a.cross(&b).norm().atan2(a.dot(&b).abs()).to_degrees();
    (rot.clamp(0.0, 180.0), trans.clamp(0.0, 90.0))
}
