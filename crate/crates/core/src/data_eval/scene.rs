use nalgebra::{Rotation3, Unit, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, UnitSphere};
use serde::{Deserialize, Serialize};

use super::DataError;
use crate::geometry::{
    compose_essential, symmetric_epipolar_distance, Correspondence, EssentialMatrix, RelativePose,
    INLIER_THRESHOLD,
};
use crate::model::inlier_labels;

/// Largest rotation angle of a generated pose, in degrees.
pub const MAX_ROTATION_DEG: f64 = 30.0;
/// Depth range of generated 3-D points in view A.
pub const DEPTH_RANGE: (f64, f64) = (4.0, 8.0);
/// Half-width of the normalised image window points are sampled in.
pub const IMAGE_HALF_WIDTH: f64 = 0.5;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GroundTruth {
    pub pose: RelativePose,
    pub essential: EssentialMatrix,
}

impl GroundTruth {
    pub fn new(pose: RelativePose) -> Self {
        Self {
            pose,
            essential: compose_essential(&pose),
        }
    }
}

/// Generator settings of a synthetic pair.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneParams {
    pub n: usize,
    pub outlier_ratio: f64,
    pub noise_sigma: f64,
    pub seed: u64,
}

/// One image pair: correspondences plus whatever ground truth is known.
#[derive(Clone, Debug, PartialEq)]
pub struct ScenePair {
    pub correspondences: Vec<Correspondence>,
    pub labels: Option<Vec<bool>>,
    pub ground_truth: Option<GroundTruth>,
    /// Present for generated pairs only.
    pub params: Option<SceneParams>,
}

impl ScenePair {
    pub fn len(&self) -> usize {
        self.correspondences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.correspondences.is_empty()
    }

    /// Stored labels, or labels derived from the ground-truth essential
    /// matrix when the file carried none.
    pub fn labels_or_derived(&self) -> Option<Vec<bool>> {
        self.labels.clone().or_else(|| {
            self.ground_truth
                .map(|gt| inlier_labels(&self.correspondences, &gt.essential))
        })
    }
}

/// Decorrelated per-item seed derived from a base seed (SplitMix64 finaliser).
pub fn split_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed.wrapping_add(index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

const OUTLIER_REDRAWS: usize = 64;

/// Random pose, points in a frustum in front of view A, exact projections
/// perturbed by Gaussian noise, and outliers whose view-B point is resampled
/// uniformly over the bounding box of all projections (outside the inlier
/// band around the epipolar line). Labels are the
/// thresholded epipolar distances against the ground truth.
pub fn synth_scene(params: SceneParams) -> Result<ScenePair, DataError> {
    let SceneParams {
        n,
        outlier_ratio,
        noise_sigma,
        seed,
    } = params;
    if n < 16 {
        return Err(DataError::Invalid(format!("scene needs n >= 16, got {n}")));
    }
    if !(0.0..1.0).contains(&outlier_ratio) {
        return Err(DataError::Invalid(format!(
            "outlier ratio {outlier_ratio} outside [0, 1)"
        )));
    }
    if !(noise_sigma >= 0.0 && noise_sigma.is_finite()) {
        return Err(DataError::Invalid(format!("bad noise sigma {noise_sigma}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pose = random_pose(&mut rng);
    let (lo, hi) = DEPTH_RANGE;
    let mut corr: Vec<Correspondence> = (0..n)
        .map(|_| {
            let z = rng.gen_range(lo..hi);
            let x = Vector3::new(
                rng.gen_range(-IMAGE_HALF_WIDTH..IMAGE_HALF_WIDTH),
                rng.gen_range(-IMAGE_HALF_WIDTH..IMAGE_HALF_WIDTH),
                1.0,
            ) * z;
            let xb = pose.transform(&x);
            Correspondence::new(x.x / x.z, x.y / x.z, xb.x / xb.z, xb.y / xb.z)
        })
        .collect();

    let (mut umin, mut umax, mut vmin, mut vmax) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
    for c in &corr {
        umin = umin.min(c.u);
        umax = umax.max(c.u);
        vmin = vmin.min(c.v);
        vmax = vmax.max(c.v);
    }
    let gt = GroundTruth::new(pose);
    let noise = Normal::new(0.0, noise_sigma).expect("sigma validated");
    for c in &mut corr {
        if rng.gen_bool(outlier_ratio) {
            // Redraw outliers that fall inside the inlier band so the label
            // fraction tracks the requested ratio.
            for _ in 0..OUTLIER_REDRAWS {
                c.u = rng.gen_range(umin..=umax);
                c.v = rng.gen_range(vmin..=vmax);
                if symmetric_epipolar_distance(&gt.essential, c) >= INLIER_THRESHOLD {
                    break;
                }
            }
        } else if noise_sigma > 0.0 {
            c.x += noise.sample(&mut rng);
            c.y += noise.sample(&mut rng);
            c.u += noise.sample(&mut rng);
            c.v += noise.sample(&mut rng);
        }
    }
    let labels = inlier_labels(&corr, &gt.essential);
    Ok(ScenePair {
        correspondences: corr,
        labels: Some(labels),
        ground_truth: Some(gt),
        params: Some(params),
    })
}

fn random_pose(rng: &mut ChaCha8Rng) -> RelativePose {
    let axis: [f64; 3] = UnitSphere.sample(rng);
    let angle = rng.gen_range(0.0..MAX_ROTATION_DEG.to_radians());
    let r = Rotation3::from_axis_angle(&Unit::new_normalize(Vector3::from(axis)), angle);
    let t: [f64; 3] = UnitSphere.sample(rng);
    RelativePose::new(*r.matrix(), Vector3::from(t)).expect("sampled pose is valid")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(n: usize, outlier_ratio: f64, noise_sigma: f64, seed: u64) -> SceneParams {
        SceneParams {
            n,
            outlier_ratio,
            noise_sigma,
            seed,
        }
    }

    #[test]
    fn clean_scene_is_all_inliers() {
        let s = synth_scene(params(200, 0.0, 0.0, 1)).unwrap();
        assert!(s.labels.as_ref().unwrap().iter().all(|l| *l));
        let e = s.ground_truth.unwrap().essential;
        for c in &s.correspondences {
            assert!(symmetric_epipolar_distance(&e, c) < 1e-12);
            assert!(e.residual(c).abs() < 1e-10);
        }
        assert_eq!(s.len(), 200);
    }

    #[test]
    fn same_seed_same_scene() {
        let a = synth_scene(params(100, 0.5, 1e-3, 9)).unwrap();
        let b = synth_scene(params(100, 0.5, 1e-3, 9)).unwrap();
        assert_eq!(a, b);
        let c = synth_scene(params(100, 0.5, 1e-3, 10)).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn preconditions() {
        assert!(synth_scene(params(15, 0.0, 0.0, 0)).is_err());
        assert!(synth_scene(params(16, 1.0, 0.0, 0)).is_err());
        assert!(synth_scene(params(16, -0.1, 0.0, 0)).is_err());
        assert!(synth_scene(params(16, 0.1, -1.0, 0)).is_err());
    }

    #[test]
    fn label_fraction_is_binomial() {
        let (n, ratio) = (500usize, 0.5);
        let mut inliers = 0usize;
        for seed in 0..100 {
            let s = synth_scene(params(n, ratio, 1e-3, seed)).unwrap();
            inliers += s.labels.unwrap().iter().filter(|l| **l).count();
        }
        let total = (n * 100) as f64;
        let frac = inliers as f64 / total;
        let sigma = (ratio * (1.0 - ratio) / total).sqrt();
        assert!((frac - (1.0 - ratio)).abs() <= 3.0 * sigma, "{frac}");
    }

    #[test]
    fn split_seed_is_injective_on_small_ranges() {
        let seeds: std::collections::HashSet<u64> = (0..10_000).map(|i| split_seed(7, i)).collect();
        assert_eq!(seeds.len(), 10_000);
        assert_ne!(split_seed(7, 0), split_seed(8, 0));
    }
}
