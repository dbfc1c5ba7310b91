use serde::{Deserialize, Serialize};

use super::DataError;

/// Pose AUC thresholds in degrees.
pub const AUC_THRESHOLDS: [f64; 3] = [5.0, 10.0, 20.0];

/// Error recorded for a pair whose pose could not be estimated.
pub const FAILED_POSE_ERROR: f64 = 180.0;

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub fscore: f64,
}

impl Prf {
    pub fn from_pr(precision: f64, recall: f64) -> Self {
        let fscore = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        Self {
            precision,
            recall,
            fscore,
        }
    }
}

pub fn prf_metrics(pred: &[bool], gt: &[bool]) -> Result<Prf, DataError> {
    if pred.len() != gt.len() {
        return Err(DataError::Invalid(format!(
            "prediction has {} entries, labels {}",
            pred.len(),
            gt.len()
        )));
    }
    let (mut tp, mut fp, mut fneg) = (0usize, 0usize, 0usize);
    for (&p, &g) in pred.iter().zip(gt) {
        match (p, g) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fneg += 1,
            (false, false) => {}
        }
    }
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    Ok(Prf::from_pr(ratio(tp, tp + fp), ratio(tp, tp + fneg)))
}

/// Area under the cumulative recall curve up to each threshold, divided by
/// the threshold. The curve linearly interpolates `(0, 0)` and the points
/// `(e_(i), i / n)` with `e_(i) < t`, then stays flat up to `t`.
pub fn pose_auc(errors: &[f64], thresholds: &[f64]) -> Result<Vec<f64>, DataError> {
    if errors.is_empty() {
        return Err(DataError::Invalid("pose AUC of an empty error list".into()));
    }
    if errors.iter().any(|e| !e.is_finite() || *e < 0.0) {
        return Err(DataError::Invalid(
            "pose errors must be finite and nonnegative".into(),
        ));
    }
    let mut e = Vec::with_capacity(errors.len() + 1);
    e.push(0.0);
    e.extend_from_slice(errors);
    e[1..].sort_by(f64::total_cmp);
    let n = errors.len() as f64;
    let recall: Vec<f64> = (0..e.len()).map(|i| i as f64 / n).collect();
    thresholds
        .iter()
        .map(|&t| {
            if !(t > 0.0) {
                return Err(DataError::Invalid(format!("bad AUC threshold {t}")));
            }
            let last = e.partition_point(|&x| x < t);
            let mut area = 0.0;
            for i in 1..last {
                area += (e[i] - e[i - 1]) * (recall[i] + recall[i - 1]) / 2.0;
            }
            area += (t - e[last - 1]) * recall[last - 1];
            Ok(area / t)
        })
        .collect()
}

/// Per-pair evaluation row.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairMetrics {
    pub pair: usize,
    pub prf: Option<Prf>,
    pub rot_err: Option<f64>,
    pub trans_err: Option<f64>,
}

impl PairMetrics {
    /// `max(rotation error, translation error)`, the scalar ranked by AUC.
    pub fn pose_error(&self) -> Option<f64> {
        Some(self.rot_err?.max(self.trans_err?))
    }
}

/// Aggregate metrics: precision and recall are averaged over pairs and the
/// F-score is their harmonic mean.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsReport {
    pub prf: Option<Prf>,
    /// AUC at [`AUC_THRESHOLDS`], absent when no pair has a ground-truth pose.
    pub auc: Option<[f64; 3]>,
    pub rows: Vec<PairMetrics>,
}

/// The JSON report.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Summary {
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub fscore: Option<f64>,
    pub auc5: Option<f64>,
    pub auc10: Option<f64>,
    pub auc20: Option<f64>,
}

impl MetricsReport {
    pub fn from_rows(rows: Vec<PairMetrics>) -> Result<Self, DataError> {
        let prfs: Vec<Prf> = rows.iter().filter_map(|r| r.prf).collect();
        let prf = (!prfs.is_empty()).then(|| {
            let n = prfs.len() as f64;
            Prf::from_pr(
                prfs.iter().map(|p| p.precision).sum::<f64>() / n,
                prfs.iter().map(|p| p.recall).sum::<f64>() / n,
            )
        });
        let errors: Vec<f64> = rows.iter().filter_map(PairMetrics::pose_error).collect();
        let auc = if errors.is_empty() {
            None
        } else {
            let a = pose_auc(&errors, &AUC_THRESHOLDS)?;
            Some([a[0], a[1], a[2]])
        };
        Ok(Self { prf, auc, rows })
    }

    pub fn summary(&self) -> Summary {
        Summary {
            precision: self.prf.map(|p| p.precision),
            recall: self.prf.map(|p| p.recall),
            fscore: self.prf.map(|p| p.fscore),
            auc5: self.auc.map(|a| a[0]),
            auc10: self.auc.map(|a| a[1]),
            auc20: self.auc.map(|a| a[2]),
        }
    }

    /// Sorted pose errors, the data of an error-CDF plot.
    pub fn sorted_pose_errors(&self) -> Vec<f64> {
        let mut e: Vec<f64> = self
            .rows
            .iter()
            .filter_map(PairMetrics::pose_error)
            .collect();
        e.sort_by(f64::total_cmp);
        e
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn prf_examples() {
        let gt = [true, false, true, true];
        assert_eq!(prf_metrics(&gt, &gt).unwrap(), Prf::from_pr(1.0, 1.0));
        assert_eq!(Prf::from_pr(1.0, 1.0).fscore, 1.0);
        assert_eq!(prf_metrics(&[false; 4], &gt).unwrap(), Prf::default());
        assert!(prf_metrics(&[true], &gt).is_err());
    }

    #[test]
    fn prf_matches_counting_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..200 {
            let n = rng.gen_range(1..50);
            let pred: Vec<bool> = (0..n).map(|_| rng.gen()).collect();
            let gt: Vec<bool> = (0..n).map(|_| rng.gen()).collect();
            let tp = (0..n).filter(|&i| pred[i] && gt[i]).count() as f64;
            let pp = pred.iter().filter(|p| **p).count() as f64;
            let gp = gt.iter().filter(|g| **g).count() as f64;
            let p = if pp > 0.0 { tp / pp } else { 0.0 };
            let r = if gp > 0.0 { tp / gp } else { 0.0 };
            let f = if p + r > 0.0 {
                2.0 * p * r / (p + r)
            } else {
                0.0
            };
            let got = prf_metrics(&pred, &gt).unwrap();
            assert_eq!((got.precision, got.recall, got.fscore), (p, r, f));
        }
    }

    /// Midpoint Riemann sum on a 1e-3 degree grid of the recall curve that
    /// interpolates the errors below `t` and stays flat after the last one.
    fn fine_grid_auc(errors: &[f64], t: f64) -> f64 {
        let n = errors.len() as f64;
        let mut e: Vec<f64> = errors.iter().copied().filter(|&x| x < t).collect();
        e.sort_by(f64::total_cmp);
        let curve = |x: f64| {
            let mut prev = (0.0, 0.0);
            for (i, &ei) in e.iter().enumerate() {
                let cur = (ei, (i + 1) as f64 / n);
                if x < cur.0 {
                    return prev.1 + (cur.1 - prev.1) * (x - prev.0) / (cur.0 - prev.0);
                }
                prev = cur;
            }
            prev.1
        };
        let h = 1e-3;
        let steps = (t / h).round() as usize;
        (0..steps)
            .map(|i| curve((i as f64 + 0.5) * h) * h)
            .sum::<f64>()
            / t
    }

    #[test]
    fn auc_examples() {
        assert_eq!(pose_auc(&[0.0; 5], &AUC_THRESHOLDS).unwrap(), vec![1.0; 3]);
        assert_eq!(
            pose_auc(&[180.0; 5], &AUC_THRESHOLDS).unwrap(),
            vec![0.0; 3]
        );
        let got = pose_auc(&[1.0, 3.0, 7.0], &[5.0]).unwrap()[0];
        assert!((got - fine_grid_auc(&[1.0, 3.0, 7.0], 5.0)).abs() < 1e-6);
        assert!((got - 0.5).abs() < 1e-15);
        assert!(pose_auc(&[], &AUC_THRESHOLDS).is_err());
        assert!(pose_auc(&[f64::NAN], &AUC_THRESHOLDS).is_err());
    }

    #[test]
    fn auc_matches_fine_grid_on_random_lists() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            let n = rng.gen_range(1..15);
            let e: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..25.0)).collect();
            for t in AUC_THRESHOLDS {
                let a = pose_auc(&e, &[t]).unwrap()[0];
                assert!((a - fine_grid_auc(&e, t)).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn report_summary_and_unavailable_pose() {
        let rows = vec![
            PairMetrics {
                pair: 0,
                prf: Some(Prf::from_pr(1.0, 0.5)),
                rot_err: Some(1.0),
                trans_err: Some(3.0),
            },
            PairMetrics {
                pair: 1,
                prf: Some(Prf::from_pr(0.5, 1.0)),
                rot_err: Some(2.0),
                trans_err: Some(1.0),
            },
        ];
        let r = MetricsReport::from_rows(rows.clone()).unwrap();
        let s = r.summary();
        assert_eq!((s.precision, s.recall), (Some(0.75), Some(0.75)));
        assert_eq!(s.fscore, Some(0.75));
        assert_eq!(r.sorted_pose_errors(), vec![2.0, 3.0]);
        let json = serde_json::to_value(s).unwrap();
        let mut keys: Vec<_> = json.as_object().unwrap().keys().cloned().collect();
        keys.sort();
        assert_eq!(
            keys,
            ["auc10", "auc20", "auc5", "fscore", "precision", "recall"]
        );

        let no_pose: Vec<_> = rows
            .into_iter()
            .map(|r| PairMetrics {
                rot_err: None,
                trans_err: None,
                ..r
            })
            .collect();
        assert_eq!(MetricsReport::from_rows(no_pose).unwrap().auc, None);
    }

    proptest! {
        #[test]
        fn auc_is_monotone_in_threshold(e in proptest::collection::vec(0.0f64..90.0, 1..30)) {
            let a = pose_auc(&e, &[1.0, 5.0, 10.0, 20.0, 45.0, 90.0]).unwrap();
            for w in a.windows(2) {
                prop_assert!(w[1] >= w[0] - 1e-12);
            }
        }

        #[test]
        fn prf_invariant_under_joint_permutation(
            v in proptest::collection::vec((any::<bool>(), any::<bool>()), 1..40),
            seed in any::<u64>(),
        ) {
            use rand::seq::SliceRandom;
            let mut w = v.clone();
            w.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            let split = |x: &[(bool, bool)]| -> (Vec<bool>, Vec<bool>) { x.iter().copied().unzip() };
            let (p1, g1) = split(&v);
            let (p2, g2) = split(&w);
            prop_assert_eq!(prf_metrics(&p1, &g1).unwrap(), prf_metrics(&p2, &g2).unwrap());
        }
    }
}
