//! One-pass-evaluation metrics: precision and success curves with their
//! discrete AUC, and the exponential robustness score.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tracker::{iou, BoundingBox};

/// Default sensitivity of the robustness score.
pub const ROBUSTNESS_S: f64 = 100.0;
/// Operating point of the reported precision scalar, in pixels.
pub const PRECISION_AT_PX: f64 = 20.0;

/// A metric swept over ascending thresholds; `auc` is the mean of `values`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Curve {
    pub thresholds: Vec<f64>,
    pub values: Vec<f64>,
    pub auc: f64,
}

impl Curve {
    fn from_counts(thresholds: Vec<f64>, values: Vec<f64>) -> Curve {
        let auc = values.iter().sum::<f64>() / values.len() as f64;
        Curve {
            thresholds,
            values,
            auc,
        }
    }

    /// Value at the given threshold (which must be on the grid).
    pub fn value_at(&self, threshold: f64) -> Option<f64> {
        self.thresholds
            .iter()
            .position(|&t| t == threshold)
            .map(|i| self.values[i])
    }
}

/// Euclidean distance between box centers, in pixels.
pub fn center_error(pred: &BoundingBox, gt: &BoundingBox) -> f64 {
    let (px, py) = pred.center();
    let (gx, gy) = gt.center();
    ((px - gx).powi(2) + (py - gy).powi(2)).sqrt()
}

/// Fraction of frames with center error <= t, for t in 0..=50 px step 1.
pub fn precision_curve(errors: &[f64]) -> Result<Curve> {
    if errors.is_empty() {
        return Err(Error::Invalid("precision curve needs at least one frame".into()));
    }
    let thresholds: Vec<f64> = (0..=50).map(|t| t as f64).collect();
    let n = errors.len() as f64;
    let values = thresholds
        .iter()
        .map(|&t| errors.iter().filter(|&&e| e <= t).count() as f64 / n)
        .collect();
    Ok(Curve::from_counts(thresholds, values))
}

/// Fraction of frames with IoU > t, for t in 0..=1 step 0.02.
pub fn success_curve(ious: &[f64]) -> Result<Curve> {
    if ious.is_empty() {
        return Err(Error::Invalid("success curve needs at least one frame".into()));
    }
    let thresholds: Vec<f64> = (0..=50).map(|t| t as f64 * 0.02).collect();
    let n = ious.len() as f64;
    let values = thresholds
        .iter()
        .map(|&t| ious.iter().filter(|&&v| v > t).count() as f64 / n)
        .collect();
    Ok(Curve::from_counts(thresholds, values))
}

/// exp(-S * F) for failure rate F.
pub fn robustness(f: f64, s: f64) -> f64 {
    (-s * f).exp()
}

/// Fraction of frames with zero overlap against ground truth; the failure
/// definition behind the robustness score.
pub fn failure_rate(pred: &[BoundingBox], gt: &[BoundingBox]) -> f64 {
    let failures = pred
        .iter()
        .zip(gt)
        .filter(|(p, g)| iou(p, g) == 0.0)
        .count();
    failures as f64 / pred.len() as f64
}

/// Per-frame IoUs of a prediction track against ground truth.
pub fn overlap_track(pred: &[BoundingBox], gt: &[BoundingBox]) -> Vec<f64> {
    pred.iter().zip(gt).map(|(p, g)| iou(p, g)).collect()
}

/// Per-frame center errors of a prediction track against ground truth.
pub fn error_track(pred: &[BoundingBox], gt: &[BoundingBox]) -> Vec<f64> {
    pred.iter().zip(gt).map(|(p, g)| center_error(p, g)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn center_error_spot_values() {
        let a = BoundingBox::new(0.0, 0.0, 4.0, 4.0);
        assert_eq!(center_error(&a, &a), 0.0);
        let b = BoundingBox::new(3.0, 4.0, 4.0, 4.0);
        assert!((center_error(&a, &b) - 5.0).abs() < 1e-15);
        assert_eq!(center_error(&a, &b), center_error(&b, &a));
    }

    #[test]
    fn precision_spot_values() {
        let c = precision_curve(&[0.0, 0.0, 0.0]).unwrap();
        assert!(c.values.iter().all(|&v| v == 1.0));
        assert_eq!(c.auc, 1.0);

        let c = precision_curve(&[10.0, 30.0]).unwrap();
        assert_eq!(c.value_at(PRECISION_AT_PX), Some(0.5));
    }

    #[test]
    fn success_extremes() {
        let c = success_curve(&[1.0; 7]).unwrap();
        // iou > t holds for every threshold except t = 1.0
        assert!((c.auc - 1.0).abs() <= 0.02 + 1e-12);
        let c = success_curve(&[0.0; 7]).unwrap();
        assert_eq!(c.auc, 0.0);
    }

    #[test]
    fn empty_inputs_error() {
        assert!(precision_curve(&[]).is_err());
        assert!(success_curve(&[]).is_err());
    }

    #[test]
    fn curves_match_counting_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for _ in 0..60 {
            let n = rng.gen_range(1..40);
            let errors: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..60.0)).collect();
            let ious: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..1.0)).collect();

            let p = precision_curve(&errors).unwrap();
            for (t, v) in p.thresholds.iter().zip(&p.values) {
                let count = errors.iter().filter(|&&e| e <= *t).count();
                assert_eq!(*v, count as f64 / n as f64);
            }
            let s = success_curve(&ious).unwrap();
            for (t, v) in s.thresholds.iter().zip(&s.values) {
                let count = ious.iter().filter(|&&i| i > *t).count();
                assert_eq!(*v, count as f64 / n as f64);
            }
        }
    }

    #[test]
    fn curve_monotonicity_and_auc_convention() {
        let mut rng = ChaCha8Rng::seed_from_u64(32);
        let errors: Vec<f64> = (0..25).map(|_| rng.gen_range(0.0..60.0)).collect();
        let ious: Vec<f64> = (0..25).map(|_| rng.gen_range(0.0..1.0)).collect();
        let p = precision_curve(&errors).unwrap();
        for w in p.values.windows(2) {
            assert!(w[1] >= w[0]);
        }
        let s = success_curve(&ious).unwrap();
        for w in s.values.windows(2) {
            assert!(w[1] <= w[0]);
        }
        // mean-of-values AUC agrees with the trapezoid rule within one step
        let mean = s.values.iter().sum::<f64>() / s.values.len() as f64;
        assert_eq!(s.auc, mean);
        let mut trap = 0.0;
        for w in s.values.windows(2) {
            trap += 0.02 * (w[0] + w[1]) / 2.0;
        }
        assert!((s.auc - trap).abs() <= 0.02);
    }

    #[test]
    fn robustness_spot_values() {
        assert_eq!(robustness(0.0, ROBUSTNESS_S), 1.0);
        assert!((robustness(0.01, 100.0) - (-1.0_f64).exp()).abs() < 1e-12);
        assert!((robustness(0.02, 100.0) - (-2.0_f64).exp()).abs() < 1e-12);
        // strictly decreasing in F
        let mut prev = robustness(0.0, 100.0);
        for i in 1..=10 {
            let r = robustness(i as f64 / 10.0, 100.0);
            assert!(r < prev);
            prev = r;
        }
    }

    #[test]
    fn failure_rate_counts_zero_overlap_frames() {
        let gt = vec![BoundingBox::new(0.0, 0.0, 2.0, 2.0); 4];
        let pred = vec![
            BoundingBox::new(0.0, 0.0, 2.0, 2.0),
            BoundingBox::new(1.0, 1.0, 2.0, 2.0),
            BoundingBox::new(10.0, 10.0, 2.0, 2.0),
            BoundingBox::new(-10.0, 0.0, 2.0, 2.0),
        ];
        assert_eq!(failure_rate(&pred, &gt), 0.5);
    }
}
