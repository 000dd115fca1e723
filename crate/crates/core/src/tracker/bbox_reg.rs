//! Ridge-regression bounding-box refinement from flattened front-end
//! features to the standard 4-d offset targets.

use nalgebra::{Cholesky, DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use crate::tracker::BoundingBox;

/// Linear model with intercept mapping features to
/// (dx/w, dy/h, log w-ratio, log h-ratio).
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BboxRegressor {
    /// (n_features + 1) × 4; last row is the intercept.
    weights: Vec<Vec<f64>>,
}

/// Offset parameterization between a source box and its ground truth.
fn targets(src: &BoundingBox, gt: &BoundingBox) -> [f64; 4] {
    let (scx, scy) = src.center();
    let (gcx, gcy) = gt.center();
    [
        (gcx - scx) / src.w,
        (gcy - scy) / src.h,
        (gt.w / src.w).ln(),
        (gt.h / src.h).ln(),
    ]
}

/// Inverts the parameterization.
fn apply_offsets(src: &BoundingBox, t: &[f64; 4]) -> BoundingBox {
    let (scx, scy) = src.center();
    let cx = scx + t[0] * src.w;
    let cy = scy + t[1] * src.h;
    let w = src.w * t[2].exp();
    let h = src.h * t[3].exp();
    BoundingBox::new(cx - w / 2.0, cy - h / 2.0, w, h)
}

/// Largest per-component offset magnitude accepted at prediction time. The
/// regressor is a refinement step; clamping keeps an extrapolated prediction
/// from throwing the box off the target.
const MAX_OFFSET: f64 = 0.2;

/// Fits the ridge system (A^T A + lambda I) W = A^T T in closed form. The
/// intercept column is not penalized.
pub fn bbox_regress_train(
    features: &[Tensor],
    src: &[BoundingBox],
    gt: &[BoundingBox],
    lambda: f64,
) -> Result<BboxRegressor> {
    if features.len() < 4 || features.len() != src.len() || features.len() != gt.len() {
        return Err(Error::Invalid(format!(
            "bbox regression needs >= 4 aligned samples, got {}/{}/{}",
            features.len(),
            src.len(),
            gt.len()
        )));
    }
    let n = features.len();
    let d = features[0].len() + 1;
    let mut a = DMatrix::zeros(n, d);
    let mut t = DMatrix::zeros(n, 4);
    for (row, ((f, s), g)) in features.iter().zip(src).zip(gt).enumerate() {
        for (col, v) in f.data().iter().enumerate() {
            a[(row, col)] = *v;
        }
        a[(row, d - 1)] = 1.0;
        for (col, v) in targets(s, g).iter().enumerate() {
            t[(row, col)] = *v;
        }
    }
    let mut normal = a.transpose() * &a;
    for i in 0..d - 1 {
        normal[(i, i)] += lambda;
    }
    let chol = Cholesky::new(normal).ok_or(Error::SingularSystem)?;
    let rhs = a.transpose() * t;
    let mut weights = vec![vec![0.0; 4]; d];
    for col in 0..4 {
        let sol: DVector<f64> = chol.solve(&rhs.column(col).into_owned());
        for i in 0..d {
            weights[i][col] = sol[i];
        }
    }
    Ok(BboxRegressor { weights })
}

impl BboxRegressor {
    pub fn n_features(&self) -> usize {
        self.weights.len() - 1
    }

    pub fn predict(&self, features: &Tensor, src: &BoundingBox) -> BoundingBox {
        let mut t = [0.0; 4];
        for col in 0..4 {
            let mut acc = self.weights[self.weights.len() - 1][col];
            for (i, v) in features.data().iter().enumerate() {
                acc += v * self.weights[i][col];
            }
            t[col] = acc.clamp(-MAX_OFFSET, MAX_OFFSET);
        }
        apply_offsets(src, &t)
    }
}
