//! Tracking-by-detection pipeline: feature extraction, gated fusion, binary
//! classification, offline three-step training, first-frame initialization,
//! bounding-box regression, hard-negative mining and the periodic online
//! update.

mod bbox_reg;
mod model;
mod online;
mod sampling;
mod train;

pub use bbox_reg::{bbox_regress_train, BboxRegressor};
pub use model::{
    forward, forward_cached, front_features, model_backward, positive_margin, positive_score,
    ForwardCache, ParamClass, ParamPart, TrackerModel, Variant, POSITIVE_CLASS,
};
pub use online::{
    init_first_frame, select_best, track_step, update_online, FrameRecord, TrackerState,
};
pub use sampling::{extract_patch, generate_samples, Label, Sample};
pub use train::{train_offline, BatchRecord, TrainTrace};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Axis-aligned box in pixel units, top-left corner plus extent.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl BoundingBox {
    pub fn new(x: f64, y: f64, w: f64, h: f64) -> BoundingBox {
        BoundingBox { x, y, w, h }
    }

    pub fn center(&self) -> (f64, f64) {
        (self.x + self.w / 2.0, self.y + self.h / 2.0)
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    pub fn is_valid(&self) -> bool {
        self.w > 0.0 && self.h > 0.0 && [self.x, self.y, self.w, self.h].iter().all(|v| v.is_finite())
    }
}

/// Intersection-over-union of two boxes, in [0,1].
pub fn iou(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let ix = (a.x + a.w).min(b.x + b.w) - a.x.max(b.x);
    let iy = (a.y + a.h).min(b.y + b.h) - a.y.max(b.y);
    if ix <= 0.0 || iy <= 0.0 {
        return 0.0;
    }
    let inter = ix * iy;
    inter / (a.area() + b.area() - inter)
}

/// Indices of the k largest scores, ties broken toward the lower index.
pub fn hard_negative_mining(scores: &[f64], k: usize) -> Result<Vec<usize>> {
    if k > scores.len() {
        return Err(Error::Invalid(format!(
            "cannot mine {} hard negatives from {} scores",
            k,
            scores.len()
        )));
    }
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| {
        scores[b]
            .partial_cmp(&scores[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    idx.truncate(k);
    Ok(idx)
}
