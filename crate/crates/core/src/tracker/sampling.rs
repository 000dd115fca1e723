//! Candidate patch extraction and IoU-labelled sample generation.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use crate::tracker::{iou, BoundingBox};

const REJECTION_BUDGET: usize = 10_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Label {
    Positive,
    Negative,
}

/// A cropped patch with its box and IoU-derived binary label.
#[derive(Clone, Debug)]
pub struct Sample {
    pub bbox: BoundingBox,
    pub patch: Tensor,
    pub label: Label,
    pub iou: f64,
}

/// Bilinear crop-and-resize of `bbox` from the frame to an out×out patch.
/// Area outside the frame is filled with the frame mean intensity.
pub fn extract_patch(frame: &Tensor, bbox: &BoundingBox, out: usize) -> Tensor {
    let (h, w, c) = (frame.dims()[0], frame.dims()[1], frame.dims()[2]);
    let mean: Vec<f64> = {
        let mut m = vec![0.0; c];
        for i in 0..h {
            for j in 0..w {
                for ch in 0..c {
                    m[ch] += frame.at3(i, j, ch);
                }
            }
        }
        m.iter().map(|v| v / (h * w) as f64).collect()
    };
    let sample_axis = |coord: f64, extent: usize| -> (isize, isize, f64) {
        let lo = coord.floor();
        let frac = coord - lo;
        let lo = lo as isize;
        let _ = extent;
        (lo, lo + 1, frac)
    };
    let fetch = |i: isize, j: isize, ch: usize| -> f64 {
        if i < 0 || j < 0 || i >= h as isize || j >= w as isize {
            mean[ch]
        } else {
            frame.at3(i as usize, j as usize, ch)
        }
    };
    let mut patch = Tensor::zeros(&[out, out, c]);
    for r in 0..out {
        let src_y = bbox.y + (r as f64 + 0.5) * bbox.h / out as f64 - 0.5;
        let (y0, y1, fy) = sample_axis(src_y, h);
        for col in 0..out {
            let src_x = bbox.x + (col as f64 + 0.5) * bbox.w / out as f64 - 0.5;
            let (x0, x1, fx) = sample_axis(src_x, w);
            for ch in 0..c {
                let v = (1.0 - fy) * ((1.0 - fx) * fetch(y0, x0, ch) + fx * fetch(y0, x1, ch))
                    + fy * ((1.0 - fx) * fetch(y1, x0, ch) + fx * fetch(y1, x1, ch));
                let idx = patch.idx3(r, col, ch);
                patch.data_mut()[idx] = v;
            }
        }
    }
    patch
}

/// Draws jittered boxes around `gt` and rejection-samples until exactly
/// `n_pos` have IoU >= 0.7 and `n_neg` have IoU <= 0.5.
pub fn generate_samples(
    frame: &Tensor,
    gt: &BoundingBox,
    n_pos: usize,
    n_neg: usize,
    patch_size: usize,
    rng: &mut impl Rng,
) -> Result<Vec<Sample>> {
    let mut out = Vec::with_capacity(n_pos + n_neg);
    draw_class(frame, gt, n_pos, patch_size, Label::Positive, rng, &mut out)?;
    draw_class(frame, gt, n_neg, patch_size, Label::Negative, rng, &mut out)?;
    Ok(out)
}

fn draw_class(
    frame: &Tensor,
    gt: &BoundingBox,
    n: usize,
    patch_size: usize,
    label: Label,
    rng: &mut impl Rng,
    out: &mut Vec<Sample>,
) -> Result<()> {
    if n == 0 {
        return Ok(());
    }
    // tight jitter for positives, wide for negatives
    let (trans_frac, scale_std) = match label {
        Label::Positive => (0.08, 0.05),
        Label::Negative => (0.7, 0.25),
    };
    let trans = Normal::new(0.0, 1.0).unwrap();
    let mut accepted = 0;
    for _ in 0..REJECTION_BUDGET {
        if accepted == n {
            break;
        }
        let size = (gt.w * gt.h).sqrt();
        let dx = trans.sample(rng) * trans_frac * size;
        let dy = trans.sample(rng) * trans_frac * size;
        let sw = (trans.sample(rng) * scale_std).exp();
        let sh = (trans.sample(rng) * scale_std).exp();
        let w = (gt.w * sw).max(2.0);
        let h = (gt.h * sh).max(2.0);
        let cand = BoundingBox::new(
            gt.x + gt.w / 2.0 + dx - w / 2.0,
            gt.y + gt.h / 2.0 + dy - h / 2.0,
            w,
            h,
        );
        let overlap = iou(&cand, gt);
        let keep = match label {
            Label::Positive => overlap >= 0.7,
            Label::Negative => overlap <= 0.5,
        };
        if keep {
            out.push(Sample {
                bbox: cand,
                patch: extract_patch(frame, &cand, patch_size),
                label,
                iou: overlap,
            });
            accepted += 1;
        }
    }
    if accepted < n {
        return Err(Error::RejectionBudget {
            class: match label {
                Label::Positive => "positive",
                Label::Negative => "negative",
            },
            budget: REJECTION_BUDGET,
        });
    }
    Ok(())
}
