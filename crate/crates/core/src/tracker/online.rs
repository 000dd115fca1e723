//! First-frame initialization, per-frame candidate search and the periodic
//! online update.

use std::collections::VecDeque;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::TrackConfig;
use crate::error::{Error, Result};
use crate::gate::mean_gate;
use crate::tensor::Tensor;
use crate::tracker::model::{
    forward_cached, front_features, positive_margin, positive_score, ParamClass, ParamPart,
    TrackerModel,
};
use crate::tracker::sampling::{extract_patch, generate_samples, Label, Sample};
use crate::tracker::train::{active_in_mode, run_minibatch_phase, PhaseConfig, TrainTrace};
use crate::tracker::{bbox_regress_train, hard_negative_mining, BoundingBox};

/// Per-frame output record.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FrameRecord {
    pub frame: usize,
    pub bbox: BoundingBox,
    pub confidence: f64,
    pub mean_gate: Option<f64>,
}

/// Single-owner state of one tracked sequence.
pub struct TrackerState {
    pub model: TrackerModel,
    pub current_box: BoundingBox,
    pub frame_index: usize,
    /// The first-frame ground-truth box; candidate dimensions are kept
    /// within a fixed factor of it so the box cannot collapse into a sliver
    /// that still resamples to target-like texture.
    pub init_box: BoundingBox,
    /// First-frame samples; never evicted, so online updates stay anchored
    /// to the only ground-truth appearance the tracker ever sees.
    pub init_pos: Vec<Sample>,
    pub init_neg: Vec<Sample>,
    pub pos_memory: VecDeque<Sample>,
    pub neg_memory: VecDeque<Sample>,
    pub gate_log: Vec<f64>,
    pub records: Vec<FrameRecord>,
    pub cfg: TrackConfig,
    /// Frames at which an online update fired.
    pub updates_at: Vec<usize>,
    pub trace: TrainTrace,
    rng: ChaCha8Rng,
}

/// Fine-tunes the fusion modules and the classifier head on first-frame
/// samples with the front end frozen, and fits the box regressor.
pub fn init_first_frame(
    model: &TrackerModel,
    frame: &Tensor,
    gt: &BoundingBox,
    cfg: &TrackConfig,
) -> Result<TrackerState> {
    if !gt.is_valid() {
        return Err(Error::Invalid(format!("degenerate ground-truth box {:?}", gt)));
    }
    let mut model = model.clone();
    model.set_front_frozen(true);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let samples = generate_samples(
        frame,
        gt,
        cfg.init_pos_samples,
        cfg.init_neg_samples,
        model.cfg.patch_size,
        &mut rng,
    )?;
    let (pos, neg): (Vec<Sample>, Vec<Sample>) =
        samples.into_iter().partition(|s| s.label == Label::Positive);
    let pos_patches: Vec<Tensor> = pos.iter().map(|s| s.patch.clone()).collect();
    let neg_patches: Vec<Tensor> = neg.iter().map(|s| s.patch.clone()).collect();

    let mode = model.variant;
    let phase = PhaseConfig {
        mode,
        iters: cfg.init_iters,
        batch_pos: cfg.batch_pos,
        batch_neg: cfg.batch_neg,
        neg_pool: cfg.neg_pool,
        momentum: cfg.momentum,
        weight_decay: cfg.weight_decay,
        step_tag: 0,
    };
    let (init_lr, last_lr) = (cfg.init_lr, cfg.init_head_last_lr);
    let rule = move |part: ParamPart, _class: ParamClass| -> Option<f64> {
        if part == ParamPart::FrontEnd || !active_in_mode(part, mode) {
            return None;
        }
        Some(if part == ParamPart::HeadLast { last_lr } else { init_lr })
    };
    let mut trace = TrainTrace::default();
    let mut trace_opt: Option<&mut TrainTrace> = Some(&mut trace);
    run_minibatch_phase(
        &mut model,
        &phase,
        &pos_patches,
        &neg_patches,
        &rule,
        &mut rng,
        &mut trace_opt,
    )?;

    // box regressor from first-frame positive samples
    let feats: Vec<Tensor> = pos
        .iter()
        .map(|s| front_features(&model, &s.patch))
        .collect::<Result<_>>()?;
    let src: Vec<BoundingBox> = pos.iter().map(|s| s.bbox).collect();
    let gts = vec![*gt; pos.len()];
    model.bbox_reg = Some(bbox_regress_train(&feats, &src, &gts, cfg.ridge_lambda)?);

    Ok(TrackerState {
        model,
        current_box: *gt,
        frame_index: 0,
        init_box: *gt,
        init_pos: pos,
        init_neg: neg,
        pos_memory: VecDeque::with_capacity(cfg.pos_memory),
        neg_memory: VecDeque::with_capacity(cfg.neg_memory),
        gate_log: Vec::new(),
        records: Vec::new(),
        cfg: cfg.clone(),
        updates_at: Vec::new(),
        trace,
        rng,
    })
}

fn push_bounded(store: &mut VecDeque<Sample>, s: Sample, cap: usize) {
    if store.len() == cap {
        store.pop_front();
    }
    store.push_back(s);
}

/// Argmax over positive-class scores, ties broken toward the lower index.
pub fn select_best(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate().skip(1) {
        if s > scores[best] {
            best = i;
        }
    }
    best
}

/// Tracks one frame: draw candidates, score them, refine with the box
/// regressor, collect update samples and fire the periodic online update.
pub fn track_step(state: &mut TrackerState, frame: &Tensor) -> Result<BoundingBox> {
    let cfg = state.cfg.clone();
    let cur = state.current_box;
    let size = (cur.w * cur.h).sqrt();
    let mut candidates = Vec::with_capacity(cfg.candidates);
    for _ in 0..cfg.candidates {
        let dx = gaussian(&mut state.rng) * cfg.trans_std_frac * size;
        let dy = gaussian(&mut state.rng) * cfg.trans_std_frac * size;
        let s = cfg.scale_base.powf(gaussian(&mut state.rng) * cfg.scale_std);
        let a = cfg.scale_base.powf(gaussian(&mut state.rng) * cfg.aspect_std);
        let w = (cur.w * s * a).clamp(state.init_box.w * 0.5, state.init_box.w * 2.0);
        let h = (cur.h * s / a).clamp(state.init_box.h * 0.5, state.init_box.h * 2.0);
        let (ccx, ccy) = cur.center();
        candidates.push(BoundingBox::new(
            ccx + dx - w / 2.0,
            ccy + dy - h / 2.0,
            w,
            h,
        ));
    }

    // rank by logit margin: the softmax score saturates to 1.0 once the
    // classifier is confident, which would break the argmax into a tie
    let mut margins = Vec::with_capacity(candidates.len());
    let mut scores = Vec::with_capacity(candidates.len());
    let mut best_cache = None;
    let mut best = 0usize;
    for (i, cand) in candidates.iter().enumerate() {
        let patch = extract_patch(frame, cand, state.model.cfg.patch_size);
        let cache = forward_cached(&state.model, &patch, state.model.variant)?;
        let margin = positive_margin(&cache.logits);
        scores.push(positive_score(&cache.logits));
        if i == 0 || margin > margins[best] {
            best = i;
            best_cache = Some(cache);
        }
        margins.push(margin);
    }
    let best_fwd = best_cache.expect("at least one candidate");

    // the score surface is flat near the target, so a single argmax jitters;
    // averaging the top-scoring candidates gives a stable estimate
    let top = hard_negative_mining(&margins, cfg.top_k.min(candidates.len()))?;
    let inv = 1.0 / top.len() as f64;
    let confidence = top.iter().map(|&i| scores[i]).sum::<f64>() * inv;
    let mut estimate = BoundingBox::new(0.0, 0.0, 0.0, 0.0);
    for &i in &top {
        estimate.x += candidates[i].x * inv;
        estimate.y += candidates[i].y * inv;
        estimate.w += candidates[i].w * inv;
        estimate.h += candidates[i].h * inv;
    }
    if confidence > cfg.bbox_reg_threshold {
        if let Some(reg) = &state.model.bbox_reg {
            let patch = extract_patch(frame, &estimate, state.model.cfg.patch_size);
            let feats = front_features(&state.model, &patch)?;
            estimate = reg.predict(&feats, &estimate);
        }
    }
    state.current_box = estimate;

    let gate_mean = best_fwd.gate_map().map(mean_gate);
    if let Some(g) = gate_mean {
        state.gate_log.push(g);
    }

    // collect update samples labelled against the estimate; a low-confidence
    // estimate is likely off the target, and samples labelled against it
    // would poison the memories
    if confidence > cfg.update_conf_threshold {
        let update = generate_samples(
            frame,
            &estimate,
            cfg.update_pos_per_frame,
            cfg.update_neg_per_frame,
            state.model.cfg.patch_size,
            &mut state.rng,
        )?;
        for s in update {
            match s.label {
                Label::Positive => push_bounded(&mut state.pos_memory, s, cfg.pos_memory),
                Label::Negative => push_bounded(&mut state.neg_memory, s, cfg.neg_memory),
            }
        }
    }

    state.frame_index += 1;
    state.records.push(FrameRecord {
        frame: state.frame_index,
        bbox: estimate,
        confidence,
        mean_gate: gate_mean,
    });

    if state.frame_index % cfg.update_interval == 0 {
        update_online(state)?;
    }
    Ok(estimate)
}

/// Fine-tunes the fusion modules and head on the sample memories; the front
/// end stays frozen.
pub fn update_online(state: &mut TrackerState) -> Result<()> {
    let cfg = state.cfg.clone();
    let pos: Vec<Tensor> = state
        .init_pos
        .iter()
        .chain(state.pos_memory.iter())
        .map(|s| s.patch.clone())
        .collect();
    let neg: Vec<Tensor> = state
        .init_neg
        .iter()
        .chain(state.neg_memory.iter())
        .map(|s| s.patch.clone())
        .collect();
    if pos.len() < cfg.batch_pos {
        eprintln!(
            "warning: skipping online update at frame {}: only {} positives in memory (need {})",
            state.frame_index,
            pos.len(),
            cfg.batch_pos
        );
        return Ok(());
    }
    let mode = state.model.variant;
    let phase = PhaseConfig {
        mode,
        iters: cfg.update_iters,
        batch_pos: cfg.batch_pos,
        batch_neg: cfg.batch_neg,
        neg_pool: cfg.neg_pool,
        momentum: cfg.momentum,
        weight_decay: cfg.weight_decay,
        step_tag: 0,
    };
    let (lr_fusion, lr_head) = (cfg.update_lr_fusion, cfg.update_lr_head);
    let rule = move |part: ParamPart, _class: ParamClass| -> Option<f64> {
        if part == ParamPart::FrontEnd || !active_in_mode(part, mode) {
            return None;
        }
        Some(match part {
            ParamPart::Deform | ParamPart::Gate => lr_fusion,
            _ => lr_head,
        })
    };
    let mut trace_opt: Option<&mut TrainTrace> = Some(&mut state.trace);
    run_minibatch_phase(
        &mut state.model,
        &phase,
        &pos,
        &neg,
        &rule,
        &mut state.rng,
        &mut trace_opt,
    )?;
    state.updates_at.push(state.frame_index);
    Ok(())
}

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.gen_range(1e-12..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}
