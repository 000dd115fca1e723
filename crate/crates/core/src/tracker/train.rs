//! Offline three-step training and the shared hard-negative mini-batch loop.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::{ModelConfig, TrainConfig};
use crate::error::{Error, Result};
use crate::synthseq::SequenceDataset;
use crate::tensor::{sgd_step, softmax_xent, SgdConfig, Tensor};
use crate::tracker::model::{
    forward_cached, model_backward, positive_margin, ParamClass, ParamPart, TrackerModel, Variant,
};
use crate::tracker::sampling::{generate_samples, Label};
use crate::tracker::{hard_negative_mining, POSITIVE_CLASS};

/// One mined mini-batch, recorded for instrumented tests.
#[derive(Clone, Debug)]
pub struct BatchRecord {
    pub step: usize,
    pub n_pos: usize,
    pub n_neg: usize,
    pub pool: usize,
    /// Pool scores and the mined indices into the pool.
    pub scores: Vec<f64>,
    pub mined: Vec<usize>,
}

/// Instrumentation hook filled in by the training loops.
#[derive(Clone, Debug, Default)]
pub struct TrainTrace {
    pub batches: Vec<BatchRecord>,
    pub losses: Vec<f64>,
}

/// Learning-rate routing for one training phase; None excludes the group
/// from the optimizer entirely (its gradient is discarded).
pub(crate) type LrRule<'a> = &'a dyn Fn(ParamPart, ParamClass) -> Option<f64>;

pub(crate) struct PhaseConfig {
    pub mode: Variant,
    pub iters: usize,
    pub batch_pos: usize,
    pub batch_neg: usize,
    pub neg_pool: usize,
    pub momentum: f64,
    pub weight_decay: f64,
    pub step_tag: usize,
}

/// Runs SGD iterations of (draw positives, draw a negative pool, mine hard
/// negatives, descend) over fixed sample stores. Returns per-iteration
/// mean losses.
pub(crate) fn run_minibatch_phase(
    model: &mut TrackerModel,
    phase: &PhaseConfig,
    pos: &[Tensor],
    neg: &[Tensor],
    lr_for: LrRule,
    rng: &mut ChaCha8Rng,
    trace: &mut Option<&mut TrainTrace>,
) -> Result<Vec<f64>> {
    if pos.is_empty() || neg.is_empty() {
        return Err(Error::Invalid(
            "mini-batch phase needs non-empty positive and negative stores".into(),
        ));
    }
    let mut losses = Vec::with_capacity(phase.iters);
    for _ in 0..phase.iters {
        let pos_idx: Vec<usize> = (0..phase.batch_pos)
            .map(|_| rng.gen_range(0..pos.len()))
            .collect();
        let pool_idx: Vec<usize> = (0..phase.neg_pool)
            .map(|_| rng.gen_range(0..neg.len()))
            .collect();
        // margins rank identically to softmax scores but cannot saturate
        // into ties
        let scores: Vec<f64> = pool_idx
            .iter()
            .map(|&i| {
                forward_cached(model, &neg[i], phase.mode).map(|c| positive_margin(&c.logits))
            })
            .collect::<Result<_>>()?;
        let mined = hard_negative_mining(&scores, phase.batch_neg)?;

        let batch_size = (phase.batch_pos + phase.batch_neg) as f64;
        let mut loss_sum = 0.0;
        for &i in &pos_idx {
            loss_sum += backprop_one(model, &pos[i], phase.mode, POSITIVE_CLASS, batch_size)?;
        }
        for &m in &mined {
            let patch = &neg[pool_idx[m]];
            loss_sum += backprop_one(model, patch, phase.mode, 1 - POSITIVE_CLASS, batch_size)?;
        }
        let mean_loss = loss_sum / batch_size;
        losses.push(mean_loss);
        if let Some(t) = trace.as_deref_mut() {
            t.batches.push(BatchRecord {
                step: phase.step_tag,
                n_pos: pos_idx.len(),
                n_neg: mined.len(),
                pool: pool_idx.len(),
                scores: scores.clone(),
                mined: mined.clone(),
            });
            t.losses.push(mean_loss);
        }

        let momentum = phase.momentum;
        let wd = phase.weight_decay;
        for (group, part, class) in model.groups_mut() {
            match lr_for(part, class) {
                Some(lr) => sgd_step(
                    [group],
                    &SgdConfig {
                        learning_rate: lr,
                        momentum,
                        weight_decay: wd,
                    },
                ),
                None => group.clear_grad(),
            }
        }
    }
    Ok(losses)
}

fn backprop_one(
    model: &mut TrackerModel,
    patch: &Tensor,
    mode: Variant,
    label: usize,
    batch_size: f64,
) -> Result<f64> {
    let cache = forward_cached(model, patch, mode)?;
    let (loss, mut grad) = softmax_xent(&cache.logits, label)?;
    for g in grad.data_mut() {
        *g /= batch_size;
    }
    model_backward(model, &cache, &grad)?;
    Ok(loss)
}

/// Parts of the network that carry gradient in a given forward mode.
pub(crate) fn active_in_mode(part: ParamPart, mode: Variant) -> bool {
    match part {
        ParamPart::FrontEnd | ParamPart::Head | ParamPart::HeadLast => true,
        ParamPart::Deform => mode != Variant::Baseline,
        ParamPart::Gate => mode == Variant::Gate,
    }
}

/// Offline three-step training: (1) baseline network, (2) deformable branch
/// enabled, (3) gate enabled; steps past the requested variant are skipped.
pub fn train_offline(
    sequences: &[SequenceDataset],
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
    variant: Variant,
    mut trace: Option<&mut TrainTrace>,
) -> Result<TrackerModel> {
    if sequences.is_empty() || sequences.iter().all(|s| s.frames.is_empty()) {
        return Err(Error::Invalid("offline training needs a non-empty dataset".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut pos: Vec<Tensor> = Vec::new();
    let mut neg: Vec<Tensor> = Vec::new();
    for seq in sequences {
        for (frame, gt) in seq.frames.iter().zip(&seq.gt) {
            let samples = generate_samples(
                frame,
                gt,
                cfg.pos_per_frame,
                cfg.neg_per_frame,
                model_cfg.patch_size,
                &mut rng,
            )?;
            for s in samples {
                match s.label {
                    Label::Positive => pos.push(s.patch),
                    Label::Negative => neg.push(s.patch),
                }
            }
        }
    }

    let mut model = TrackerModel::new(model_cfg, variant, cfg.seed);
    let steps: &[Variant] = match variant {
        Variant::Baseline => &[Variant::Baseline],
        Variant::Deform => &[Variant::Baseline, Variant::Deform],
        Variant::Gate => &[Variant::Baseline, Variant::Deform, Variant::Gate],
    };
    for (tag, &mode) in steps.iter().enumerate() {
        let phase = PhaseConfig {
            mode,
            iters: cfg.iters_per_step,
            batch_pos: cfg.batch_pos,
            batch_neg: cfg.batch_neg,
            neg_pool: cfg.neg_pool,
            momentum: cfg.momentum,
            weight_decay: cfg.weight_decay,
            step_tag: tag + 1,
        };
        let lr_conv = cfg.lr_conv;
        let lr_fc = cfg.lr_fc;
        let rule = move |part: ParamPart, class: ParamClass| -> Option<f64> {
            if !active_in_mode(part, mode) {
                return None;
            }
            Some(match class {
                ParamClass::Conv => lr_conv,
                ParamClass::Fc => lr_fc,
            })
        };
        run_minibatch_phase(&mut model, &phase, &pos, &neg, &rule, &mut rng, &mut trace)?;
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthseq::attribute_suite;

    fn toy_sequences() -> Vec<SequenceDataset> {
        let suite = attribute_suite(7).unwrap();
        // two short sequences keep the test fast
        suite
            .into_iter()
            .filter(|(name, _)| name == "static" || name == "deformation")
            .map(|(_, mut seq)| {
                seq.frames.truncate(4);
                seq.gt.truncate(4);
                seq.spec.frames = 4;
                seq
            })
            .collect()
    }

    fn tiny_model_cfg() -> ModelConfig {
        ModelConfig {
            patch_size: 25,
            img_channels: 1,
            conv_channels: [2, 3, 4],
            deform_channels: 2,
            gate_hidden: 4,
            head_widths: [8, 4],
        }
    }

    fn tiny_train_cfg() -> TrainConfig {
        TrainConfig {
            iters_per_step: 4,
            neg_pool: 64,
            batch_pos: 8,
            batch_neg: 16,
            pos_per_frame: 10,
            neg_per_frame: 30,
            seed: 3,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn empty_dataset_is_an_error() {
        let res = train_offline(&[], &tiny_model_cfg(), &tiny_train_cfg(), Variant::Baseline, None);
        assert!(res.is_err());
    }

    #[test]
    fn baseline_variant_skips_steps_two_and_three() {
        let seqs = toy_sequences();
        let mut trace = TrainTrace::default();
        let model = train_offline(
            &seqs,
            &tiny_model_cfg(),
            &tiny_train_cfg(),
            Variant::Baseline,
            Some(&mut trace),
        )
        .unwrap();
        assert!(trace.batches.iter().all(|b| b.step == 1));
        // deform and gate params bitwise equal their initialization
        let fresh = TrackerModel::new(&tiny_model_cfg(), Variant::Baseline, 3);
        assert_eq!(model.deform.fc_weight.value, fresh.deform.fc_weight.value);
        assert_eq!(model.deform.conv_kernel.value, fresh.deform.conv_kernel.value);
        assert_eq!(model.gate.fc1_weight.value, fresh.gate.fc1_weight.value);
    }

    #[test]
    fn staged_training_contract_after_step_one() {
        let seqs = toy_sequences();
        let mut trace = TrainTrace::default();
        let model = train_offline(
            &seqs,
            &tiny_model_cfg(),
            &tiny_train_cfg(),
            Variant::Gate,
            Some(&mut trace),
        )
        .unwrap();
        // three steps ran, each with the configured batch shape
        for tag in 1..=3 {
            assert!(trace.batches.iter().any(|b| b.step == tag));
        }
        for b in &trace.batches {
            assert_eq!(b.n_pos, 8);
            assert_eq!(b.n_neg, 16);
            assert_eq!(b.pool, 64);
        }
        // gate was trained in step 3
        let fresh = TrackerModel::new(&tiny_model_cfg(), Variant::Gate, 3);
        assert!(model.gate.fc2_bias.value != fresh.gate.fc2_bias.value);
    }

    #[test]
    fn training_reduces_loss_on_toy_set() {
        let seqs = toy_sequences();
        let mut trace = TrainTrace::default();
        let cfg = TrainConfig {
            iters_per_step: 30,
            ..tiny_train_cfg()
        };
        train_offline(&seqs, &tiny_model_cfg(), &cfg, Variant::Baseline, Some(&mut trace)).unwrap();
        let first = trace.losses.first().copied().unwrap();
        let last = trace.losses.last().copied().unwrap();
        assert!(last < first, "loss did not decrease: {} -> {}", first, last);
    }

    #[test]
    fn training_is_deterministic() {
        let seqs = toy_sequences();
        let run = || {
            train_offline(&seqs, &tiny_model_cfg(), &tiny_train_cfg(), Variant::Gate, None).unwrap()
        };
        let a = run();
        let b = run();
        assert_eq!(a.head[0].weight.value, b.head[0].weight.value);
        assert_eq!(a.deform.fc_weight.value, b.deform.fc_weight.value);
    }
}
