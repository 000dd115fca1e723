//! Variant-by-attribute ablation harness: trains every variant per seed on
//! its own synthetic data and runs one-pass evaluation over the attribute
//! suite.

use serde::{Deserialize, Serialize};

use crate::config::Config;
use crate::error::Result;
use crate::eval::io::TrackResult;
use crate::eval::metrics::{
    error_track, failure_rate, overlap_track, precision_curve, robustness, success_curve,
    PRECISION_AT_PX, ROBUSTNESS_S,
};
use crate::synthseq::{attribute_suite_frames, SequenceDataset};
use crate::tracker::{
    extract_patch, forward, init_first_frame, positive_score, track_step, train_offline,
    TrackerModel, TrackerState, Variant,
};

pub const VARIANTS: [Variant; 3] = [Variant::Baseline, Variant::Deform, Variant::Gate];

/// One-pass evaluation of a trained model over a sequence. The first frame
/// carries the ground-truth box by protocol; its confidence and gate come
/// from a forward pass on the ground-truth patch after initialization.
pub fn run_sequence(
    model: &TrackerModel,
    seq: &SequenceDataset,
    cfg: &crate::config::TrackConfig,
    sequence_id: &str,
) -> Result<(TrackResult, TrackerState)> {
    let mut state = init_first_frame(model, &seq.frames[0], &seq.gt[0], cfg)?;
    let first_patch = extract_patch(&seq.frames[0], &seq.gt[0], state.model.cfg.patch_size);
    let (logits, first_gate) = forward(&state.model, &first_patch)?;
    let mut boxes = vec![seq.gt[0]];
    let mut confidences = vec![positive_score(&logits)];
    let mut gates = first_gate.map(|g| vec![crate::gate::mean_gate(&g)]);
    for frame in &seq.frames[1..] {
        track_step(&mut state, frame)?;
    }
    for rec in &state.records {
        boxes.push(rec.bbox);
        confidences.push(rec.confidence);
        if let (Some(gs), Some(g)) = (gates.as_mut(), rec.mean_gate) {
            gs.push(g);
        }
    }
    Ok((
        TrackResult {
            sequence: sequence_id.to_string(),
            variant: model.variant.label().to_string(),
            boxes,
            confidences,
            mean_gate: gates,
        },
        state,
    ))
}

/// Summary statistics of one (variant, attribute) cell over the seeds.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: String,
    pub attribute: String,
    pub success_auc: Vec<f64>,
    pub precision20: Vec<f64>,
    pub robustness: Vec<f64>,
    pub success_auc_mean: f64,
    pub success_auc_std: f64,
    pub precision20_mean: f64,
    pub precision20_std: f64,
}

/// Per-frame gate trace of one gate-variant run.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GateLog {
    pub seed: u64,
    pub attribute: String,
    pub mean_gate: Vec<f64>,
    pub occluded: Vec<bool>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AblationReport {
    pub seeds: Vec<u64>,
    pub frames: usize,
    /// 3 variants × 6 attributes, variant-major.
    pub rows: Vec<AblationRow>,
    pub gate_logs: Vec<GateLog>,
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Trains and evaluates all three variants per seed on every suite
/// sequence. Training data comes from a separately seeded suite so the
/// evaluation sequences are held out.
pub fn run_ablation(cfg: &Config, seeds: &[u64], frames: usize) -> Result<AblationReport> {
    if seeds.is_empty() {
        return Err(crate::error::Error::Invalid("ablation needs at least one seed".into()));
    }
    // (variant, attribute) -> per-seed metric lists
    let mut cells: Vec<Vec<(Vec<f64>, Vec<f64>, Vec<f64>)>> = Vec::new();
    let mut attributes: Vec<String> = Vec::new();
    let mut gate_logs = Vec::new();

    for (vi, &variant) in VARIANTS.iter().enumerate() {
        cells.push(Vec::new());
        for &seed in seeds {
            let train_suite = attribute_suite_frames(seed.wrapping_mul(31).wrapping_add(977), 8)?;
            let train_seqs: Vec<SequenceDataset> =
                train_suite.into_iter().map(|(_, s)| s).collect();
            let mut train_cfg = cfg.train.clone();
            train_cfg.seed = seed;
            let model = train_offline(&train_seqs, &cfg.model, &train_cfg, variant, None)?;

            let suite = attribute_suite_frames(seed, frames)?;
            for (ai, (name, seq)) in suite.iter().enumerate() {
                if vi == 0 && attributes.len() <= ai {
                    attributes.push(name.clone());
                }
                if cells[vi].len() <= ai {
                    cells[vi].push((Vec::new(), Vec::new(), Vec::new()));
                }
                let mut track_cfg = cfg.track.clone();
                track_cfg.seed = seed;
                let (result, _) = run_sequence(&model, seq, &track_cfg, name)?;
                let succ = success_curve(&overlap_track(&result.boxes, &seq.gt))?;
                let prec = precision_curve(&error_track(&result.boxes, &seq.gt))?;
                let rob = robustness(failure_rate(&result.boxes, &seq.gt), ROBUSTNESS_S);
                cells[vi][ai].0.push(succ.auc);
                cells[vi][ai].1.push(prec.value_at(PRECISION_AT_PX).unwrap());
                cells[vi][ai].2.push(rob);
                if variant == Variant::Gate {
                    gate_logs.push(GateLog {
                        seed,
                        attribute: name.clone(),
                        mean_gate: result.mean_gate.clone().unwrap_or_default(),
                        occluded: seq.occluded.clone(),
                    });
                }
            }
        }
    }

    let mut rows = Vec::new();
    for (vi, variant) in VARIANTS.iter().enumerate() {
        for (ai, attribute) in attributes.iter().enumerate() {
            let (succ, prec, rob) = &cells[vi][ai];
            let (sm, ss) = mean_std(succ);
            let (pm, ps) = mean_std(prec);
            rows.push(AblationRow {
                variant: variant.label().to_string(),
                attribute: attribute.clone(),
                success_auc: succ.clone(),
                precision20: prec.clone(),
                robustness: rob.clone(),
                success_auc_mean: sm,
                success_auc_std: ss,
                precision20_mean: pm,
                precision20_std: ps,
            });
        }
    }
    Ok(AblationReport {
        seeds: seeds.to_vec(),
        frames,
        rows,
        gate_logs,
    })
}

impl AblationReport {
    /// Fixed-width text table of success-AUC and precision@20, mean ± std.
    pub fn table(&self) -> String {
        let mut out = format!(
            "{:<10} {:<14} {:>20} {:>20}\n",
            "variant", "attribute", "success-AUC", "precision@20"
        );
        for row in &self.rows {
            out.push_str(&format!(
                "{:<10} {:<14} {:>11.4} ± {:.4} {:>11.4} ± {:.4}\n",
                row.variant,
                row.attribute,
                row.success_auc_mean,
                row.success_auc_std,
                row.precision20_mean,
                row.precision20_std,
            ));
        }
        out
    }
}
