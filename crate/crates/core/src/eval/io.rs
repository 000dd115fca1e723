//! On-disk formats: binary PGM frames, the sequence directory layout, and
//! tracking-result artifacts (JSON, curve CSV, SVG plot).

use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::metrics::{error_track, overlap_track, precision_curve, success_curve, Curve};
use crate::eval::plot::curves_svg;
use crate::synthseq::{SequenceDataset, SequenceSpec};
use crate::tensor::Tensor;
use crate::tracker::BoundingBox;

/// One tracked sequence's output, aligned with the sequence frames.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrackResult {
    /// Path of the sequence directory this was tracked on.
    pub sequence: String,
    pub variant: String,
    pub boxes: Vec<BoundingBox>,
    pub confidences: Vec<f64>,
    /// Per-frame mean gate values; present only for the gate variant.
    pub mean_gate: Option<Vec<f64>>,
}

impl TrackResult {
    pub fn validate(&self, n_frames: usize) -> Result<()> {
        if self.boxes.len() != n_frames || self.confidences.len() != n_frames {
            return Err(Error::Invalid(format!(
                "result length {}/{} does not match the {}-frame sequence",
                self.boxes.len(),
                self.confidences.len(),
                n_frames
            )));
        }
        if let Some(g) = &self.mean_gate {
            if g.len() != n_frames {
                return Err(Error::Invalid(format!(
                    "mean_gate length {} does not match the {}-frame sequence",
                    g.len(),
                    n_frames
                )));
            }
        }
        Ok(())
    }
}

/// Writes a [0,1] grayscale tensor as binary PGM (P5, maxval 255).
pub fn write_pgm(path: &Path, frame: &Tensor) -> Result<()> {
    let dims = frame.dims();
    if dims.len() != 3 || dims[2] != 1 {
        return Err(Error::Invalid(format!(
            "PGM writer expects H×W×1 frames, got {:?}",
            dims
        )));
    }
    let (h, w) = (dims[0], dims[1]);
    let mut buf = format!("P5\n{} {}\n255\n", w, h).into_bytes();
    buf.extend(
        frame
            .data()
            .iter()
            .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8),
    );
    fs::write(path, buf)?;
    Ok(())
}

/// Reads a binary PGM into an H×W×1 tensor with values in [0,1].
pub fn read_pgm(path: &Path) -> Result<Tensor> {
    let bytes = fs::read(path)?;
    let bad = |detail: String| Error::Invalid(format!("{}: {}", path.display(), detail));
    let mut pos = 0usize;
    let mut token = || -> Result<String> {
        // skip whitespace and # comments
        while pos < bytes.len() {
            match bytes[pos] {
                b'#' => {
                    while pos < bytes.len() && bytes[pos] != b'\n' {
                        pos += 1;
                    }
                }
                c if c.is_ascii_whitespace() => pos += 1,
                _ => break,
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::Invalid("truncated PGM header".into()));
        }
        Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
    };
    let magic = token().map_err(|e| bad(e.to_string()))?;
    if magic != "P5" {
        return Err(bad(format!("expected P5 magic, got '{}'", magic)));
    }
    let parse = |s: String| -> Result<usize> {
        s.parse::<usize>()
            .map_err(|_| Error::Invalid(format!("bad PGM header field '{}'", s)))
    };
    let w = parse(token().map_err(|e| bad(e.to_string()))?)?;
    let h = parse(token().map_err(|e| bad(e.to_string()))?)?;
    let maxval = parse(token().map_err(|e| bad(e.to_string()))?)?;
    if maxval != 255 {
        return Err(bad(format!("only maxval 255 is supported, got {}", maxval)));
    }
    pos += 1; // single whitespace after maxval
    if bytes.len() < pos + w * h {
        return Err(bad(format!(
            "pixel payload truncated: need {} bytes, have {}",
            w * h,
            bytes.len().saturating_sub(pos)
        )));
    }
    let mut t = Tensor::zeros(&[h, w, 1]);
    for (v, &b) in t.data_mut().iter_mut().zip(&bytes[pos..pos + w * h]) {
        *v = b as f64 / 255.0;
    }
    Ok(t)
}

#[derive(Serialize, Deserialize)]
struct SequenceMeta {
    spec: SequenceSpec,
    occluded: Vec<bool>,
}

/// Writes a sequence as frames/0001.pgm…, groundtruth_rect.txt and meta.json.
pub fn save_sequence(dir: &Path, seq: &SequenceDataset) -> Result<()> {
    let frames_dir = dir.join("frames");
    fs::create_dir_all(&frames_dir)?;
    for (i, frame) in seq.frames.iter().enumerate() {
        write_pgm(&frames_dir.join(format!("{:04}.pgm", i + 1)), frame)?;
    }
    let mut gt = String::new();
    for b in &seq.gt {
        gt.push_str(&format!("{},{},{},{}\n", b.x, b.y, b.w, b.h));
    }
    fs::write(dir.join("groundtruth_rect.txt"), gt)?;
    let meta = SequenceMeta {
        spec: seq.spec.clone(),
        occluded: seq.occluded.clone(),
    };
    let mut f = fs::File::create(dir.join("meta.json"))?;
    f.write_all(serde_json::to_string_pretty(&meta)?.as_bytes())?;
    Ok(())
}

fn parse_gt_line(line: &str, lineno: usize) -> Result<BoundingBox> {
    let fields: Vec<&str> = line.split(',').map(str::trim).collect();
    if fields.len() != 4 {
        return Err(Error::GroundTruth {
            line: lineno,
            detail: format!("expected 4 comma-separated fields, got {}", fields.len()),
        });
    }
    let mut vals = [0.0; 4];
    for (v, f) in vals.iter_mut().zip(&fields) {
        *v = f.parse::<f64>().map_err(|_| Error::GroundTruth {
            line: lineno,
            detail: format!("'{}' is not a number", f),
        })?;
    }
    Ok(BoundingBox::new(vals[0], vals[1], vals[2], vals[3]))
}

/// Reads a sequence directory written by [`save_sequence`]. meta.json is
/// optional; without it the spec is a placeholder and occlusion flags are
/// all false.
pub fn load_sequence(dir: &Path) -> Result<SequenceDataset> {
    let gt_path = dir.join("groundtruth_rect.txt");
    let mut gt_text = String::new();
    fs::File::open(&gt_path)
        .map_err(|e| Error::Invalid(format!("cannot open {}: {}", gt_path.display(), e)))?
        .read_to_string(&mut gt_text)?;
    let mut gt = Vec::new();
    for (i, line) in gt_text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        gt.push(parse_gt_line(line, i + 1)?);
    }

    let frames_dir = dir.join("frames");
    let mut paths: Vec<PathBuf> = fs::read_dir(&frames_dir)
        .map_err(|e| Error::Invalid(format!("cannot open {}: {}", frames_dir.display(), e)))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().map(|e| e == "pgm").unwrap_or(false))
        .collect();
    paths.sort();
    if paths.len() != gt.len() {
        return Err(Error::Invalid(format!(
            "{} frames but {} ground-truth lines in {}",
            paths.len(),
            gt.len(),
            dir.display()
        )));
    }
    let frames: Vec<Tensor> = paths.iter().map(|p| read_pgm(p)).collect::<Result<_>>()?;

    let meta_path = dir.join("meta.json");
    let (spec, occluded) = if meta_path.exists() {
        let meta: SequenceMeta = serde_json::from_str(&fs::read_to_string(meta_path)?)?;
        (meta.spec, meta.occluded)
    } else {
        let mut spec = SequenceSpec::static_spec(frames.len().max(2), 0);
        if let Some(f) = frames.first() {
            spec.canvas_h = f.dims()[0];
            spec.canvas_w = f.dims()[1];
        }
        (spec, vec![false; frames.len()])
    };
    Ok(SequenceDataset {
        frames,
        gt,
        occluded,
        spec,
    })
}

/// Curves computed from a result against ground truth.
pub fn result_curves(result: &TrackResult, gt: &[BoundingBox]) -> Result<(Curve, Curve)> {
    let p = precision_curve(&error_track(&result.boxes, gt))?;
    let s = success_curve(&overlap_track(&result.boxes, gt))?;
    Ok((p, s))
}

/// Writes RESULT.json plus a sibling curve CSV and an SVG plot of both
/// curves.
pub fn save_result(result: &TrackResult, gt: &[BoundingBox], path: &Path) -> Result<()> {
    result.validate(gt.len())?;
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    fs::write(path, serde_json::to_string_pretty(result)?)?;
    let (precision, success) = result_curves(result, gt)?;
    fs::write(path.with_extension("curves.csv"), curves_csv(&precision, &success))?;
    fs::write(path.with_extension("svg"), curves_svg(&precision, &success))?;
    Ok(())
}

pub fn load_result(path: &Path) -> Result<TrackResult> {
    Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
}

/// Both curves share 51 thresholds, so the CSV has one row per index.
pub fn curves_csv(precision: &Curve, success: &Curve) -> String {
    let mut out = String::from("threshold_px,precision,threshold_iou,success\n");
    for i in 0..precision.thresholds.len() {
        out.push_str(&format!(
            "{},{},{},{}\n",
            precision.thresholds[i], precision.values[i], success.thresholds[i], success.values[i]
        ));
    }
    out
}
