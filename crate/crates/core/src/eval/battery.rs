//! The full gradient-check battery behind the `gradcheck` subcommand:
//! every differentiable primitive plus the end-to-end gate-variant pass,
//! each against central finite differences over many seeds.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::ModelConfig;
use crate::deform::{
    deform_features, deform_features_backward, regress_offsets, regress_offsets_backward,
    DeformParams, OffsetField,
};
use crate::error::Result;
use crate::gate::{compute_gate, compute_gate_backward, fuse, fuse_backward, GateParams};
use crate::tensor::{
    activate, activate_backward, conv2d, conv2d_backward, fully_connected,
    fully_connected_backward, grad_check, softmax_xent, Activation, Tensor,
};
use crate::tracker::{forward_cached, model_backward, TrackerModel, Variant};

pub const BATTERY_EPS: f64 = 1e-5;
pub const BATTERY_TOL: f64 = 1e-4;

/// One named check's worst relative error over its seeds.
#[derive(Clone, Debug)]
pub struct BatteryCheck {
    pub name: &'static str,
    pub max_rel_err: f64,
    pub passed: bool,
}

fn rand_tensor(dims: &[usize], lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> Tensor {
    let mut t = Tensor::zeros(dims);
    for v in t.data_mut() {
        *v = rng.gen_range(lo..hi);
    }
    t
}

/// Random linear readout turning a tensor-valued op into a scalar loss.
fn dot(w: &Tensor, t: &Tensor) -> f64 {
    w.data().iter().zip(t.data()).map(|(a, b)| a * b).sum()
}

fn check_conv2d(rng: &mut ChaCha8Rng) -> Result<f64> {
    let input = rand_tensor(&[6, 6, 2], -1.0, 1.0, rng);
    let kernel = rand_tensor(&[3, 3, 2, 2], -0.5, 0.5, rng);
    let bias = rand_tensor(&[2], -0.5, 0.5, rng);
    let w = rand_tensor(&[4, 4, 2], -1.0, 1.0, rng);
    let loss = |i: &Tensor, k: &Tensor, b: &Tensor| dot(&w, &conv2d(i, k, b, 1, 0).unwrap());
    let (g_in, g_k, g_b) = conv2d_backward(&input, &kernel, 1, 0, &w)?;
    let e1 = grad_check(|t| loss(t, &kernel, &bias), &input, &g_in, BATTERY_EPS)?;
    let e2 = grad_check(|t| loss(&input, t, &bias), &kernel, &g_k, BATTERY_EPS)?;
    let e3 = grad_check(|t| loss(&input, &kernel, t), &bias, &g_b, BATTERY_EPS)?;
    Ok(e1.max(e2).max(e3))
}

fn check_fully_connected(rng: &mut ChaCha8Rng) -> Result<f64> {
    let input = rand_tensor(&[5], -1.0, 1.0, rng);
    let weight = rand_tensor(&[5, 4], -0.5, 0.5, rng);
    let bias = rand_tensor(&[4], -0.5, 0.5, rng);
    let w = rand_tensor(&[4], -1.0, 1.0, rng);
    let loss =
        |i: &Tensor, wt: &Tensor, b: &Tensor| dot(&w, &fully_connected(i, wt, b).unwrap());
    let (g_in, g_w, g_b) = fully_connected_backward(&input, &weight, &w)?;
    let e1 = grad_check(|t| loss(t, &weight, &bias), &input, &g_in, BATTERY_EPS)?;
    let e2 = grad_check(|t| loss(&input, t, &bias), &weight, &g_w, BATTERY_EPS)?;
    let e3 = grad_check(|t| loss(&input, &weight, t), &bias, &g_b, BATTERY_EPS)?;
    Ok(e1.max(e2).max(e3))
}

fn check_activation(kind: Activation, rng: &mut ChaCha8Rng) -> Result<f64> {
    // keep relu inputs away from its kink
    let mut input = rand_tensor(&[12], 0.1, 1.0, rng);
    for v in input.data_mut() {
        if rng.gen_bool(0.5) {
            *v = -*v;
        }
    }
    let w = rand_tensor(&[12], -1.0, 1.0, rng);
    let out = activate(&input, kind);
    let g_in = activate_backward(&input, &out, kind, &w);
    grad_check(|t| dot(&w, &activate(t, kind)), &input, &g_in, BATTERY_EPS)
}

fn check_softmax_xent(rng: &mut ChaCha8Rng) -> Result<f64> {
    let logits = rand_tensor(&[2], -2.0, 2.0, rng);
    let label = rng.gen_range(0..2);
    let (_, grad) = softmax_xent(&logits, label)?;
    grad_check(
        |t| softmax_xent(t, label).unwrap().0,
        &logits,
        &grad,
        BATTERY_EPS,
    )
}

fn rand_field(h: usize, w: usize, rng: &mut ChaCha8Rng) -> OffsetField {
    // fractional parts away from the grid keep the bilinear kernel smooth
    let mut f = OffsetField::zeros(h, w);
    for i in 0..h {
        for j in 0..w {
            let dy = rng.gen_range(-1.0..1.0_f64).floor() + rng.gen_range(0.1..0.9);
            let dx = rng.gen_range(-1.0..1.0_f64).floor() + rng.gen_range(0.1..0.9);
            f.set(i, j, dy, dx);
        }
    }
    f
}

fn check_deform_features(rng: &mut ChaCha8Rng) -> Result<f64> {
    let x = rand_tensor(&[4, 4, 2], -1.0, 1.0, rng);
    let field = rand_field(4, 4, rng);
    let w = rand_tensor(&[4, 4, 2], -1.0, 1.0, rng);
    let (g_x, g_field) = deform_features_backward(&x, &field, &w)?;
    let e1 = grad_check(
        |t| dot(&w, &deform_features(t, &field).unwrap()),
        &x,
        &g_x,
        BATTERY_EPS,
    )?;
    let e2 = grad_check(
        |t| {
            let f = OffsetField::from_tensor(t.clone()).unwrap();
            dot(&w, &deform_features(&x, &f).unwrap())
        },
        field.tensor(),
        &g_field,
        BATTERY_EPS,
    )?;
    Ok(e1.max(e2))
}

fn check_regress_offsets(rng: &mut ChaCha8Rng) -> Result<f64> {
    let (h, w, c, cd) = (4, 4, 2, 2);
    let x = rand_tensor(&[h, w, c], -1.0, 1.0, rng);
    let mut params = DeformParams::init(h, w, c, cd, rng);
    // zero-init fc would make the offset head locally blind; perturb it
    params.fc_weight.value = rand_tensor(params.fc_weight.value.dims(), -0.05, 0.05, rng);
    let readout = rand_tensor(&[h, w, 2], -1.0, 1.0, rng);
    let loss = |x: &Tensor, p: &DeformParams| {
        let (f, _) = regress_offsets(x, p).unwrap();
        dot(&readout, f.tensor())
    };
    let (_, cache) = regress_offsets(&x, &params)?;
    let mut trained = params.clone();
    let g_x = regress_offsets_backward(&x, &mut trained, &cache, &readout)?;
    let mut worst = grad_check(|t| loss(t, &params), &x, &g_x, BATTERY_EPS)?;
    for name in ["deform.conv.kernel", "deform.fc.weight", "deform.fc.bias"] {
        let (value, grad) = {
            let g = trained
                .groups_mut()
                .into_iter()
                .find(|g| g.name == name)
                .unwrap();
            (g.value.clone(), g.grad.clone())
        };
        let base = params.clone();
        let e = grad_check(
            |t| {
                let mut p = base.clone();
                for g in p.groups_mut() {
                    if g.name == name {
                        g.value = t.clone();
                    }
                }
                loss(&x, &p)
            },
            &value,
            &grad,
            BATTERY_EPS,
        )?;
        worst = worst.max(e);
    }
    Ok(worst)
}

fn check_compute_gate(rng: &mut ChaCha8Rng) -> Result<f64> {
    let (h, w, c) = (3, 3, 2);
    let x = rand_tensor(&[h, w, c], -1.0, 1.0, rng);
    let params = GateParams::init(h, w, c, 4, rng);
    let readout = rand_tensor(&[h * w], -1.0, 1.0, rng);
    let loss = |x: &Tensor, p: &GateParams| {
        let (sigma, _) = compute_gate(x, p).unwrap();
        dot(&readout, &sigma.tensor().reshaped(&[h * w]).unwrap())
    };
    let (_, cache) = compute_gate(&x, &params)?;
    let mut trained = params.clone();
    let g_x = compute_gate_backward(&x, &mut trained, &cache, &readout)?;
    let mut worst = grad_check(|t| loss(t, &params), &x, &g_x, BATTERY_EPS)?;
    for name in ["gate.fc1.weight", "gate.fc2.weight", "gate.fc2.bias"] {
        let (value, grad) = {
            let g = trained
                .groups_mut()
                .into_iter()
                .find(|g| g.name == name)
                .unwrap();
            (g.value.clone(), g.grad.clone())
        };
        let base = params.clone();
        let e = grad_check(
            |t| {
                let mut p = base.clone();
                for g in p.groups_mut() {
                    if g.name == name {
                        g.value = t.clone();
                    }
                }
                loss(&x, &p)
            },
            &value,
            &grad,
            BATTERY_EPS,
        )?;
        worst = worst.max(e);
    }
    Ok(worst)
}

fn check_fuse(rng: &mut ChaCha8Rng) -> Result<f64> {
    let (h, w, c) = (3, 3, 2);
    let x = rand_tensor(&[h, w, c], -1.0, 1.0, rng);
    let xp = rand_tensor(&[h, w, c], -1.0, 1.0, rng);
    let params = GateParams::init(h, w, c, 4, rng);
    let (sigma, _) = compute_gate(&x, &params)?;
    let readout = rand_tensor(&[h, w, c], -1.0, 1.0, rng);
    let (g_x, g_xp, _) = fuse_backward(&x, &xp, &sigma, &readout)?;
    // sigma held fixed: fuse's own partials w.r.t. its feature inputs
    let e1 = grad_check(
        |t| dot(&readout, &fuse(t, &xp, &sigma).unwrap()),
        &x,
        &g_x,
        BATTERY_EPS,
    )?;
    let e2 = grad_check(
        |t| dot(&readout, &fuse(&x, t, &sigma).unwrap()),
        &xp,
        &g_xp,
        BATTERY_EPS,
    )?;
    Ok(e1.max(e2))
}

fn check_end_to_end(rng: &mut ChaCha8Rng) -> Result<f64> {
    let cfg = ModelConfig {
        patch_size: 25,
        img_channels: 1,
        conv_channels: [2, 3, 4],
        deform_channels: 2,
        gate_hidden: 4,
        head_widths: [6, 4],
    };
    let mut model = TrackerModel::new(&cfg, Variant::Gate, rng.gen());
    // keep the offset fc at zero so every sampling location stays at its
    // fractional bias, well away from the bilinear kernel's kinks, no
    // matter which parameter group is perturbed
    for v in model.deform.fc_bias.value.data_mut() {
        *v = rng.gen_range(0.25..0.45);
    }
    let patch = rand_tensor(&[25, 25, 1], 0.0, 1.0, rng);
    let label = rng.gen_range(0..2);
    let loss_fn = |m: &TrackerModel| {
        let cache = forward_cached(m, &patch, Variant::Gate).unwrap();
        softmax_xent(&cache.logits, label).unwrap().0
    };
    let cache = forward_cached(&model, &patch, Variant::Gate)?;
    let (_, grad_logits) = softmax_xent(&cache.logits, label)?;
    let mut trained = model.clone();
    let g_patch = model_backward(&mut trained, &cache, &grad_logits)?;

    // the input gradient flows back through the head, fuse, gate, deform
    // and front-end paths at once
    let mut worst = grad_check(
        |t| {
            let c = forward_cached(&model, t, Variant::Gate).unwrap();
            softmax_xent(&c.logits, label).unwrap().0
        },
        &patch,
        &g_patch,
        BATTERY_EPS,
    )?;

    let names = ["front.conv1.kernel", "front.conv3.kernel", "head.fc1.weight", "head.fc3.weight"];
    let checks: Vec<(String, Tensor, Tensor)> = trained
        .groups_mut()
        .into_iter()
        .filter(|(g, _, _)| names.contains(&g.name.as_str()))
        .map(|(g, _, _)| (g.name.clone(), g.value.clone(), g.grad.clone()))
        .collect();
    for (name, value, analytic) in checks {
        let base = model.clone();
        let e = grad_check(
            |t| {
                let mut m = base.clone();
                for (g, _, _) in m.groups_mut() {
                    if g.name == name {
                        g.value = t.clone();
                    }
                }
                loss_fn(&m)
            },
            &value,
            &analytic,
            BATTERY_EPS,
        )?;
        worst = worst.max(e);
    }
    Ok(worst)
}

/// Runs every check over `seeds` seeds; a check passes when its worst
/// relative error stays under [`BATTERY_TOL`].
pub fn run_battery(seeds: u64) -> Result<Vec<BatteryCheck>> {
    type CheckFn = fn(&mut ChaCha8Rng) -> Result<f64>;
    let checks: [(&'static str, CheckFn); 9] = [
        ("conv2d", check_conv2d),
        ("fully_connected", check_fully_connected),
        ("relu", |rng| check_activation(Activation::Relu, rng)),
        ("sigmoid", |rng| check_activation(Activation::Sigmoid, rng)),
        ("softmax_xent", check_softmax_xent),
        ("deform_features", check_deform_features),
        ("regress_offsets", check_regress_offsets),
        ("compute_gate", check_compute_gate),
        ("fuse", check_fuse),
    ];
    let mut out = Vec::with_capacity(checks.len() + 1);
    for (name, f) in checks {
        let mut worst = 0.0_f64;
        for seed in 0..seeds {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            worst = worst.max(f(&mut rng)?);
        }
        out.push(BatteryCheck {
            name,
            max_rel_err: worst,
            passed: worst < BATTERY_TOL,
        });
    }
    let mut worst = 0.0_f64;
    for seed in 0..seeds {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        worst = worst.max(check_end_to_end(&mut rng)?);
    }
    out.push(BatteryCheck {
        name: "end_to_end_gate",
        max_rel_err: worst,
        passed: worst < BATTERY_TOL,
    });
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn battery_passes_on_a_few_seeds() {
        let checks = run_battery(3).unwrap();
        assert_eq!(checks.len(), 10);
        for c in &checks {
            assert!(c.passed, "{} rel err {}", c.name, c.max_rel_err);
        }
    }
}
