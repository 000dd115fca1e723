//! Network definition and the hand-paired forward/backward pass through the
//! full pipeline: front-end convs, deformable branch, gate branch, fused
//! features and the classifier head.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::ModelConfig;
use crate::deform::{
    deform_features, deform_features_backward, regress_offsets, regress_offsets_backward,
    DeformParams, OffsetCache, OffsetField,
};
use crate::error::{shape_err, Result};
use crate::gate::{
    compute_gate, compute_gate_backward, fuse, fuse_backward, GateCache, GateMap, GateParams,
};
use crate::tensor::{
    activate, activate_backward, conv2d, conv2d_backward, fully_connected,
    fully_connected_backward, Activation, ParamGroup, Tensor,
};
use crate::tracker::bbox_reg::BboxRegressor;

/// Ablation variants of the network.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Variant {
    Baseline,
    Deform,
    Gate,
}

impl Variant {
    pub fn label(&self) -> &'static str {
        match self {
            Variant::Baseline => "baseline",
            Variant::Deform => "deform",
            Variant::Gate => "gate",
        }
    }

    pub fn parse(s: &str) -> Result<Variant> {
        match s {
            "baseline" => Ok(Variant::Baseline),
            "deform" => Ok(Variant::Deform),
            "gate" => Ok(Variant::Gate),
            other => Err(crate::error::Error::Invalid(format!(
                "unknown variant '{}', expected baseline|deform|gate",
                other
            ))),
        }
    }
}

/// Index of the target class in the two-logit output.
pub const POSITIVE_CLASS: usize = 1;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ConvLayer {
    pub kernel: ParamGroup,
    pub bias: ParamGroup,
    pub stride: usize,
    pub pad: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FcLayer {
    pub weight: ParamGroup,
    pub bias: ParamGroup,
}

/// Which part of the network a parameter belongs to; used to route learning
/// rates and freezing.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamPart {
    FrontEnd,
    Deform,
    Gate,
    Head,
    HeadLast,
}

/// Convolutional vs fully connected, for the two learning-rate groups.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamClass {
    Conv,
    Fc,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrackerModel {
    pub cfg: ModelConfig,
    pub variant: Variant,
    pub front: Vec<ConvLayer>,
    pub deform: DeformParams,
    pub gate: GateParams,
    pub head: Vec<FcLayer>,
    pub bbox_reg: Option<BboxRegressor>,
}

impl TrackerModel {
    pub fn new(cfg: &ModelConfig, variant: Variant, seed: u64) -> TrackerModel {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let [c1, c2, c3] = cfg.conv_channels;
        let chans = [(cfg.img_channels, c1, 5, 2), (c1, c2, 3, 2), (c2, c3, 3, 1)];
        let front = chans
            .iter()
            .enumerate()
            .map(|(i, &(cin, cout, k, stride))| ConvLayer {
                kernel: ParamGroup::new(
                    format!("front.conv{}.kernel", i + 1),
                    Tensor::rand_init(&[k, k, cin, cout], k * k * cin, &mut rng),
                ),
                // small positive bias keeps the relu units alive at init
                bias: ParamGroup::new(
                    format!("front.conv{}.bias", i + 1),
                    Tensor::filled(&[cout], 0.1),
                ),
                stride,
                pad: 0,
            })
            .collect();
        let grid = cfg.feature_grid();
        let deform = DeformParams::init(grid, grid, c3, cfg.deform_channels, &mut rng);
        let gate = GateParams::init(grid, grid, c3, cfg.gate_hidden, &mut rng);
        let flat = grid * grid * c3;
        let widths = [flat, cfg.head_widths[0], cfg.head_widths[1], 2];
        let head = (0..3)
            .map(|i| FcLayer {
                weight: ParamGroup::new(
                    format!("head.fc{}.weight", i + 1),
                    Tensor::rand_init_fc(&[widths[i], widths[i + 1]], &mut rng),
                ),
                bias: ParamGroup::new(
                    format!("head.fc{}.bias", i + 1),
                    // hidden layers start with live relus; the logit layer
                    // starts unbiased
                    if i < 2 {
                        Tensor::filled(&[widths[i + 1]], 0.1)
                    } else {
                        Tensor::zeros(&[widths[i + 1]])
                    },
                ),
            })
            .collect();
        TrackerModel {
            cfg: cfg.clone(),
            variant,
            front,
            deform,
            gate,
            head,
            bbox_reg: None,
        }
    }

    /// All parameter groups with their part and class tags.
    pub fn groups_mut(&mut self) -> Vec<(&mut ParamGroup, ParamPart, ParamClass)> {
        let mut v: Vec<(&mut ParamGroup, ParamPart, ParamClass)> = Vec::new();
        for layer in &mut self.front {
            v.push((&mut layer.kernel, ParamPart::FrontEnd, ParamClass::Conv));
            v.push((&mut layer.bias, ParamPart::FrontEnd, ParamClass::Conv));
        }
        v.push((&mut self.deform.conv_kernel, ParamPart::Deform, ParamClass::Conv));
        v.push((&mut self.deform.conv_bias, ParamPart::Deform, ParamClass::Conv));
        v.push((&mut self.deform.fc_weight, ParamPart::Deform, ParamClass::Fc));
        v.push((&mut self.deform.fc_bias, ParamPart::Deform, ParamClass::Fc));
        for g in self.gate.groups_mut() {
            v.push((g, ParamPart::Gate, ParamClass::Fc));
        }
        let last = self.head.len() - 1;
        for (i, layer) in self.head.iter_mut().enumerate() {
            let part = if i == last { ParamPart::HeadLast } else { ParamPart::Head };
            v.push((&mut layer.weight, part, ParamClass::Fc));
            v.push((&mut layer.bias, part, ParamClass::Fc));
        }
        v
    }

    pub fn set_front_frozen(&mut self, frozen: bool) {
        for layer in &mut self.front {
            layer.kernel.frozen = frozen;
            layer.bias.frozen = frozen;
        }
    }

    pub fn front_snapshot(&self) -> Vec<Tensor> {
        self.front
            .iter()
            .flat_map(|l| [l.kernel.value.clone(), l.bias.value.clone()])
            .collect()
    }
}

/// Everything the backward pass needs from one forward evaluation.
pub struct ForwardCache {
    mode: Variant,
    conv_in: Vec<Tensor>,
    conv_z: Vec<Tensor>,
    conv_a: Vec<Tensor>,
    x: Tensor,
    offset_field: Option<OffsetField>,
    offset_cache: Option<OffsetCache>,
    x_prime: Option<Tensor>,
    gate_map: Option<GateMap>,
    gate_cache: Option<GateCache>,
    head_in: Vec<Tensor>,
    head_z: Vec<Tensor>,
    head_a: Vec<Tensor>,
    pub logits: Tensor,
}

impl ForwardCache {
    pub fn gate_map(&self) -> Option<&GateMap> {
        self.gate_map.as_ref()
    }
}

/// Forward pass in the model's own variant.
pub fn forward(model: &TrackerModel, patch: &Tensor) -> Result<(Tensor, Option<GateMap>)> {
    let cache = forward_cached(model, patch, model.variant)?;
    Ok((cache.logits.clone(), cache.gate_map))
}

/// Forward pass in an explicit mode (offline training steps bypass modules
/// the model variant may enable).
pub fn forward_cached(model: &TrackerModel, patch: &Tensor, mode: Variant) -> Result<ForwardCache> {
    if patch.dims() != [model.cfg.patch_size, model.cfg.patch_size, model.cfg.img_channels] {
        return Err(shape_err(
            "forward",
            format!(
                "patch dims {:?}, model expects {:?}",
                patch.dims(),
                [model.cfg.patch_size, model.cfg.patch_size, model.cfg.img_channels]
            ),
        ));
    }
    // center the patch: raw intensities share a large common mode that
    // otherwise dominates the early gradients and starves the features
    let mut cur = patch.clone();
    let mean = cur.data().iter().sum::<f64>() / cur.len() as f64;
    for v in cur.data_mut() {
        *v -= mean;
    }

    // front end: conv-relu-conv-relu-conv
    let mut conv_in = Vec::with_capacity(3);
    let mut conv_z = Vec::with_capacity(3);
    let mut conv_a = Vec::with_capacity(2);
    for (i, layer) in model.front.iter().enumerate() {
        conv_in.push(cur.clone());
        let z = conv2d(&cur, &layer.kernel.value, &layer.bias.value, layer.stride, layer.pad)?;
        conv_z.push(z.clone());
        if i + 1 < model.front.len() {
            let a = activate(&z, Activation::Relu);
            conv_a.push(a.clone());
            cur = a;
        } else {
            cur = z;
        }
    }
    let x = cur;

    let (offset_field, offset_cache, x_prime) = if mode != Variant::Baseline {
        let (field, ocache) = regress_offsets(&x, &model.deform)?;
        let xp = deform_features(&x, &field)?;
        (Some(field), Some(ocache), Some(xp))
    } else {
        (None, None, None)
    };

    let (gate_map, gate_cache, head_input) = match mode {
        Variant::Baseline => (None, None, x.clone()),
        Variant::Deform => (None, None, x_prime.clone().unwrap()),
        Variant::Gate => {
            let (map, gcache) = compute_gate(&x, &model.gate)?;
            let fused = fuse(&x, x_prime.as_ref().unwrap(), &map)?;
            (Some(map), Some(gcache), fused)
        }
    };

    // classifier head: fc-relu-fc-relu-fc
    let mut head_in = Vec::with_capacity(3);
    let mut head_z = Vec::with_capacity(3);
    let mut head_a = Vec::with_capacity(2);
    let mut cur = head_input;
    for (i, layer) in model.head.iter().enumerate() {
        head_in.push(cur.clone());
        let z = fully_connected(&cur, &layer.weight.value, &layer.bias.value)?;
        head_z.push(z.clone());
        if i + 1 < model.head.len() {
            let a = activate(&z, Activation::Relu);
            head_a.push(a.clone());
            cur = a;
        } else {
            cur = z;
        }
    }
    Ok(ForwardCache {
        mode,
        conv_in,
        conv_z,
        conv_a,
        x,
        offset_field,
        offset_cache,
        x_prime,
        gate_map,
        gate_cache,
        head_in,
        head_z,
        head_a,
        logits: cur,
    })
}

/// Backward pass; accumulates gradients into the model's parameter groups
/// and returns the gradient w.r.t. the input patch.
pub fn model_backward(
    model: &mut TrackerModel,
    cache: &ForwardCache,
    grad_logits: &Tensor,
) -> Result<Tensor> {
    // head
    let mut g = grad_logits.clone();
    for i in (0..model.head.len()).rev() {
        if i + 1 < model.head.len() {
            g = activate_backward(&cache.head_z[i], &cache.head_a[i], Activation::Relu, &g);
        }
        let (g_in, g_w, g_b) =
            fully_connected_backward(&cache.head_in[i], &model.head[i].weight.value, &g)?;
        model.head[i].weight.grad.add_assign(&g_w);
        model.head[i].bias.grad.add_assign(&g_b);
        g = g_in;
    }
    let g_head_input = g.reshaped(cache.x.dims())?;

    // fusion stage
    let mut g_x = match cache.mode {
        Variant::Baseline => g_head_input,
        Variant::Deform => {
            let field = cache.offset_field.as_ref().unwrap();
            let (g_x_sample, g_field) =
                deform_features_backward(&cache.x, field, &g_head_input)?;
            let g_x_regress = regress_offsets_backward(
                &cache.x,
                &mut model.deform,
                cache.offset_cache.as_ref().unwrap(),
                &g_field,
            )?;
            let mut g_x = g_x_sample;
            g_x.add_assign(&g_x_regress);
            g_x
        }
        Variant::Gate => {
            let field = cache.offset_field.as_ref().unwrap();
            let map = cache.gate_map.as_ref().unwrap();
            let xp = cache.x_prime.as_ref().unwrap();
            let (g_x_fuse, g_xp, g_sigma) = fuse_backward(&cache.x, xp, map, &g_head_input)?;
            let (g_x_sample, g_field) = deform_features_backward(&cache.x, field, &g_xp)?;
            let g_x_regress = regress_offsets_backward(
                &cache.x,
                &mut model.deform,
                cache.offset_cache.as_ref().unwrap(),
                &g_field,
            )?;
            let g_x_gate = compute_gate_backward(
                &cache.x,
                &mut model.gate,
                cache.gate_cache.as_ref().unwrap(),
                &g_sigma,
            )?;
            let mut g_x = g_x_fuse;
            g_x.add_assign(&g_x_sample);
            g_x.add_assign(&g_x_regress);
            g_x.add_assign(&g_x_gate.reshaped(cache.x.dims())?);
            g_x
        }
    };

    // front end
    for i in (0..model.front.len()).rev() {
        if i + 1 < model.front.len() {
            g_x = activate_backward(&cache.conv_z[i], &cache.conv_a[i], Activation::Relu, &g_x);
        }
        let layer = &model.front[i];
        let (g_in, g_k, g_b) = conv2d_backward(
            &cache.conv_in[i],
            &layer.kernel.value,
            layer.stride,
            layer.pad,
            &g_x,
        )?;
        model.front[i].kernel.grad.add_assign(&g_k);
        model.front[i].bias.grad.add_assign(&g_b);
        g_x = g_in;
    }
    // jacobian of the mean-centering step
    let g_mean = g_x.data().iter().sum::<f64>() / g_x.len() as f64;
    for v in g_x.data_mut() {
        *v -= g_mean;
    }
    Ok(g_x)
}

/// Flattened front-end feature map of a patch; the box regressor's input.
pub fn front_features(model: &TrackerModel, patch: &Tensor) -> Result<Tensor> {
    let mut cur = patch.clone();
    let mean = cur.data().iter().sum::<f64>() / cur.len() as f64;
    for v in cur.data_mut() {
        *v -= mean;
    }
    for (i, layer) in model.front.iter().enumerate() {
        let z = conv2d(&cur, &layer.kernel.value, &layer.bias.value, layer.stride, layer.pad)?;
        cur = if i + 1 < model.front.len() { activate(&z, Activation::Relu) } else { z };
    }
    let n = cur.len();
    cur.reshaped(&[n])
}

/// Positive-minus-negative logit margin; monotone in the softmax
/// confidence but never saturates, so it ranks candidates without ties.
pub fn positive_margin(logits: &Tensor) -> f64 {
    logits.data()[POSITIVE_CLASS] - logits.data()[1 - POSITIVE_CLASS]
}

/// Positive-class softmax confidence of a two-logit output.
pub fn positive_score(logits: &Tensor) -> f64 {
    let a = logits.data()[1 - POSITIVE_CLASS];
    let b = logits.data()[POSITIVE_CLASS];
    let m = a.max(b);
    let eb = (b - m).exp();
    eb / ((a - m).exp() + eb)
}
