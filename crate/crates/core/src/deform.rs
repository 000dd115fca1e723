//! Deformable feature module: regress per-location 2-d offsets from the
//! standard feature map, then resample the map by bilinear interpolation at
//! the displaced grid.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Result};
use crate::tensor::{
    activate, activate_backward, conv2d, conv2d_backward, fully_connected,
    fully_connected_backward, Activation, ParamGroup, Tensor,
};

/// H×W grid of fractional (dy, dx) displacements, stored as an H×W×2 tensor.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OffsetField {
    tensor: Tensor,
}

impl OffsetField {
    pub fn zeros(h: usize, w: usize) -> OffsetField {
        OffsetField {
            tensor: Tensor::zeros(&[h, w, 2]),
        }
    }

    pub fn from_tensor(tensor: Tensor) -> Result<OffsetField> {
        if tensor.dims().len() != 3 || tensor.dims()[2] != 2 {
            return Err(shape_err(
                "OffsetField",
                format!("expected H×W×2, got {:?}", tensor.dims()),
            ));
        }
        Ok(OffsetField { tensor })
    }

    pub fn height(&self) -> usize {
        self.tensor.dims()[0]
    }

    pub fn width(&self) -> usize {
        self.tensor.dims()[1]
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> (f64, f64) {
        (self.tensor.at3(i, j, 0), self.tensor.at3(i, j, 1))
    }

    pub fn set(&mut self, i: usize, j: usize, dy: f64, dx: f64) {
        let iy = self.tensor.idx3(i, j, 0);
        self.tensor.data_mut()[iy] = dy;
        self.tensor.data_mut()[iy + 1] = dx;
    }

    pub fn tensor(&self) -> &Tensor {
        &self.tensor
    }
}

/// Parameters of the offset regressor: a 3×3 conv followed by a fully
/// connected layer whose output has length H·W·2.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DeformParams {
    pub conv_kernel: ParamGroup,
    pub conv_bias: ParamGroup,
    pub fc_weight: ParamGroup,
    pub fc_bias: ParamGroup,
}

impl DeformParams {
    /// The fc layer is zero-initialized so the branch starts as an exact
    /// identity on features.
    pub fn init(h: usize, w: usize, c: usize, c_d: usize, rng: &mut impl Rng) -> DeformParams {
        let fan_in = 3 * 3 * c;
        DeformParams {
            conv_kernel: ParamGroup::new(
                "deform.conv.kernel",
                Tensor::rand_init(&[3, 3, c, c_d], fan_in, rng),
            ),
            conv_bias: ParamGroup::new("deform.conv.bias", Tensor::zeros(&[c_d])),
            fc_weight: ParamGroup::new(
                "deform.fc.weight",
                Tensor::zeros(&[c_d * h * w, h * w * 2]),
            ),
            fc_bias: ParamGroup::new("deform.fc.bias", Tensor::zeros(&[h * w * 2])),
        }
    }

    pub fn groups_mut(&mut self) -> [&mut ParamGroup; 4] {
        [
            &mut self.conv_kernel,
            &mut self.conv_bias,
            &mut self.fc_weight,
            &mut self.fc_bias,
        ]
    }
}

/// Intermediates of regress_offsets kept for the backward pass.
pub struct OffsetCache {
    conv_out: Tensor,
    relu_out: Tensor,
}

/// Θ = reshape(fc(relu(conv3x3(X)))), per-location (dy, dx).
pub fn regress_offsets(x: &Tensor, params: &DeformParams) -> Result<(OffsetField, OffsetCache)> {
    let (h, w) = (x.dims()[0], x.dims()[1]);
    let conv_out = conv2d(
        x,
        &params.conv_kernel.value,
        &params.conv_bias.value,
        1,
        1,
    )?;
    let relu_out = activate(&conv_out, Activation::Relu);
    let flat = fully_connected(&relu_out, &params.fc_weight.value, &params.fc_bias.value)?;
    let field = OffsetField::from_tensor(flat.reshaped(&[h, w, 2])?)?;
    Ok((
        field,
        OffsetCache {
            conv_out,
            relu_out,
        },
    ))
}

/// Backward of regress_offsets: accumulates parameter gradients and returns
/// the gradient w.r.t. X.
pub fn regress_offsets_backward(
    x: &Tensor,
    params: &mut DeformParams,
    cache: &OffsetCache,
    grad_field: &Tensor,
) -> Result<Tensor> {
    let g_flat = grad_field.reshaped(&[grad_field.len()])?;
    let (g_relu, g_fcw, g_fcb) =
        fully_connected_backward(&cache.relu_out, &params.fc_weight.value, &g_flat)?;
    params.fc_weight.grad.add_assign(&g_fcw);
    params.fc_bias.grad.add_assign(&g_fcb);
    let g_conv = activate_backward(&cache.conv_out, &cache.relu_out, Activation::Relu, &g_relu);
    let (g_x, g_k, g_b) = conv2d_backward(x, &params.conv_kernel.value, 1, 1, &g_conv)?;
    params.conv_kernel.grad.add_assign(&g_k);
    params.conv_bias.grad.add_assign(&g_b);
    Ok(g_x)
}

#[inline]
fn kernel_weight(cell: f64, loc: f64) -> f64 {
    (1.0 - (cell - loc).abs()).max(0.0)
}

/// Right-sided subgradient of max(0, 1-|cell-loc|) w.r.t. loc.
#[inline]
fn kernel_weight_dloc(cell: f64, loc: f64) -> f64 {
    if (cell - loc).abs() >= 1.0 {
        0.0
    } else if loc >= cell {
        -1.0
    } else {
        1.0
    }
}

/// Samples all C channels of X at the fractional location (dy, dx) with the
/// bilinear kernel; locations >=1 outside the grid on any axis give zeros.
pub fn bilinear_sample(x: &Tensor, dy: f64, dx: f64, out: &mut [f64]) {
    let (h, w, c) = (x.dims()[0], x.dims()[1], x.dims()[2]);
    debug_assert_eq!(out.len(), c);
    out.iter_mut().for_each(|v| *v = 0.0);
    let y0 = dy.floor() as isize;
    let x0 = dx.floor() as isize;
    for yi in y0..=y0 + 1 {
        if yi < 0 || yi >= h as isize {
            continue;
        }
        let wy = kernel_weight(yi as f64, dy);
        if wy == 0.0 {
            continue;
        }
        for xi in x0..=x0 + 1 {
            if xi < 0 || xi >= w as isize {
                continue;
            }
            let wxy = wy * kernel_weight(xi as f64, dx);
            if wxy == 0.0 {
                continue;
            }
            let base = x.idx3(yi as usize, xi as usize, 0);
            for (o, v) in out.iter_mut().zip(&x.data()[base..base + c]) {
                *o += wxy * v;
            }
        }
    }
}

/// Convenience wrapper returning a fresh vector.
pub fn bilinear_sample_vec(x: &Tensor, dy: f64, dx: f64) -> Vec<f64> {
    let mut out = vec![0.0; x.dims()[2]];
    bilinear_sample(x, dy, dx, &mut out);
    out
}

/// X'_{i,j} = bilinear_sample(X, [i,j] + theta_{i,j}).
pub fn deform_features(x: &Tensor, field: &OffsetField) -> Result<Tensor> {
    check_field("deform_features", x, field)?;
    let (h, w, c) = (x.dims()[0], x.dims()[1], x.dims()[2]);
    let mut out = Tensor::zeros(&[h, w, c]);
    for i in 0..h {
        for j in 0..w {
            let (dy, dx) = field.get(i, j);
            let base = out.idx3(i, j, 0);
            bilinear_sample(x, i as f64 + dy, j as f64 + dx, &mut out.data_mut()[base..base + c]);
        }
    }
    Ok(out)
}

/// Gradients of deform_features w.r.t. X (linear) and the offset field
/// (piecewise-linear). Returns (grad_x, grad_field) with grad_field H×W×2.
pub fn deform_features_backward(
    x: &Tensor,
    field: &OffsetField,
    grad_out: &Tensor,
) -> Result<(Tensor, Tensor)> {
    check_field("deform_features_backward", x, field)?;
    let (h, w, c) = (x.dims()[0], x.dims()[1], x.dims()[2]);
    let mut g_x = Tensor::zeros(x.dims());
    let mut g_field = Tensor::zeros(&[h, w, 2]);
    for i in 0..h {
        for j in 0..w {
            let (dy_off, dx_off) = field.get(i, j);
            let loc_y = i as f64 + dy_off;
            let loc_x = j as f64 + dx_off;
            let y0 = loc_y.floor() as isize;
            let x0 = loc_x.floor() as isize;
            let gbase = grad_out.idx3(i, j, 0);
            let gslice = &grad_out.data()[gbase..gbase + c];
            let mut acc_dy = 0.0;
            let mut acc_dx = 0.0;
            for yi in y0..=y0 + 1 {
                if yi < 0 || yi >= h as isize {
                    continue;
                }
                let wy = kernel_weight(yi as f64, loc_y);
                let dwy = kernel_weight_dloc(yi as f64, loc_y);
                for xi in x0..=x0 + 1 {
                    if xi < 0 || xi >= w as isize {
                        continue;
                    }
                    let wx = kernel_weight(xi as f64, loc_x);
                    let dwx = kernel_weight_dloc(xi as f64, loc_x);
                    if wy == 0.0 && wx == 0.0 {
                        continue;
                    }
                    let base = x.idx3(yi as usize, xi as usize, 0);
                    let xslice = &x.data()[base..base + c];
                    let mut dot = 0.0;
                    for (g, v) in gslice.iter().zip(xslice) {
                        dot += g * v;
                    }
                    acc_dy += dot * dwy * wx;
                    acc_dx += dot * wy * dwx;
                    let wxy = wy * wx;
                    if wxy != 0.0 {
                        let gx = &mut g_x.data_mut()[base..base + c];
                        for (o, g) in gx.iter_mut().zip(gslice) {
                            *o += wxy * g;
                        }
                    }
                }
            }
            let fidx = g_field.idx3(i, j, 0);
            g_field.data_mut()[fidx] = acc_dy;
            g_field.data_mut()[fidx + 1] = acc_dx;
        }
    }
    Ok((g_x, g_field))
}

fn check_field(op: &'static str, x: &Tensor, field: &OffsetField) -> Result<()> {
    if x.dims().len() != 3 {
        return Err(shape_err(op, format!("feature map must be H×W×C, got {:?}", x.dims())));
    }
    if field.height() != x.dims()[0] || field.width() != x.dims()[1] {
        return Err(shape_err(
            op,
            format!(
                "offset field {}×{} does not match feature map {}×{}",
                field.height(),
                field.width(),
                x.dims()[0],
                x.dims()[1]
            ),
        ));
    }
    Ok(())
}
