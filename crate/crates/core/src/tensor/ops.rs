//! Forward passes and their hand-paired analytic backward passes.

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Result};
use crate::tensor::Tensor;

/// Output spatial extents of a zero-padded convolution.
pub fn conv2d_out_dims(h: usize, w: usize, k: usize, stride: usize, pad: usize) -> Result<(usize, usize)> {
    let check = |extent: usize, axis: &str| -> Result<usize> {
        let padded = extent + 2 * pad;
        if padded < k || (padded - k) % stride != 0 {
            return Err(shape_err(
                "conv2d",
                format!(
                    "{} extent {} with pad {} is incompatible with kernel {} stride {}",
                    axis, extent, pad, k, stride
                ),
            ));
        }
        Ok((padded - k) / stride + 1)
    };
    Ok((check(h, "height")?, check(w, "width")?))
}

/// 2-d convolution over an H×W×C_in map with a k×k×C_in×C_out kernel,
/// zero padding.
pub fn conv2d(
    input: &Tensor,
    kernel: &Tensor,
    bias: &Tensor,
    stride: usize,
    pad: usize,
) -> Result<Tensor> {
    let (h, w, c_in, k, c_out) = conv2d_check(input, kernel, bias)?;
    let (oh, ow) = conv2d_out_dims(h, w, k, stride, pad)?;
    let mut out = Tensor::zeros(&[oh, ow, c_out]);
    for oi in 0..oh {
        for oj in 0..ow {
            for co in 0..c_out {
                let mut acc = bias.data()[co];
                for ki in 0..k {
                    for kj in 0..k {
                        let ii = oi * stride + ki;
                        let jj = oj * stride + kj;
                        if ii < pad || jj < pad {
                            continue;
                        }
                        let (ii, jj) = (ii - pad, jj - pad);
                        if ii >= h || jj >= w {
                            continue;
                        }
                        for ci in 0..c_in {
                            let kv = kernel.data()[((ki * k + kj) * c_in + ci) * c_out + co];
                            acc += input.at3(ii, jj, ci) * kv;
                        }
                    }
                }
                let idx = out.idx3(oi, oj, co);
                out.data_mut()[idx] = acc;
            }
        }
    }
    Ok(out)
}

/// Gradients of conv2d w.r.t. input, kernel and bias given the upstream
/// gradient on the output map.
pub fn conv2d_backward(
    input: &Tensor,
    kernel: &Tensor,
    stride: usize,
    pad: usize,
    grad_out: &Tensor,
) -> Result<(Tensor, Tensor, Tensor)> {
    let h = input.dims()[0];
    let w = input.dims()[1];
    let c_in = input.dims()[2];
    let k = kernel.dims()[0];
    let c_out = kernel.dims()[3];
    let (oh, ow) = conv2d_out_dims(h, w, k, stride, pad)?;
    if grad_out.dims() != [oh, ow, c_out] {
        return Err(shape_err(
            "conv2d_backward",
            format!("grad_out dims {:?}, expected {:?}", grad_out.dims(), [oh, ow, c_out]),
        ));
    }
    let mut g_in = Tensor::zeros(input.dims());
    let mut g_kernel = Tensor::zeros(kernel.dims());
    let mut g_bias = Tensor::zeros(&[c_out]);
    for oi in 0..oh {
        for oj in 0..ow {
            for co in 0..c_out {
                let g = grad_out.at3(oi, oj, co);
                if g == 0.0 {
                    continue;
                }
                g_bias.data_mut()[co] += g;
                for ki in 0..k {
                    for kj in 0..k {
                        let ii = oi * stride + ki;
                        let jj = oj * stride + kj;
                        if ii < pad || jj < pad {
                            continue;
                        }
                        let (ii, jj) = (ii - pad, jj - pad);
                        if ii >= h || jj >= w {
                            continue;
                        }
                        for ci in 0..c_in {
                            let kidx = ((ki * k + kj) * c_in + ci) * c_out + co;
                            let iidx = g_in.idx3(ii, jj, ci);
                            g_in.data_mut()[iidx] += g * kernel.data()[kidx];
                            g_kernel.data_mut()[kidx] += g * input.at3(ii, jj, ci);
                        }
                    }
                }
            }
        }
    }
    Ok((g_in, g_kernel, g_bias))
}

fn conv2d_check(
    input: &Tensor,
    kernel: &Tensor,
    bias: &Tensor,
) -> Result<(usize, usize, usize, usize, usize)> {
    if input.dims().len() != 3 {
        return Err(shape_err("conv2d", format!("input must be H×W×C, got {:?}", input.dims())));
    }
    if kernel.dims().len() != 4 || kernel.dims()[0] != kernel.dims()[1] {
        return Err(shape_err(
            "conv2d",
            format!("kernel must be k×k×C_in×C_out, got {:?}", kernel.dims()),
        ));
    }
    let (h, w, c_in) = (input.dims()[0], input.dims()[1], input.dims()[2]);
    let (k, kc_in, c_out) = (kernel.dims()[0], kernel.dims()[2], kernel.dims()[3]);
    if kc_in != c_in {
        return Err(shape_err(
            "conv2d",
            format!("kernel C_in {} does not match input C {}", kc_in, c_in),
        ));
    }
    if bias.dims() != [c_out] {
        return Err(shape_err(
            "conv2d",
            format!("bias dims {:?}, expected [{}]", bias.dims(), c_out),
        ));
    }
    Ok((h, w, c_in, k, c_out))
}

/// out_j = sum_i input_i * weight_{i,j} + bias_j over the flattened input.
pub fn fully_connected(input: &Tensor, weight: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let n = input.len();
    if weight.dims().len() != 2 || weight.dims()[0] != n {
        return Err(shape_err(
            "fully_connected",
            format!("weight dims {:?} do not match input length {}", weight.dims(), n),
        ));
    }
    let m = weight.dims()[1];
    if bias.dims() != [m] {
        return Err(shape_err(
            "fully_connected",
            format!("bias dims {:?}, expected [{}]", bias.dims(), m),
        ));
    }
    let mut out = bias.clone();
    out.dims = vec![m];
    for i in 0..n {
        let xi = input.data()[i];
        if xi == 0.0 {
            continue;
        }
        let row = &weight.data()[i * m..(i + 1) * m];
        for (o, wv) in out.data_mut().iter_mut().zip(row) {
            *o += xi * wv;
        }
    }
    Ok(out)
}

/// Gradients of fully_connected; grad on the input is returned with the
/// input's original dims.
pub fn fully_connected_backward(
    input: &Tensor,
    weight: &Tensor,
    grad_out: &Tensor,
) -> Result<(Tensor, Tensor, Tensor)> {
    let n = input.len();
    let m = weight.dims()[1];
    if grad_out.len() != m {
        return Err(shape_err(
            "fully_connected_backward",
            format!("grad_out length {}, expected {}", grad_out.len(), m),
        ));
    }
    let mut g_in = Tensor::zeros(input.dims());
    let mut g_w = Tensor::zeros(weight.dims());
    let g_b = grad_out.reshaped(&[m])?;
    for i in 0..n {
        let row = &weight.data()[i * m..(i + 1) * m];
        let mut acc = 0.0;
        for (g, wv) in grad_out.data().iter().zip(row) {
            acc += g * wv;
        }
        g_in.data_mut()[i] = acc;
        let xi = input.data()[i];
        let grow = &mut g_w.data_mut()[i * m..(i + 1) * m];
        for (gw, g) in grow.iter_mut().zip(grad_out.data()) {
            *gw = xi * g;
        }
    }
    Ok((g_in, g_w, g_b))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    Relu,
    Sigmoid,
}

pub fn activate(input: &Tensor, kind: Activation) -> Tensor {
    let mut out = input.clone();
    match kind {
        Activation::Relu => out.data_mut().iter_mut().for_each(|v| {
            if *v < 0.0 {
                *v = 0.0
            }
        }),
        Activation::Sigmoid => out
            .data_mut()
            .iter_mut()
            .for_each(|v| *v = 1.0 / (1.0 + (-*v).exp())),
    }
    out
}

/// Backward through an activation. `input` is the pre-activation and
/// `output` the forward result; relu's subgradient at exactly 0 is 0.
pub fn activate_backward(input: &Tensor, output: &Tensor, kind: Activation, grad_out: &Tensor) -> Tensor {
    let mut g = grad_out.clone();
    match kind {
        Activation::Relu => {
            for (gv, x) in g.data_mut().iter_mut().zip(input.data()) {
                if *x <= 0.0 {
                    *gv = 0.0;
                }
            }
        }
        Activation::Sigmoid => {
            for (gv, s) in g.data_mut().iter_mut().zip(output.data()) {
                *gv *= s * (1.0 - s);
            }
        }
    }
    g
}

/// Two-class softmax cross-entropy; returns the loss and the gradient on
/// the logits (softmax − onehot).
pub fn softmax_xent(logits: &Tensor, label: usize) -> Result<(f64, Tensor)> {
    if logits.len() != 2 {
        return Err(shape_err(
            "softmax_xent",
            format!("expected exactly 2 logits, got {}", logits.len()),
        ));
    }
    debug_assert!(label < 2);
    let (a, b) = (logits.data()[0], logits.data()[1]);
    let m = a.max(b);
    let ea = (a - m).exp();
    let eb = (b - m).exp();
    let z = ea + eb;
    let p = [ea / z, eb / z];
    let loss = -(p[label].ln());
    let mut grad = Tensor::from_vec(&[2], vec![p[0], p[1]])?;
    grad.data_mut()[label] -= 1.0;
    Ok((loss, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rand_tensor(dims: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
        Tensor::rand_init(dims, 1, rng)
    }

    /// Quadruple-loop direct-summation convolution, kept independent of the
    /// production path.
    fn conv2d_oracle(input: &Tensor, kernel: &Tensor, bias: &Tensor, stride: usize, pad: usize) -> Tensor {
        let (h, w, c_in) = (input.dims()[0], input.dims()[1], input.dims()[2]);
        let (k, c_out) = (kernel.dims()[0], kernel.dims()[3]);
        let oh = (h + 2 * pad - k) / stride + 1;
        let ow = (w + 2 * pad - k) / stride + 1;
        let mut out = Tensor::zeros(&[oh, ow, c_out]);
        for oi in 0..oh {
            for oj in 0..ow {
                for co in 0..c_out {
                    let mut acc = bias.data()[co];
                    for ki in 0..k {
                        for kj in 0..k {
                            for ci in 0..c_in {
                                let ii = (oi * stride + ki) as isize - pad as isize;
                                let jj = (oj * stride + kj) as isize - pad as isize;
                                let x = if ii >= 0 && jj >= 0 && (ii as usize) < h && (jj as usize) < w {
                                    input.at3(ii as usize, jj as usize, ci)
                                } else {
                                    0.0
                                };
                                acc += x * kernel.data()[((ki * k + kj) * c_in + ci) * c_out + co];
                            }
                        }
                    }
                    let idx = out.idx3(oi, oj, co);
                    out.data_mut()[idx] = acc;
                }
            }
        }
        out
    }

    #[test]
    fn conv2d_scalar_product() {
        let input = Tensor::from_vec(&[1, 1, 1], vec![2.0]).unwrap();
        let kernel = Tensor::from_vec(&[1, 1, 1, 1], vec![3.0]).unwrap();
        let bias = Tensor::zeros(&[1]);
        let out = conv2d(&input, &kernel, &bias, 1, 0).unwrap();
        assert_eq!(out.data(), &[6.0]);
    }

    #[test]
    fn conv2d_identity_kernel() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let input = rand_tensor(&[4, 5, 2], &mut rng);
        // center-one 3×3 identity kernel per channel
        let mut kernel = Tensor::zeros(&[3, 3, 2, 2]);
        for c in 0..2 {
            kernel.data_mut()[((1 * 3 + 1) * 2 + c) * 2 + c] = 1.0;
        }
        let bias = Tensor::zeros(&[2]);
        let out = conv2d(&input, &kernel, &bias, 1, 1).unwrap();
        assert_eq!(out, input);
    }

    #[test]
    fn conv2d_matches_nested_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..10 {
            let input = rand_tensor(&[5, 5, 2], &mut rng);
            let kernel = rand_tensor(&[3, 3, 2, 4], &mut rng);
            let bias = rand_tensor(&[4], &mut rng);
            for (stride, pad) in [(1, 0), (1, 1), (2, 1)] {
                if (5 + 2 * pad - 3) % stride != 0 {
                    continue;
                }
                let got = conv2d(&input, &kernel, &bias, stride, pad).unwrap();
                let want = conv2d_oracle(&input, &kernel, &bias, stride, pad);
                assert!(got.max_abs_diff(&want) < 1e-10);
            }
        }
    }

    #[test]
    fn conv2d_rejects_shape_mismatch() {
        let input = Tensor::zeros(&[4, 4, 3]);
        let kernel = Tensor::zeros(&[3, 3, 2, 4]);
        let bias = Tensor::zeros(&[4]);
        let err = conv2d(&input, &kernel, &bias, 1, 0).unwrap_err();
        assert!(err.to_string().contains("conv2d"));
        // stride not dividing the padded extent
        let kernel = Tensor::zeros(&[3, 3, 3, 4]);
        assert!(conv2d(&input, &kernel, &bias, 2, 0).is_err());
    }

    #[test]
    fn fc_identity_and_zero_weight() {
        let input = Tensor::from_vec(&[3], vec![1.0, -2.0, 0.5]).unwrap();
        let mut eye = Tensor::zeros(&[3, 3]);
        for i in 0..3 {
            eye.data_mut()[i * 3 + i] = 1.0;
        }
        let out = fully_connected(&input, &eye, &Tensor::zeros(&[3])).unwrap();
        assert_eq!(out.data(), input.data());

        let b = Tensor::from_vec(&[2], vec![4.0, -1.0]).unwrap();
        let out = fully_connected(&input, &Tensor::zeros(&[3, 2]), &b).unwrap();
        assert_eq!(out.data(), b.data());
    }

    #[test]
    fn fc_matches_dot_product_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let input = rand_tensor(&[6], &mut rng);
        let weight = rand_tensor(&[6, 3], &mut rng);
        let bias = rand_tensor(&[3], &mut rng);
        let out = fully_connected(&input, &weight, &bias).unwrap();
        for j in 0..3 {
            let mut want = bias.data()[j];
            for i in 0..6 {
                want += input.data()[i] * weight.data()[i * 3 + j];
            }
            assert!((out.data()[j] - want).abs() < 1e-12);
        }
    }

    #[test]
    fn fc_rejects_length_mismatch() {
        let input = Tensor::zeros(&[5]);
        let weight = Tensor::zeros(&[6, 3]);
        assert!(fully_connected(&input, &weight, &Tensor::zeros(&[3])).is_err());
    }

    #[test]
    fn activation_values() {
        let x = Tensor::from_vec(&[2], vec![0.0, -3.7]).unwrap();
        let s = activate(&x, Activation::Sigmoid);
        assert!((s.data()[0] - 0.5).abs() < 1e-15);
        let r = activate(&x, Activation::Relu);
        assert_eq!(r.data()[1], 0.0);
    }

    #[test]
    fn sigmoid_backward_at_zero_is_quarter() {
        let x = Tensor::from_vec(&[3], vec![0.0, 0.0, 0.0]).unwrap();
        let y = activate(&x, Activation::Sigmoid);
        let g = activate_backward(&x, &y, Activation::Sigmoid, &Tensor::filled(&[3], 1.0));
        for v in g.data() {
            assert!((v - 0.25).abs() < 1e-15);
        }
    }

    #[test]
    fn softmax_xent_values() {
        let (loss, _) = softmax_xent(&Tensor::from_vec(&[2], vec![0.0, 0.0]).unwrap(), 0).unwrap();
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-12);
        let (loss, _) = softmax_xent(&Tensor::from_vec(&[2], vec![50.0, -50.0]).unwrap(), 0).unwrap();
        assert!(loss < 1e-9);
    }

    #[test]
    fn softmax_xent_shift_invariant() {
        let a = Tensor::from_vec(&[2], vec![1.3, -0.4]).unwrap();
        let b = Tensor::from_vec(&[2], vec![1.3 + 7.0, -0.4 + 7.0]).unwrap();
        let (la, _) = softmax_xent(&a, 1).unwrap();
        let (lb, _) = softmax_xent(&b, 1).unwrap();
        assert!((la - lb).abs() < 1e-12);
    }
}
