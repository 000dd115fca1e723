//! Gating module: a learned per-location scalar in (0,1) that convexly
//! blends deformable and standard features.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Result};
use crate::tensor::{
    activate, activate_backward, fully_connected, fully_connected_backward, Activation,
    ParamGroup, Tensor,
};

/// H×W map of gate values, each strictly in (0,1).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GateMap {
    tensor: Tensor,
}

impl GateMap {
    pub fn from_tensor(tensor: Tensor) -> Result<GateMap> {
        if tensor.dims().len() != 2 {
            return Err(shape_err(
                "GateMap",
                format!("expected H×W, got {:?}", tensor.dims()),
            ));
        }
        Ok(GateMap { tensor })
    }

    pub fn height(&self) -> usize {
        self.tensor.dims()[0]
    }

    pub fn width(&self) -> usize {
        self.tensor.dims()[1]
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.tensor.at2(i, j)
    }

    pub fn tensor(&self) -> &Tensor {
        &self.tensor
    }
}

/// Two fully connected layers ending in a sigmoid over H·W outputs.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GateParams {
    pub fc1_weight: ParamGroup,
    pub fc1_bias: ParamGroup,
    pub fc2_weight: ParamGroup,
    pub fc2_bias: ParamGroup,
}

impl GateParams {
    /// Final bias starts at 0 so training begins at an even blend.
    pub fn init(h: usize, w: usize, c: usize, hidden: usize, rng: &mut impl Rng) -> GateParams {
        let n = h * w * c;
        GateParams {
            fc1_weight: ParamGroup::new(
                "gate.fc1.weight",
                Tensor::rand_init_fc(&[n, hidden], rng),
            ),
            fc1_bias: ParamGroup::new("gate.fc1.bias", Tensor::zeros(&[hidden])),
            fc2_weight: ParamGroup::new(
                "gate.fc2.weight",
                Tensor::rand_init_fc(&[hidden, h * w], rng),
            ),
            fc2_bias: ParamGroup::new("gate.fc2.bias", Tensor::zeros(&[h * w])),
        }
    }

    pub fn groups_mut(&mut self) -> [&mut ParamGroup; 4] {
        [
            &mut self.fc1_weight,
            &mut self.fc1_bias,
            &mut self.fc2_weight,
            &mut self.fc2_bias,
        ]
    }
}

/// Intermediates of compute_gate kept for the backward pass.
pub struct GateCache {
    z1: Tensor,
    a1: Tensor,
    z2: Tensor,
    sigma_flat: Tensor,
}

/// sigma = sigmoid(fc2(relu(fc1(flatten(X))))), reshaped to H×W.
pub fn compute_gate(x: &Tensor, params: &GateParams) -> Result<(GateMap, GateCache)> {
    let (h, w) = (x.dims()[0], x.dims()[1]);
    let z1 = fully_connected(x, &params.fc1_weight.value, &params.fc1_bias.value)?;
    let a1 = activate(&z1, Activation::Relu);
    let z2 = fully_connected(&a1, &params.fc2_weight.value, &params.fc2_bias.value)?;
    let mut sigma_flat = activate(&z2, Activation::Sigmoid);
    // keep gate values strictly inside (0,1) even where f64 saturates
    let hi = 1.0 - f64::EPSILON / 2.0;
    for v in sigma_flat.data_mut() {
        *v = v.clamp(f64::MIN_POSITIVE, hi);
    }
    let map = GateMap::from_tensor(sigma_flat.reshaped(&[h, w])?)?;
    Ok((
        map,
        GateCache {
            z1,
            a1,
            z2,
            sigma_flat,
        },
    ))
}

/// Backward of compute_gate; accumulates parameter gradients and returns the
/// gradient w.r.t. X. `grad_sigma` is H×W.
pub fn compute_gate_backward(
    x: &Tensor,
    params: &mut GateParams,
    cache: &GateCache,
    grad_sigma: &Tensor,
) -> Result<Tensor> {
    let g_sig = grad_sigma.reshaped(&[grad_sigma.len()])?;
    let g_z2 = activate_backward(&cache.z2, &cache.sigma_flat, Activation::Sigmoid, &g_sig);
    let (g_a1, g_w2, g_b2) = fully_connected_backward(&cache.a1, &params.fc2_weight.value, &g_z2)?;
    params.fc2_weight.grad.add_assign(&g_w2);
    params.fc2_bias.grad.add_assign(&g_b2);
    let g_z1 = activate_backward(&cache.z1, &cache.a1, Activation::Relu, &g_a1);
    let (g_x, g_w1, g_b1) = fully_connected_backward(x, &params.fc1_weight.value, &g_z1)?;
    params.fc1_weight.grad.add_assign(&g_w1);
    params.fc1_bias.grad.add_assign(&g_b1);
    Ok(g_x)
}

/// Y = X' .* sigma + X .* (1 - sigma), sigma broadcast across channels.
/// Computed as X + sigma .* (X' - X) so that X' == X yields Y == X bitwise.
pub fn fuse(x: &Tensor, x_prime: &Tensor, sigma: &GateMap) -> Result<Tensor> {
    check_fuse(x, x_prime, sigma)?;
    let (h, w, c) = (x.dims()[0], x.dims()[1], x.dims()[2]);
    let mut out = Tensor::zeros(x.dims());
    for i in 0..h {
        for j in 0..w {
            let s = sigma.get(i, j);
            let base = out.idx3(i, j, 0);
            for ch in 0..c {
                let xv = x.data()[base + ch];
                out.data_mut()[base + ch] = xv + s * (x_prime.data()[base + ch] - xv);
            }
        }
    }
    Ok(out)
}

/// Gradients of fuse w.r.t. X, X' and sigma. grad_sigma is H×W with entry
/// sum_c grad_out * (X' - X).
pub fn fuse_backward(
    x: &Tensor,
    x_prime: &Tensor,
    sigma: &GateMap,
    grad_out: &Tensor,
) -> Result<(Tensor, Tensor, Tensor)> {
    check_fuse(x, x_prime, sigma)?;
    let (h, w, c) = (x.dims()[0], x.dims()[1], x.dims()[2]);
    let mut g_x = Tensor::zeros(x.dims());
    let mut g_xp = Tensor::zeros(x.dims());
    let mut g_sigma = Tensor::zeros(&[h, w]);
    for i in 0..h {
        for j in 0..w {
            let s = sigma.get(i, j);
            let base = x.idx3(i, j, 0);
            let mut acc = 0.0;
            for ch in 0..c {
                let g = grad_out.data()[base + ch];
                g_xp.data_mut()[base + ch] = g * s;
                g_x.data_mut()[base + ch] = g * (1.0 - s);
                acc += g * (x_prime.data()[base + ch] - x.data()[base + ch]);
            }
            g_sigma.data_mut()[i * w + j] = acc;
        }
    }
    Ok((g_x, g_xp, g_sigma))
}

/// Arithmetic mean of all gate entries; logged per frame during tracking.
pub fn mean_gate(sigma: &GateMap) -> f64 {
    let n = sigma.tensor.len();
    sigma.tensor.data().iter().sum::<f64>() / n as f64
}

fn check_fuse(x: &Tensor, x_prime: &Tensor, sigma: &GateMap) -> Result<()> {
    if x.dims() != x_prime.dims() {
        return Err(shape_err(
            "fuse",
            format!("X dims {:?} differ from X' dims {:?}", x.dims(), x_prime.dims()),
        ));
    }
    if sigma.height() != x.dims()[0] || sigma.width() != x.dims()[1] {
        return Err(shape_err(
            "fuse",
            format!(
                "gate map {}×{} does not match feature map {:?}",
                sigma.height(),
                sigma.width(),
                x.dims()
            ),
        ));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::grad_check;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn const_gate(h: usize, w: usize, v: f64) -> GateMap {
        GateMap::from_tensor(Tensor::filled(&[h, w], v)).unwrap()
    }

    #[test]
    fn zero_params_give_half() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = Tensor::rand_init(&[3, 3, 2], 1, &mut rng);
        let mut params = GateParams::init(3, 3, 2, 4, &mut rng);
        params.fc1_weight.value.fill(0.0);
        params.fc2_weight.value.fill(0.0);
        let (map, _) = compute_gate(&x, &params).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                assert!((map.get(i, j) - 0.5).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn saturating_bias_approaches_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = Tensor::rand_init(&[2, 2, 1], 1, &mut rng);
        let mut params = GateParams::init(2, 2, 1, 3, &mut rng);
        params.fc1_weight.value.fill(0.0);
        params.fc2_weight.value.fill(0.0);
        params.fc2_bias.value.fill(50.0);
        let (map, _) = compute_gate(&x, &params).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                assert!((map.get(i, j) - 1.0).abs() < 1e-15);
                assert!(map.get(i, j) < 1.0); // never exactly 1 for finite input
            }
        }
    }

    #[test]
    fn hand_set_single_cell_chain() {
        // 1×1×1 input, hidden width 1: sigma = sigmoid(w2*relu(w1*x+b1)+b2)
        let x = Tensor::from_vec(&[1, 1, 1], vec![2.0]).unwrap();
        let mut params = GateParams::init(1, 1, 1, 1, &mut ChaCha8Rng::seed_from_u64(0));
        params.fc1_weight.value = Tensor::from_vec(&[1, 1], vec![0.5]).unwrap();
        params.fc1_bias.value = Tensor::from_vec(&[1], vec![-0.25]).unwrap();
        params.fc2_weight.value = Tensor::from_vec(&[1, 1], vec![2.0]).unwrap();
        params.fc2_bias.value = Tensor::from_vec(&[1], vec![0.1]).unwrap();
        let (map, _) = compute_gate(&x, &params).unwrap();
        let z = 2.0 * (0.5_f64 * 2.0 - 0.25).max(0.0) + 0.1;
        let want = 1.0 / (1.0 + (-z).exp());
        assert!((map.get(0, 0) - want).abs() < 1e-15);
    }

    #[test]
    fn fuse_extremes_and_midpoint() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = Tensor::rand_init(&[2, 3, 2], 1, &mut rng);
        let xp = Tensor::rand_init(&[2, 3, 2], 1, &mut rng);
        // y = x + sigma(x' - x): at sigma=1 the result equals x' up to one
        // rounding step; at sigma=0 it is x bitwise
        let y = fuse(&x, &xp, &const_gate(2, 3, 1.0)).unwrap();
        assert!(y.max_abs_diff(&xp) < 1e-15);
        let y = fuse(&x, &xp, &const_gate(2, 3, 0.0)).unwrap();
        assert_eq!(y, x);
        let zero = Tensor::zeros(&[2, 3, 2]);
        let y = fuse(&zero, &xp, &const_gate(2, 3, 0.5)).unwrap();
        for (a, b) in y.data().iter().zip(xp.data()) {
            assert!((a - 0.5 * b).abs() < 1e-15);
        }
    }

    #[test]
    fn fuse_is_a_convex_combination() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = Tensor::rand_init(&[3, 3, 2], 1, &mut rng);
        let xp = Tensor::rand_init(&[3, 3, 2], 1, &mut rng);
        let mut vals = Tensor::zeros(&[3, 3]);
        for v in vals.data_mut() {
            *v = rng.gen_range(0.001..0.999);
        }
        let sigma = GateMap::from_tensor(vals).unwrap();
        let y = fuse(&x, &xp, &sigma).unwrap();
        for i in 0..y.len() {
            assert!((y.data()[i] - x.data()[i]).abs() <= (xp.data()[i] - x.data()[i]).abs() + 1e-15);
        }
    }

    #[test]
    fn fuse_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = Tensor::rand_init(&[2, 2, 3], 1, &mut rng);
        let xp = Tensor::rand_init(&[2, 2, 3], 1, &mut rng);
        let mut vals = Tensor::zeros(&[2, 2]);
        for v in vals.data_mut() {
            *v = rng.gen_range(0.1..0.9);
        }
        let sigma = GateMap::from_tensor(vals.clone()).unwrap();
        let gout = Tensor::filled(&[2, 2, 3], 1.0);
        let (g_x, g_xp, g_sigma) = fuse_backward(&x, &xp, &sigma, &gout).unwrap();
        let sum = |t: &Tensor| t.data().iter().sum::<f64>();
        // fuse is exactly linear in each argument; a wide step keeps the
        // finite differences at roundoff level
        assert!(
            grad_check(|t| sum(&fuse(t, &xp, &sigma).unwrap()), &x, &g_x, 1e-3).unwrap() < 1e-10
        );
        assert!(
            grad_check(|t| sum(&fuse(&x, t, &sigma).unwrap()), &xp, &g_xp, 1e-3).unwrap() < 1e-10
        );
        let loss_sigma = |t: &Tensor| {
            let s = GateMap::from_tensor(t.clone()).unwrap();
            sum(&fuse(&x, &xp, &s).unwrap())
        };
        assert!(grad_check(loss_sigma, &vals, &g_sigma, 1e-5).unwrap() < 1e-6);
        // dY/dsigma at each location equals sum_c (X'-X)
        for i in 0..2 {
            for j in 0..2 {
                let mut want = 0.0;
                for c in 0..3 {
                    want += xp.at3(i, j, c) - x.at3(i, j, c);
                }
                assert!((g_sigma.at2(i, j) - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn compute_gate_backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let x = Tensor::rand_init(&[2, 2, 2], 1, &mut rng);
        let params = GateParams::init(2, 2, 2, 3, &mut rng);
        let (map, cache) = compute_gate(&x, &params).unwrap();
        let gout = Tensor::filled(&[2, 2], 1.0);
        let mut p2 = params.clone();
        let g_x = compute_gate_backward(&x, &mut p2, &cache, &gout).unwrap();
        let _ = map;
        let loss_x = |t: &Tensor| {
            let (m, _) = compute_gate(t, &params).unwrap();
            m.tensor().data().iter().sum::<f64>()
        };
        assert!(grad_check(loss_x, &x, &g_x, 1e-5).unwrap() < 1e-4);
        let w1 = params.fc1_weight.value.clone();
        let loss_w1 = |t: &Tensor| {
            let mut p = params.clone();
            p.fc1_weight.value = t.clone();
            let (m, _) = compute_gate(&x, &p).unwrap();
            m.tensor().data().iter().sum::<f64>()
        };
        assert!(grad_check(loss_w1, &w1, &p2.fc1_weight.grad, 1e-5).unwrap() < 1e-4);
    }

    #[test]
    fn mean_gate_values() {
        assert_eq!(mean_gate(&const_gate(3, 3, 0.5)), 0.5);
        let vals: Vec<f64> = (1..=9).map(|v| v as f64 / 10.0).collect();
        let m = GateMap::from_tensor(Tensor::from_vec(&[3, 3], vals).unwrap()).unwrap();
        assert!((mean_gate(&m) - 0.5).abs() < 1e-12);
        let single = GateMap::from_tensor(Tensor::from_vec(&[1, 1], vec![0.73]).unwrap()).unwrap();
        assert_eq!(mean_gate(&single), 0.73);
    }

    #[test]
    fn fuse_rejects_dim_mismatch() {
        let x = Tensor::zeros(&[2, 2, 1]);
        let xp = Tensor::zeros(&[2, 3, 1]);
        assert!(fuse(&x, &xp, &const_gate(2, 2, 0.5)).is_err());
        let xp = Tensor::zeros(&[2, 2, 1]);
        assert!(fuse(&x, &xp, &const_gate(3, 2, 0.5)).is_err());
    }
}
