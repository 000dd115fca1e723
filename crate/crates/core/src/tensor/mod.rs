//! Minimal dense-tensor layer: f64 row-major arrays, forward and hand-paired
//! backward passes for every primitive the network composes, an SGD optimizer
//! with momentum and weight decay, and a finite-difference gradient checker.

mod gradcheck;
mod ops;
mod sgd;

pub use gradcheck::grad_check;
pub use ops::{
    activate, activate_backward, conv2d, conv2d_backward, conv2d_out_dims, fully_connected,
    fully_connected_backward, softmax_xent, Activation,
};
pub use sgd::{sgd_step, SgdConfig};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Result};

/// Dense tensor of 64-bit reals in row-major order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    dims: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(dims: &[usize]) -> Tensor {
        let n = dims.iter().product();
        Tensor {
            dims: dims.to_vec(),
            data: vec![0.0; n],
        }
    }

    pub fn filled(dims: &[usize], v: f64) -> Tensor {
        let n = dims.iter().product();
        Tensor {
            dims: dims.to_vec(),
            data: vec![v; n],
        }
    }

    pub fn from_vec(dims: &[usize], data: Vec<f64>) -> Result<Tensor> {
        let n: usize = dims.iter().product();
        if n != data.len() {
            return Err(shape_err(
                "Tensor::from_vec",
                format!("dims {:?} imply {} elements, got {}", dims, n, data.len()),
            ));
        }
        Ok(Tensor {
            dims: dims.to_vec(),
            data,
        })
    }

    /// He-uniform init: centered uniform with scale sqrt(6/fan_in), which
    /// keeps activation magnitudes roughly constant through relu layers.
    pub fn rand_init(dims: &[usize], fan_in: usize, rng: &mut impl Rng) -> Tensor {
        let scale = (6.0 / fan_in.max(1) as f64).sqrt();
        let n: usize = dims.iter().product();
        let data = (0..n).map(|_| rng.gen_range(-scale..scale)).collect();
        Tensor {
            dims: dims.to_vec(),
            data,
        }
    }

    /// He-uniform init for [in, out] fc weights with each output unit's
    /// column shifted to zero mean. Relu activations carry a large positive
    /// DC component; without centering, a unit whose column sums negative
    /// starts dead for every input.
    pub fn rand_init_fc(dims: &[usize; 2], rng: &mut impl Rng) -> Tensor {
        let mut t = Tensor::rand_init(dims, dims[0], rng);
        let (n, m) = (dims[0], dims[1]);
        for j in 0..m {
            let mean: f64 = (0..n).map(|i| t.data[i * m + j]).sum::<f64>() / n as f64;
            for i in 0..n {
                t.data[i * m + j] -= mean;
            }
        }
        t
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// Reinterpret the same flat data under new dims.
    pub fn reshaped(&self, dims: &[usize]) -> Result<Tensor> {
        Tensor::from_vec(dims, self.data.clone())
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn fill(&mut self, v: f64) {
        self.data.iter_mut().for_each(|x| *x = v);
    }

    /// Row-major flat index for a 3-d tensor.
    #[inline]
    pub fn idx3(&self, i: usize, j: usize, k: usize) -> usize {
        debug_assert_eq!(self.dims.len(), 3);
        (i * self.dims[1] + j) * self.dims[2] + k
    }

    #[inline]
    pub fn at3(&self, i: usize, j: usize, k: usize) -> f64 {
        self.data[self.idx3(i, j, k)]
    }

    #[inline]
    pub fn at2(&self, i: usize, j: usize) -> f64 {
        debug_assert_eq!(self.dims.len(), 2);
        self.data[i * self.dims[1] + j]
    }

    pub fn add_assign(&mut self, other: &Tensor) {
        debug_assert_eq!(self.dims, other.dims);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Named learnable parameter with its gradient and momentum buffer.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ParamGroup {
    pub name: String,
    pub value: Tensor,
    pub grad: Tensor,
    pub velocity: Tensor,
    pub frozen: bool,
}

impl ParamGroup {
    pub fn new(name: impl Into<String>, value: Tensor) -> ParamGroup {
        let dims = value.dims().to_vec();
        ParamGroup {
            name: name.into(),
            value,
            grad: Tensor::zeros(&dims),
            velocity: Tensor::zeros(&dims),
            frozen: false,
        }
    }

    pub fn clear_grad(&mut self) {
        self.grad.fill(0.0);
    }
}
