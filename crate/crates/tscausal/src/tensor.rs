//! Dense row-major `f64` tensors and the small set of numeric primitives
//! the rest of the crate is built from.
//!
//! Everything here is deterministic: given identical inputs (and, for
//! [`he_init`], identical seeds) every function reproduces identical bit
//! patterns, which the checkpoint and benchmark layers rely on.

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense row-major tensor of `f64` values.
///
/// The shape is dynamic (rank 1 to 4 in practice). Indexing helpers are
/// provided for the common ranks; hot loops index `data` directly through
/// the offset helpers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    /// All-zeros tensor of the given shape.
    pub fn zeros(shape: &[usize]) -> Tensor {
        let len = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; len],
        }
    }

    /// Tensor filled with a constant.
    pub fn filled(shape: &[usize], value: f64) -> Tensor {
        let len = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; len],
        }
    }

    /// Build a tensor from an explicit buffer; the buffer length must match
    /// the shape product.
    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Result<Tensor> {
        let expect: usize = shape.iter().product();
        if data.len() != expect {
            return Err(Error::shape(format!(
                "buffer of {} values cannot fill shape {:?} ({} values)",
                data.len(),
                shape,
                expect
            )));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
        })
    }

    /// Tensor shape.
    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    /// Number of elements.
    pub fn len(&self) -> usize {
        self.data.len()
    }

    /// True when the tensor holds no elements.
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Read-only view of the underlying buffer (row-major).
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Mutable view of the underlying buffer (row-major).
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// Row-major offset for a rank-2 index.
    #[inline(always)]
    pub fn idx2(&self, i: usize, j: usize) -> usize {
        debug_assert_eq!(self.shape.len(), 2);
        debug_assert!(i < self.shape[0] && j < self.shape[1]);
        i * self.shape[1] + j
    }

    /// Row-major offset for a rank-3 index.
    #[inline(always)]
    pub fn idx3(&self, i: usize, j: usize, k: usize) -> usize {
        debug_assert_eq!(self.shape.len(), 3);
        debug_assert!(i < self.shape[0] && j < self.shape[1] && k < self.shape[2]);
        (i * self.shape[1] + j) * self.shape[2] + k
    }

    /// Element access, rank 2.
    #[inline(always)]
    pub fn get2(&self, i: usize, j: usize) -> f64 {
        self.data[self.idx2(i, j)]
    }

    /// Element write, rank 2.
    #[inline(always)]
    pub fn set2(&mut self, i: usize, j: usize, v: f64) {
        let k = self.idx2(i, j);
        self.data[k] = v;
    }

    /// Element access, rank 3.
    #[inline(always)]
    pub fn get3(&self, i: usize, j: usize, k: usize) -> f64 {
        self.data[self.idx3(i, j, k)]
    }

    /// Element write, rank 3.
    #[inline(always)]
    pub fn set3(&mut self, i: usize, j: usize, k: usize, v: f64) {
        let off = self.idx3(i, j, k);
        self.data[off] = v;
    }

    /// Borrow row `i` of a rank-2 tensor as a slice.
    pub fn row(&self, i: usize) -> &[f64] {
        debug_assert_eq!(self.shape.len(), 2);
        let cols = self.shape[1];
        &self.data[i * cols..(i + 1) * cols]
    }

    /// Apply a function elementwise, producing a new tensor.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Combine two same-shape tensors elementwise.
    pub fn zip_map(&self, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        if self.shape != other.shape {
            return Err(Error::shape(format!(
                "elementwise op needs equal shapes, got {:?} and {:?}",
                self.shape, other.shape
            )));
        }
        Ok(Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    /// `self += scale * other` in place; shapes must match.
    pub fn add_scaled(&mut self, other: &Tensor, scale: f64) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::shape(format!(
                "accumulate needs equal shapes, got {:?} and {:?}",
                self.shape, other.shape
            )));
        }
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += scale * b;
        }
        Ok(())
    }

    /// Multiply every element in place.
    pub fn scale_in_place(&mut self, s: f64) {
        for v in &mut self.data {
            *v *= s;
        }
    }

    /// Sum of all elements.
    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    /// Sum of absolute values (the L1 norm used for sparsity penalties).
    pub fn abs_sum(&self) -> f64 {
        self.data.iter().map(|v| v.abs()).sum()
    }

    /// True when every element is finite.
    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Matrix product of two rank-2 tensors: `[m,k] x [k,n] -> [m,n]`.
    pub fn matmul(&self, rhs: &Tensor) -> Result<Tensor> {
        if self.shape.len() != 2 || rhs.shape.len() != 2 {
            return Err(Error::shape(format!(
                "matmul needs rank-2 operands, got {:?} and {:?}",
                self.shape, rhs.shape
            )));
        }
        let (m, k) = (self.shape[0], self.shape[1]);
        let (k2, n) = (rhs.shape[0], rhs.shape[1]);
        if k != k2 {
            return Err(Error::shape(format!(
                "matmul inner dimensions differ: {:?} x {:?}",
                self.shape, rhs.shape
            )));
        }
        let mut out = vec![0.0; m * n];
        // i-k-j order keeps the rhs row contiguous in the inner loop.
        for i in 0..m {
            let arow = &self.data[i * k..(i + 1) * k];
            let orow = &mut out[i * n..(i + 1) * n];
            for (l, &a) in arow.iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                let brow = &rhs.data[l * n..(l + 1) * n];
                for (o, &b) in orow.iter_mut().zip(brow) {
                    *o += a * b;
                }
            }
        }
        Ok(Tensor {
            shape: vec![m, n],
            data: out,
        })
    }

    /// Transpose of a rank-2 tensor.
    pub fn transpose2(&self) -> Result<Tensor> {
        if self.shape.len() != 2 {
            return Err(Error::shape(format!(
                "transpose needs a rank-2 tensor, got {:?}",
                self.shape
            )));
        }
        let (m, n) = (self.shape[0], self.shape[1]);
        let mut data = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                data[j * m + i] = self.data[i * n + j];
            }
        }
        Ok(Tensor {
            shape: vec![n, m],
            data,
        })
    }
}

/// Affine map over the trailing axis: `x [.., in] x w [in, out] + b [out]`.
///
/// Leading axes are treated as a batch; the bias broadcasts across them.
pub fn linear_forward(x: &Tensor, w: &Tensor, b: &Tensor) -> Result<Tensor> {
    if w.shape().len() != 2 {
        return Err(Error::shape(format!(
            "weight must be rank-2, got {:?}",
            w.shape()
        )));
    }
    let (din, dout) = (w.shape()[0], w.shape()[1]);
    if b.shape() != [dout] {
        return Err(Error::shape(format!(
            "bias shape {:?} does not match weight output dim {}",
            b.shape(),
            dout
        )));
    }
    let xs = x.shape();
    if xs.is_empty() || xs[xs.len() - 1] != din {
        return Err(Error::shape(format!(
            "input shape {:?} does not end in weight input dim {}",
            xs, din
        )));
    }
    let rows = x.len() / din;
    let mut out = vec![0.0; rows * dout];
    for r in 0..rows {
        let xrow = &x.data()[r * din..(r + 1) * din];
        let orow = &mut out[r * dout..(r + 1) * dout];
        orow.copy_from_slice(b.data());
        for (l, &xv) in xrow.iter().enumerate() {
            if xv == 0.0 {
                continue;
            }
            let wrow = &w.data()[l * dout..(l + 1) * dout];
            for (o, &wv) in orow.iter_mut().zip(wrow) {
                *o += xv * wv;
            }
        }
    }
    let mut oshape = xs.to_vec();
    *oshape.last_mut().expect("non-empty shape") = dout;
    Tensor::from_vec(&oshape, out)
}

/// Leaky rectifier applied elementwise: `v` for `v > 0`, `slope * v`
/// otherwise. `slope` must lie in `(0, 1)`; configuration validation
/// enforces that before any forward pass runs.
pub fn leaky_relu(x: &Tensor, slope: f64) -> Tensor {
    debug_assert!(slope > 0.0 && slope < 1.0);
    x.map(|v| if v > 0.0 { v } else { slope * v })
}

/// Derivative of [`leaky_relu`] with respect to its input, evaluated
/// elementwise on the pre-activation values.
pub fn leaky_relu_deriv(x: &Tensor, slope: f64) -> Tensor {
    x.map(|v| if v > 0.0 { 1.0 } else { slope })
}

/// Numerically stable softmax along one axis.
///
/// The maximum of each lane is subtracted before exponentiation, so inputs
/// of any magnitude produce finite outputs that sum to 1 per lane.
pub fn softmax(x: &Tensor, axis: usize) -> Result<Tensor> {
    let shape = x.shape();
    if axis >= shape.len() {
        return Err(Error::arg(format!(
            "softmax axis {} out of range for shape {:?}",
            axis, shape
        )));
    }
    let axis_len = shape[axis];
    let inner: usize = shape[axis + 1..].iter().product();
    let outer: usize = shape[..axis].iter().product();
    let mut out = vec![0.0; x.len()];
    for o in 0..outer {
        for i in 0..inner {
            let base = o * axis_len * inner + i;
            let mut max = f64::NEG_INFINITY;
            for a in 0..axis_len {
                max = max.max(x.data()[base + a * inner]);
            }
            let mut denom = 0.0;
            for a in 0..axis_len {
                let e = (x.data()[base + a * inner] - max).exp();
                out[base + a * inner] = e;
                denom += e;
            }
            for a in 0..axis_len {
                out[base + a * inner] /= denom;
            }
        }
    }
    Tensor::from_vec(shape, out)
}

/// Draw a tensor from the scaled normal initializer `N(0, 2 / fan_in)`.
///
/// Sampling order is row-major over the shape and driven by a counter-based
/// generator, so a given `(shape, fan_in, seed)` triple always yields the
/// same tensor.
pub fn he_init(shape: &[usize], fan_in: usize, seed: u64) -> Result<Tensor> {
    if fan_in == 0 {
        return Err(Error::arg("he_init fan_in must be positive".to_string()));
    }
    let std = (2.0 / fan_in as f64).sqrt();
    let normal = Normal::new(0.0, std)
        .map_err(|e| Error::arg(format!("he_init distribution: {e}")))?;
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let len: usize = shape.iter().product();
    let data: Vec<f64> = (0..len).map(|_| normal.sample(&mut rng)).collect();
    Tensor::from_vec(shape, data)
}

/// Central finite-difference gradient of a scalar function at `x`.
///
/// Used by the gradient-verification tests as an oracle that is independent
/// of the analytic backward pass.
pub fn finite_diff_grad(mut f: impl FnMut(&Tensor) -> f64, x: &Tensor, eps: f64) -> Tensor {
    let mut probe = x.clone();
    let mut grad = Tensor::zeros(x.shape());
    for i in 0..x.len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + eps;
        let up = f(&probe);
        probe.data_mut()[i] = orig - eps;
        let down = f(&probe);
        probe.data_mut()[i] = orig;
        grad.data_mut()[i] = (up - down) / (2.0 * eps);
    }
    grad
}
