//! Dense row-major `f64` arrays and the numeric kernels shared by the
//! recorded and unrecorded evaluation paths.
//!
//! Every primitive on the tape calls into the kernels here, so a forward pass
//! with recording disabled produces bitwise the same values as a recorded one.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::Shape {
                op: "tensor",
                detail: format!("shape {:?} holds {} values, got {}", shape, numel, data.len()),
            });
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let numel = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; numel],
        }
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        let numel = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; numel],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Tensor {
            shape: Vec::new(),
            data: vec![value],
        }
    }

    pub fn vector(data: Vec<f64>) -> Self {
        Tensor {
            shape: vec![data.len()],
            data,
        }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Tensor::new(vec![rows, cols], data)
    }

    /// Build a matrix from equal-length rows.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::Shape {
                op: "from_rows",
                detail: "ragged rows".into(),
            });
        }
        let data = rows.iter().flatten().copied().collect();
        Tensor::matrix(rows.len(), cols, data)
    }

    pub fn identity(n: usize) -> Self {
        let mut data = vec![0.0; n * n];
        for i in 0..n {
            data[i * n + i] = 1.0;
        }
        Tensor {
            shape: vec![n, n],
            data,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> Option<f64> {
        (self.data.len() == 1).then(|| self.data[0])
    }

    /// Rows and columns when viewed as a matrix; rank-1 tensors are one row.
    pub fn dims2(&self) -> Option<(usize, usize)> {
        match self.shape.as_slice() {
            [r, c] => Some((*r, *c)),
            [n] => Some((1, *n)),
            [] => Some((1, 1)),
            _ => None,
        }
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let (_, c) = self.dims2().expect("row() on rank > 2 tensor");
        &self.data[i * c..(i + 1) * c]
    }

    pub fn reshape(mut self, shape: Vec<usize>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != self.data.len() {
            return Err(Error::Shape {
                op: "reshape",
                detail: format!("{:?} -> {:?}", self.shape, shape),
            });
        }
        self.shape = shape;
        Ok(self)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// `C = alpha * op(A) * op(B) + beta * C` over raw row-major buffers.
///
/// `a_t` / `b_t` read the operand transposed through its strides, so the
/// backward pass never materializes a transpose.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_t: bool,
    b: &[f64],
    b_t: bool,
    beta: f64,
    c: &mut [f64],
) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        c.iter_mut().for_each(|v| *v *= beta);
        return;
    }
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the asserted buffer lengths cover every index reachable through
    // the (row, column) strides above for an m x k, k x n and m x n layout.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, k) = match a.shape() {
        [m, k] => (*m, *k),
        s => {
            return Err(Error::Shape {
                op: "matmul",
                detail: format!("left operand must be a matrix, got {s:?}"),
            })
        }
    };
    let (k2, n) = match b.shape() {
        [k2, n] => (*k2, *n),
        s => {
            return Err(Error::Shape {
                op: "matmul",
                detail: format!("right operand must be a matrix, got {s:?}"),
            })
        }
    };
    if k != k2 {
        return Err(Error::Shape {
            op: "matmul",
            detail: format!("{:?} x {:?}", a.shape(), b.shape()),
        });
    }
    let mut out = vec![0.0; m * n];
    gemm(m, k, n, a.data(), false, b.data(), false, 0.0, &mut out);
    Tensor::matrix(m, n, out)
}

/// `sum_j coeffs[j] * xs[j]`, accumulated left to right.
///
/// Both the plain and the recorded Runge-Kutta paths build stages and dense
/// output through this one kernel.
pub fn lincomb_into(terms: &[(f64, &[f64])], out: &mut [f64]) {
    let Some(((c0, x0), rest)) = terms.split_first() else {
        out.iter_mut().for_each(|v| *v = 0.0);
        return;
    };
    for (o, x) in out.iter_mut().zip(x0.iter()) {
        *o = c0 * x;
    }
    for (c, x) in rest {
        for (o, xv) in out.iter_mut().zip(x.iter()) {
            *o += c * xv;
        }
    }
}

pub fn lincomb(terms: &[(f64, &[f64])]) -> Vec<f64> {
    let n = terms.first().map_or(0, |(_, x)| x.len());
    let mut out = vec![0.0; n];
    lincomb_into(terms, &mut out);
    out
}

// Rational approximation on |x| <= 0.625, exponential form beyond.
const TANH_P: [f64; 3] = [
    -9.643_991_794_250_522_386_28e-1,
    -9.928_772_310_019_185_865_64e1,
    -1.614_687_684_417_084_479_52e3,
];
const TANH_Q: [f64; 3] = [
    1.128_116_784_916_329_314_02e2,
    2.235_488_390_601_004_485_83e3,
    4.844_063_053_251_254_860_48e3,
];

/// Hyperbolic tangent, within a few ulp of `f64::tanh` and faster.
pub fn tanh(x: f64) -> f64 {
    let z = x.abs();
    if z > 0.625 {
        if z > 22.0 {
            return 1f64.copysign(x);
        }
        let s = (2.0 * z).exp();
        (1.0 - 2.0 / (s + 1.0)).copysign(x)
    } else {
        let w = x * x;
        let p = (TANH_P[0] * w + TANH_P[1]) * w + TANH_P[2];
        let q = ((w + TANH_Q[0]) * w + TANH_Q[1]) * w + TANH_Q[2];
        x + x * w * p / q
    }
}

/// Numerically stable `ln(1 + e^x)`.
pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Logistic sigmoid, the derivative of [`softplus`].
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Inverse of [`softplus`] for `y > 0`.
pub fn softplus_inv(y: f64) -> f64 {
    if y > 30.0 {
        y + (-(-y).exp()).ln_1p()
    } else {
        y.exp_m1().ln()
    }
}

/// Row-wise softmax of a `[rows, cols]` buffer.
pub fn softmax_rows(data: &[f64], cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; data.len()];
    for (row, o) in data.chunks(cols).zip(out.chunks_mut(cols)) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut z = 0.0;
        for (ov, &x) in o.iter_mut().zip(row) {
            *ov = (x - max).exp();
            z += *ov;
        }
        o.iter_mut().for_each(|v| *v /= z);
    }
    out
}

/// Row-wise log-softmax of a `[rows, cols]` buffer.
pub fn log_softmax_rows(data: &[f64], cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; data.len()];
    for (row, o) in data.chunks(cols).zip(out.chunks_mut(cols)) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|&x| (x - max).exp()).sum::<f64>().ln();
        for (ov, &x) in o.iter_mut().zip(row) {
            *ov = x - lse;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tanh_matches_std() {
        for i in -4000..=4000 {
            let x = i as f64 * 0.01 + 0.003;
            let (a, b) = (tanh(x), x.tanh());
            assert!((a - b).abs() <= 1e-15 * b.abs().max(1e-300), "x = {x}");
        }
        assert_eq!(tanh(0.0), 0.0);
        assert_eq!(tanh(40.0), 1.0);
        assert_eq!(tanh(-40.0), -1.0);
    }

    #[test]
    fn identity_matmul_returns_operand() {
        let v = Tensor::matrix(3, 1, vec![1.0, 2.0, 3.0]).unwrap();
        let out = matmul(&Tensor::identity(3), &v).unwrap();
        assert_eq!(out.data(), &[1.0, 2.0, 3.0]);
    }

    #[test]
    fn matmul_rejects_mismatched_inner_dims() {
        let a = Tensor::zeros(&[2, 3]);
        let b = Tensor::zeros(&[2, 3]);
        let err = matmul(&a, &b).unwrap_err();
        assert!(matches!(err, Error::Shape { op: "matmul", .. }), "{err}");
    }

    #[test]
    fn transposed_gemm_matches_explicit_transpose() {
        // A is 2x3, A^T B with B 2x2 -> 3x2
        let a = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let b = [1.0, -1.0, 0.5, 2.0];
        let mut c = vec![0.0; 6];
        gemm(3, 2, 2, &a, true, &b, false, 0.0, &mut c);
        let expected = [
            1.0 * 1.0 + 4.0 * 0.5,
            -1.0 + 4.0 * 2.0,
            2.0 * 1.0 + 5.0 * 0.5,
            -2.0 + 5.0 * 2.0,
            3.0 * 1.0 + 6.0 * 0.5,
            -3.0 + 6.0 * 2.0,
        ];
        assert_eq!(c, expected);
    }

    #[test]
    fn shape_must_match_data() {
        assert!(Tensor::new(vec![2, 2], vec![1.0; 3]).is_err());
        assert_eq!(Tensor::scalar(2.0).numel(), 1);
    }

    #[test]
    fn softplus_round_trips() {
        for y in [1e-6, 0.3, 1.0, 7.5, 40.0] {
            assert!((softplus(softplus_inv(y)) - y).abs() <= 1e-12 * y.max(1.0));
        }
    }

    #[test]
    fn softmax_rows_normalize() {
        let p = softmax_rows(&[1.0, 2.0, 3.0, 1000.0, 0.0, -1000.0], 3);
        assert!((p[..3].iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert!((p[3] - 1.0).abs() < 1e-15);
    }
}
