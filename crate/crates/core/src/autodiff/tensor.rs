use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};

/// Dense row-major array of `f64`.
///
/// A one-dimensional tensor of length `n` behaves as a `1 × n` row wherever a
/// matrix is expected.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return shape_err(
                "tensor",
                format!("shape {shape:?} needs {expected} entries, got {}", data.len()),
            );
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("tensor"));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Tensor {
            shape: vec![1],
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

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return shape_err("from_rows", "ragged rows");
        }
        Tensor::new(vec![rows.len(), cols], rows.concat())
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Tensor::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    pub(crate) fn from_parts_unchecked(shape: Vec<usize>, data: Vec<f64>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Tensor { shape, data }
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

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Rows and columns when viewed as a matrix; `None` above rank 2.
    pub fn dims2(&self) -> Option<(usize, usize)> {
        match self.shape.as_slice() {
            [n] => Some((1, *n)),
            [r, c] => Some((*r, *c)),
            _ => None,
        }
    }

    pub fn rows(&self) -> usize {
        self.dims2().map_or(0, |d| d.0)
    }

    pub fn cols(&self) -> usize {
        self.dims2().map_or(0, |d| d.1)
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.cols() + col]
    }

    pub fn row(&self, row: usize) -> &[f64] {
        let c = self.cols();
        &self.data[row * c..(row + 1) * c]
    }

    pub fn reshaped(mut self, shape: Vec<usize>) -> Result<Self> {
        if shape.iter().product::<usize>() != self.data.len() {
            return shape_err("reshape", format!("{:?} -> {shape:?}", self.shape));
        }
        self.shape = shape;
        Ok(self)
    }

    pub fn sum_squares(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn transpose(&self) -> Result<Tensor> {
        let (r, c) = match self.shape.as_slice() {
            [r, c] => (*r, *c),
            _ => return shape_err("transpose", format!("expected rank 2, got {:?}", self.shape)),
        };
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = self.data[i * c + j];
            }
        }
        Ok(Tensor::from_parts_unchecked(vec![c, r], out))
    }

    /// Matrix product. A one-dimensional left operand yields a one-dimensional result.
    pub fn matmul(&self, rhs: &Tensor) -> Result<Tensor> {
        let (m, k) = self
            .dims2()
            .ok_or_else(|| shape_error("matmul", format!("lhs rank {:?}", self.shape)))?;
        let (k2, n) = match rhs.shape.as_slice() {
            [r, c] => (*r, *c),
            s => return shape_err("matmul", format!("rhs must be rank 2, got {s:?}")),
        };
        if k != k2 {
            return shape_err(
                "matmul",
                format!("inner dimensions differ: {:?} x {:?}", self.shape, rhs.shape),
            );
        }
        let out = gemm(&self.data, &rhs.data, m, k, n);
        let shape = if self.shape.len() == 1 {
            vec![n]
        } else {
            vec![m, n]
        };
        Ok(Tensor::from_parts_unchecked(shape, out))
    }
}

fn shape_error(op: &'static str, detail: String) -> Error {
    Error::Shape { op, detail }
}

/// `out[m×n] = a[m×k] · b[k×n]`
pub(crate) fn gemm(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    strided_gemm(a, (k, 1), b, (n, 1), m, k, n)
}

/// `out[m×n] = a[m×k] · b[n×k]ᵀ`
pub(crate) fn gemm_nt(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    strided_gemm(a, (k, 1), b, (1, k), m, k, n)
}

/// `out[k×n] = a[m×k]ᵀ · b[m×n]`
pub(crate) fn gemm_tn(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    strided_gemm(a, (1, k), b, (n, 1), k, m, n)
}

/// Row-major product of an `m×k` and a `k×n` operand given by
/// `(row, column)` strides.
fn strided_gemm(
    a: &[f64],
    (rsa, csa): (usize, usize),
    b: &[f64],
    (rsb, csb): (usize, usize),
    m: usize,
    k: usize,
    n: usize,
) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    if m == 0 || n == 0 || k == 0 {
        return out;
    }
    assert!(a.len() >= m * k && b.len() >= k * n, "gemm operand too short");
    // SAFETY: the asserted lengths cover every index the strides reach.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            0.0,
            out.as_mut_ptr(),
            n as isize,
            1,
        );
    }
    out
}
