//! Dense building blocks with explicit reverse-mode passes.
//!
//! Parameters live in one flat `[f64]`; layers only carry offsets into it.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

/// Row-major real matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "matrix data length mismatch");
        Matrix { rows, cols, data }
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// self · other
    pub fn matmul(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.cols, other.rows);
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            let orow = &mut out.data[i * other.cols..(i + 1) * other.cols];
            for k in 0..self.cols {
                let a = self.data[i * self.cols + k];
                if a == 0.0 {
                    continue;
                }
                let brow = &other.data[k * other.cols..(k + 1) * other.cols];
                orow.iter_mut().zip(brow).for_each(|(o, b)| *o += a * b);
            }
        }
        out
    }

    /// self · otherᵀ
    pub fn matmul_t(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.cols, other.cols);
        let mut out = Matrix::zeros(self.rows, other.rows);
        for i in 0..self.rows {
            for j in 0..other.rows {
                out.data[i * other.rows + j] = dot(self.row(i), other.row(j));
            }
        }
        out
    }

    /// selfᵀ · other
    pub fn t_matmul(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.rows, other.rows);
        let mut out = Matrix::zeros(self.cols, other.cols);
        for k in 0..self.rows {
            let brow = other.row(k);
            for i in 0..self.cols {
                let a = self.data[k * self.cols + i];
                if a == 0.0 {
                    continue;
                }
                let orow = &mut out.data[i * other.cols..(i + 1) * other.cols];
                orow.iter_mut().zip(brow).for_each(|(o, b)| *o += a * b);
            }
        }
        out
    }

    pub fn add(&self, other: &Matrix) -> Matrix {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect();
        Matrix::from_vec(self.rows, self.cols, data)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Matrix {
        Matrix::from_vec(self.rows, self.cols, self.data.iter().map(|&v| f(v)).collect())
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Columns [start, start + width).
    pub fn columns(&self, start: usize, width: usize) -> Matrix {
        let mut out = Matrix::zeros(self.rows, width);
        for r in 0..self.rows {
            out.row_mut(r).copy_from_slice(&self.row(r)[start..start + width]);
        }
        out
    }

    pub fn set_columns(&mut self, start: usize, block: &Matrix) {
        for r in 0..self.rows {
            self.row_mut(r)[start..start + block.cols].copy_from_slice(block.row(r));
        }
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Affine layer y = x W + b with W stored (in × out) row-major.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Dense {
    pub weight: usize,
    pub bias: usize,
    pub inputs: usize,
    pub outputs: usize,
}

impl Dense {
    pub fn param_count(&self) -> usize {
        self.inputs * self.outputs + self.outputs
    }

    fn weights<'a>(&self, params: &'a [f64]) -> &'a [f64] {
        &params[self.weight..self.weight + self.inputs * self.outputs]
    }

    pub fn forward(&self, params: &[f64], x: &Matrix) -> Matrix {
        assert_eq!(x.cols, self.inputs);
        let w = Matrix::from_vec(self.inputs, self.outputs, self.weights(params).to_vec());
        let mut y = x.matmul(&w);
        let b = &params[self.bias..self.bias + self.outputs];
        for r in 0..y.rows {
            y.row_mut(r).iter_mut().zip(b).for_each(|(v, bb)| *v += bb);
        }
        y
    }

    /// Accumulates dW, db into `grads` and returns dx.
    pub fn backward(&self, params: &[f64], x: &Matrix, dy: &Matrix, grads: &mut [f64]) -> Matrix {
        let dw = x.t_matmul(dy);
        grads[self.weight..self.weight + dw.data.len()]
            .iter_mut()
            .zip(&dw.data)
            .for_each(|(g, d)| *g += d);
        for r in 0..dy.rows {
            grads[self.bias..self.bias + self.outputs]
                .iter_mut()
                .zip(dy.row(r))
                .for_each(|(g, d)| *g += d);
        }
        let w = Matrix::from_vec(self.inputs, self.outputs, self.weights(params).to_vec());
        dy.matmul_t(&w)
    }
}

/// Per-row layer normalization with learned gain and bias.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LayerNorm {
    pub gain: usize,
    pub bias: usize,
    pub width: usize,
}

pub const LAYER_NORM_EPS: f64 = 1e-9;

/// Normalized activations and inverse standard deviations per row.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerNormCache {
    pub normalized: Matrix,
    pub inv_std: Vec<f64>,
}

impl LayerNorm {
    pub fn param_count(&self) -> usize {
        2 * self.width
    }

    pub fn forward(&self, params: &[f64], x: &Matrix) -> (Matrix, LayerNormCache) {
        let n = self.width as f64;
        let gain = &params[self.gain..self.gain + self.width];
        let bias = &params[self.bias..self.bias + self.width];
        let mut normalized = Matrix::zeros(x.rows, x.cols);
        let mut y = Matrix::zeros(x.rows, x.cols);
        let mut inv_std = Vec::with_capacity(x.rows);
        for r in 0..x.rows {
            let row = x.row(r);
            let mean = row.iter().sum::<f64>() / n;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            let inv = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            inv_std.push(inv);
            for c in 0..x.cols {
                let h = (row[c] - mean) * inv;
                normalized.set(r, c, h);
                y.set(r, c, gain[c] * h + bias[c]);
            }
        }
        (y, LayerNormCache { normalized, inv_std })
    }

    pub fn backward(&self, params: &[f64], cache: &LayerNormCache, dy: &Matrix, grads: &mut [f64]) -> Matrix {
        let n = self.width as f64;
        let gain = &params[self.gain..self.gain + self.width];
        let mut dx = Matrix::zeros(dy.rows, dy.cols);
        for r in 0..dy.rows {
            let h = cache.normalized.row(r);
            let d = dy.row(r);
            for c in 0..self.width {
                grads[self.gain + c] += d[c] * h[c];
                grads[self.bias + c] += d[c];
            }
            let dh: Vec<f64> = (0..self.width).map(|c| d[c] * gain[c]).collect();
            let mean_dh = dh.iter().sum::<f64>() / n;
            let mean_dh_h = dot(&dh, h) / n;
            let inv = cache.inv_std[r];
            for c in 0..self.width {
                dx.set(r, c, inv * (dh[c] - mean_dh - h[c] * mean_dh_h));
            }
        }
        dx
    }
}

/// Exact GeLU, x·Φ(x).
#[inline]
pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x * FRAC_1_SQRT_2))
}

#[inline]
pub fn gelu_grad(x: f64) -> f64 {
    let cdf = 0.5 * (1.0 + libm::erf(x * FRAC_1_SQRT_2));
    let pdf = (-0.5 * x * x).exp() / (2.0 * PI).sqrt();
    cdf + x * pdf
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Row-wise softmax with max subtraction.
pub fn softmax_rows(x: &Matrix) -> Matrix {
    let mut out = Matrix::zeros(x.rows, x.cols);
    for r in 0..x.rows {
        let row = x.row(r);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = row.iter().map(|v| (v - max).exp()).collect();
        let total: f64 = exps.iter().sum();
        out.row_mut(r).iter_mut().zip(&exps).for_each(|(o, e)| *o = e / total);
    }
    out
}

/// Scaled dot-product attention softmax(q kᵀ · scale) v.
pub fn attention(q: &Matrix, k: &Matrix, v: &Matrix, scale: f64) -> Matrix {
    attention_with_weights(q, k, v, scale).0
}

/// Attention output and the softmax weights.
pub fn attention_with_weights(q: &Matrix, k: &Matrix, v: &Matrix, scale: f64) -> (Matrix, Matrix) {
    let scores = q.matmul_t(k).map(|s| s * scale);
    let weights = softmax_rows(&scores);
    (weights.matmul(v), weights)
}

/// Reverse pass of [`attention`]: returns (dq, dk, dv).
pub fn attention_backward(
    q: &Matrix,
    k: &Matrix,
    v: &Matrix,
    weights: &Matrix,
    scale: f64,
    dout: &Matrix,
) -> (Matrix, Matrix, Matrix) {
    let dv = weights.t_matmul(dout);
    let dw = dout.matmul_t(v);
    let mut ds = Matrix::zeros(weights.rows, weights.cols);
    for r in 0..weights.rows {
        let a = weights.row(r);
        let g = dw.row(r);
        let inner = dot(a, g);
        for c in 0..weights.cols {
            ds.set(r, c, a[c] * (g[c] - inner) * scale);
        }
    }
    (ds.matmul(k), ds.t_matmul(q), dv)
}
