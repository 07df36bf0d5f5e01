//! Dense row-major float64 tensors of rank 1 to 3.
//!
//! A [`SeqTensor`] is the one representation used for sequences
//! (`[time, space, channel]`), frames, vectors and weight matrices.

use crate::error::{Error, Result};
use crate::rng::RngState;

#[derive(Debug, Clone, PartialEq)]
pub struct SeqTensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Elementwise {
    Add,
    Sub,
    Mul,
    Sigmoid,
    Tanh,
    Scale(f64),
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

impl SeqTensor {
    pub fn new(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        if shape.is_empty() || shape.len() > 3 {
            return Err(Error::config(format!("tensor rank must be 1..=3, got {shape:?}")));
        }
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::dims("SeqTensor::new", shape, &[data.len()]));
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![0.0; n],
        }
    }

    pub fn filled(shape: &[usize], value: f64) -> Self {
        let mut t = Self::zeros(shape);
        t.data.fill(value);
        t
    }

    pub fn from_vec(data: Vec<f64>) -> Self {
        Self {
            shape: vec![data.len()],
            data,
        }
    }

    /// Row-major matrix from nested rows. Panics on ragged input; test helper.
    pub fn from_rows(rows: &[&[f64]]) -> Self {
        let cols = rows.first().map_or(0, |r| r.len());
        assert!(rows.iter().all(|r| r.len() == cols), "ragged rows");
        Self {
            shape: vec![rows.len(), cols],
            data: rows.iter().flat_map(|r| r.iter().copied()).collect(),
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Self::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    /// i.i.d. `N(0, scale²)` entries.
    pub fn randn(shape: &[usize], scale: f64, rng: &mut RngState) -> Result<Self> {
        if !(scale > 0.0) || !scale.is_finite() {
            return Err(Error::config(format!("randn scale must be positive, got {scale}")));
        }
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| scale * rng.normal()).collect();
        Self::new(shape, data)
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

    /// Extent of the leading (time) axis.
    pub fn time_len(&self) -> usize {
        self.shape[0]
    }

    /// Number of scalars in one time step.
    pub fn frame_len(&self) -> usize {
        self.shape[1..].iter().product()
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != self.data.len() || shape.is_empty() || shape.len() > 3 {
            return Err(Error::dims("reshape", &self.shape, shape));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    /// Time step `t` as a tensor of the trailing shape.
    pub fn frame(&self, t: usize) -> Result<SeqTensor> {
        let extent = self.time_len();
        if t >= extent {
            return Err(Error::Bounds { index: t, extent });
        }
        let fl = self.frame_len();
        let shape = if self.shape.len() == 1 {
            vec![1]
        } else {
            self.shape[1..].to_vec()
        };
        Ok(SeqTensor {
            shape,
            data: self.data[t * fl..(t + 1) * fl].to_vec(),
        })
    }

    pub fn frame_slice(&self, t: usize) -> &[f64] {
        let fl = self.frame_len();
        &self.data[t * fl..(t + 1) * fl]
    }

    /// Stack equally shaped frames along a new leading time axis.
    pub fn stack(frames: &[SeqTensor], frame_shape: &[usize]) -> Result<SeqTensor> {
        let fl: usize = frame_shape.iter().product();
        let mut data = Vec::with_capacity(frames.len() * fl);
        for f in frames {
            if f.len() != fl {
                return Err(Error::dims("stack", frame_shape, f.shape()));
            }
            data.extend_from_slice(&f.data);
        }
        let mut shape = vec![frames.len()];
        shape.extend_from_slice(frame_shape);
        SeqTensor::new(&shape, data)
    }

    /// Gather the listed time steps in order; trailing axes untouched.
    pub fn slice_time(&self, indices: &[usize]) -> Result<SeqTensor> {
        let extent = self.time_len();
        let fl = self.frame_len();
        let mut data = Vec::with_capacity(indices.len() * fl);
        for &t in indices {
            if t >= extent {
                return Err(Error::Bounds { index: t, extent });
            }
            data.extend_from_slice(&self.data[t * fl..(t + 1) * fl]);
        }
        let mut shape = self.shape.clone();
        shape[0] = indices.len();
        Ok(SeqTensor { shape, data })
    }

    pub fn matmul(&self, rhs: &SeqTensor) -> Result<SeqTensor> {
        if self.shape.len() != 2 || rhs.shape.len() != 2 || self.shape[1] != rhs.shape[0] {
            return Err(Error::dims("matmul", &self.shape, &rhs.shape));
        }
        let (m, k, n) = (self.shape[0], self.shape[1], rhs.shape[1]);
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let row = &mut out[i * n..(i + 1) * n];
            for p in 0..k {
                let a = self.data[i * k + p];
                if a == 0.0 {
                    continue;
                }
                axpy(a, &rhs.data[p * n..(p + 1) * n], row);
            }
        }
        Ok(SeqTensor {
            shape: vec![m, n],
            data: out,
        })
    }

    pub fn unary(&self, op: Elementwise) -> Result<SeqTensor> {
        let f: Box<dyn Fn(f64) -> f64> = match op {
            Elementwise::Sigmoid => Box::new(sigmoid),
            Elementwise::Tanh => Box::new(f64::tanh),
            Elementwise::Scale(s) => Box::new(move |x| s * x),
            _ => return Err(Error::config(format!("{op:?} is a binary operation"))),
        };
        Ok(SeqTensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| f(x)).collect(),
        })
    }

    pub fn binary(&self, op: Elementwise, rhs: &SeqTensor) -> Result<SeqTensor> {
        if self.shape != rhs.shape {
            return Err(Error::dims("elementwise", &self.shape, &rhs.shape));
        }
        let f: fn(f64, f64) -> f64 = match op {
            Elementwise::Add => |a, b| a + b,
            Elementwise::Sub => |a, b| a - b,
            Elementwise::Mul => |a, b| a * b,
            _ => return Err(Error::config(format!("{op:?} is a unary operation"))),
        };
        Ok(SeqTensor {
            shape: self.shape.clone(),
            data: self.data.iter().zip(&rhs.data).map(|(&a, &b)| f(a, b)).collect(),
        })
    }

    pub fn add(&self, rhs: &SeqTensor) -> Result<SeqTensor> {
        self.binary(Elementwise::Add, rhs)
    }

    pub fn sub(&self, rhs: &SeqTensor) -> Result<SeqTensor> {
        self.binary(Elementwise::Sub, rhs)
    }

    pub fn scale(&self, s: f64) -> SeqTensor {
        SeqTensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|x| s * x).collect(),
        }
    }

    /// `self += alpha * other`, shapes must agree.
    pub fn add_scaled(&mut self, alpha: f64, other: &SeqTensor) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::dims("add_scaled", &self.shape, &other.shape));
        }
        axpy(alpha, &other.data, &mut self.data);
        Ok(())
    }

    pub fn fill(&mut self, value: f64) {
        self.data.fill(value);
    }

    pub fn sum_squares(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }
}

/// `y += a * x`.
#[inline]
pub(crate) fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

/// Dot product with four independent accumulators so the loop vectorizes.
#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for c in 0..chunks {
        let i = c * 4;
        acc[0] += a[i] * b[i];
        acc[1] += a[i + 1] * b[i + 1];
        acc[2] += a[i + 2] * b[i + 2];
        acc[3] += a[i + 3] * b[i + 3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for i in chunks * 4..a.len() {
        s += a[i] * b[i];
    }
    s
}

/// `out += W x` for row-major `W` of shape `[rows, x.len()]`.
#[inline]
pub(crate) fn gemv_acc(w: &[f64], x: &[f64], out: &mut [f64]) {
    let cols = x.len();
    for (r, o) in out.iter_mut().enumerate() {
        *o += dot(&w[r * cols..(r + 1) * cols], x);
    }
}

/// `out += Wᵀ g` for row-major `W` of shape `[g.len(), out.len()]`.
#[inline]
pub(crate) fn gemv_t_acc(w: &[f64], g: &[f64], out: &mut [f64]) {
    let cols = out.len();
    for (r, &gr) in g.iter().enumerate() {
        if gr != 0.0 {
            axpy(gr, &w[r * cols..(r + 1) * cols], out);
        }
    }
}

/// `W += g xᵀ` for row-major `W` of shape `[g.len(), x.len()]`.
#[inline]
pub(crate) fn outer_acc(g: &[f64], x: &[f64], w: &mut [f64]) {
    let cols = x.len();
    for (r, &gr) in g.iter().enumerate() {
        if gr != 0.0 {
            axpy(gr, x, &mut w[r * cols..(r + 1) * cols]);
        }
    }
}
