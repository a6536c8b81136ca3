//! Dense row-major f32 tensors.
//!
//! All reductions accumulate left to right in index order so repeated runs
//! agree bitwise. No implicit broadcasting: elementwise ops require equal
//! shapes, scalar-tensor scaling is the only exception.

use crate::error::{CoreError, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f32>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        let expect: usize = shape.iter().product();
        if expect != data.len() {
            return Err(CoreError::invalid(
                "Tensor::new",
                format!("shape {:?} wants {} values, got {}", shape, expect, data.len()),
            ));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Tensor { shape: shape.to_vec(), data: vec![0.0; n] }
    }

    pub fn full(shape: &[usize], value: f32) -> Self {
        let n = shape.iter().product();
        Tensor { shape: shape.to_vec(), data: vec![value; n] }
    }

    pub fn scalar(value: f32) -> Self {
        Tensor { shape: vec![1], data: vec![value] }
    }

    pub fn eye(n: usize) -> Self {
        let mut t = Tensor::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    pub fn scalar_value(&self) -> Result<f32> {
        if !self.is_scalar() {
            return Err(CoreError::invalid(
                "scalar_value",
                format!("tensor of shape {:?} is not scalar", self.shape),
            ));
        }
        Ok(self.data[0])
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn reshape(&self, new_shape: &[usize]) -> Result<Tensor> {
        let n: usize = new_shape.iter().product();
        if n != self.data.len() {
            return Err(CoreError::shapes("reshape", &self.shape, new_shape));
        }
        Ok(Tensor { shape: new_shape.to_vec(), data: self.data.clone() })
    }

    fn zip(&self, rhs: &Tensor, op: &'static str, f: impl Fn(f32, f32) -> f32) -> Result<Tensor> {
        if self.shape != rhs.shape {
            return Err(CoreError::shapes(op, &self.shape, &rhs.shape));
        }
        let data = self.data.iter().zip(&rhs.data).map(|(a, b)| f(*a, *b)).collect();
        Ok(Tensor { shape: self.shape.clone(), data })
    }

    pub fn add(&self, rhs: &Tensor) -> Result<Tensor> {
        self.zip(rhs, "add", |a, b| a + b)
    }

    pub fn sub(&self, rhs: &Tensor) -> Result<Tensor> {
        self.zip(rhs, "sub", |a, b| a - b)
    }

    pub fn mul(&self, rhs: &Tensor) -> Result<Tensor> {
        self.zip(rhs, "mul", |a, b| a * b)
    }

    pub fn scale(&self, c: f32) -> Tensor {
        let data = self.data.iter().map(|v| v * c).collect();
        Tensor { shape: self.shape.clone(), data }
    }

    pub fn square(&self) -> Tensor {
        let data = self.data.iter().map(|v| v * v).collect();
        Tensor { shape: self.shape.clone(), data }
    }

    pub fn sqrt_elem(&self) -> Tensor {
        let data = self.data.iter().map(|v| v.sqrt()).collect();
        Tensor { shape: self.shape.clone(), data }
    }

    /// Sum of every element, left to right.
    pub fn sum(&self) -> f32 {
        let mut acc = 0.0f32;
        for v in &self.data {
            acc += v;
        }
        acc
    }

    pub fn mean(&self) -> f32 {
        if self.data.is_empty() {
            return 0.0;
        }
        self.sum() / self.data.len() as f32
    }

    /// Removes `axis`, summing across it. Works for any rank.
    pub fn sum_axis(&self, axis: usize) -> Result<Tensor> {
        if axis >= self.shape.len() {
            return Err(CoreError::invalid(
                "sum_axis",
                format!("axis {} out of range for shape {:?}", axis, self.shape),
            ));
        }
        let outer: usize = self.shape[..axis].iter().product();
        let mid = self.shape[axis];
        let inner: usize = self.shape[axis + 1..].iter().product();
        let mut out_shape: Vec<usize> = self.shape[..axis].to_vec();
        out_shape.extend_from_slice(&self.shape[axis + 1..]);
        if out_shape.is_empty() {
            out_shape.push(1);
        }
        let mut out = vec![0.0f32; outer * inner];
        for o in 0..outer {
            for m in 0..mid {
                let base = (o * mid + m) * inner;
                let obase = o * inner;
                for i in 0..inner {
                    out[obase + i] += self.data[base + i];
                }
            }
        }
        Tensor::new(out_shape, out)
    }

    pub fn mean_axis(&self, axis: usize) -> Result<Tensor> {
        let n = self.shape[axis.min(self.shape.len().saturating_sub(1))] as f32;
        Ok(self.sum_axis(axis)?.scale(1.0 / n))
    }

    /// 2-D matrix product: [m,k] x [k,n] -> [m,n].
    pub fn matmul(&self, rhs: &Tensor) -> Result<Tensor> {
        let (a, b) = (self, rhs);
        if a.rank() != 2 || b.rank() != 2 || a.shape[1] != b.shape[0] {
            return Err(CoreError::shapes("matmul", &a.shape, &b.shape));
        }
        let (m, k, n) = (a.shape[0], a.shape[1], b.shape[1]);
        let mut out = vec![0.0f32; m * n];
        matmul_into(&a.data, &b.data, &mut out, m, k, n);
        Tensor::new(vec![m, n], out)
    }

    /// [m,k] x [n,k]^T -> [m,n].
    pub fn matmul_nt(&self, rhs: &Tensor) -> Result<Tensor> {
        let (a, b) = (self, rhs);
        if a.rank() != 2 || b.rank() != 2 || a.shape[1] != b.shape[1] {
            return Err(CoreError::shapes("matmul_nt", &a.shape, &b.shape));
        }
        let (m, k, n) = (a.shape[0], a.shape[1], b.shape[0]);
        let mut out = vec![0.0f32; m * n];
        matmul_nt_into(&a.data, &b.data, &mut out, m, k, n);
        Tensor::new(vec![m, n], out)
    }

    /// Applies a [k,n] map to the last axis of a rank-2 or rank-3 tensor.
    pub fn linear(&self, w: &Tensor) -> Result<Tensor> {
        if w.rank() != 2 {
            return Err(CoreError::shapes("linear", &self.shape, &w.shape));
        }
        let k = w.shape[0];
        let n = w.shape[1];
        match self.rank() {
            2 => self.matmul(w),
            3 => {
                if self.shape[2] != k {
                    return Err(CoreError::shapes("linear", &self.shape, &w.shape));
                }
                let (b, m) = (self.shape[0], self.shape[1]);
                let mut out = vec![0.0f32; b * m * n];
                for i in 0..b {
                    matmul_into(
                        &self.data[i * m * k..(i + 1) * m * k],
                        &w.data,
                        &mut out[i * m * n..(i + 1) * m * n],
                        m,
                        k,
                        n,
                    );
                }
                Tensor::new(vec![b, m, n], out)
            }
            _ => Err(CoreError::shapes("linear", &self.shape, &w.shape)),
        }
    }

    /// Batched matmul over axis 0: [b,m,k] x [b,k,n] -> [b,m,n].
    pub fn bmm(&self, rhs: &Tensor) -> Result<Tensor> {
        if self.rank() != 3 || rhs.rank() != 3 || self.shape[0] != rhs.shape[0] || self.shape[2] != rhs.shape[1] {
            return Err(CoreError::shapes("bmm", &self.shape, &rhs.shape));
        }
        let (b, m, k, n) = (self.shape[0], self.shape[1], self.shape[2], rhs.shape[2]);
        let mut out = vec![0.0f32; b * m * n];
        for i in 0..b {
            matmul_into(
                &self.data[i * m * k..(i + 1) * m * k],
                &rhs.data[i * k * n..(i + 1) * k * n],
                &mut out[i * m * n..(i + 1) * m * n],
                m,
                k,
                n,
            );
        }
        Tensor::new(vec![b, m, n], out)
    }

    /// Batched matmul with transposed rhs: [b,m,k] x [b,n,k]^T -> [b,m,n].
    pub fn bmm_nt(&self, rhs: &Tensor) -> Result<Tensor> {
        if self.rank() != 3 || rhs.rank() != 3 || self.shape[0] != rhs.shape[0] || self.shape[2] != rhs.shape[2] {
            return Err(CoreError::shapes("bmm_nt", &self.shape, &rhs.shape));
        }
        let (b, m, k, n) = (self.shape[0], self.shape[1], self.shape[2], rhs.shape[1]);
        let mut out = vec![0.0f32; b * m * n];
        for i in 0..b {
            matmul_nt_into(
                &self.data[i * m * k..(i + 1) * m * k],
                &rhs.data[i * n * k..(i + 1) * n * k],
                &mut out[i * m * n..(i + 1) * m * n],
                m,
                k,
                n,
            );
        }
        Tensor::new(vec![b, m, n], out)
    }

    /// Swaps the first two axes of a rank-2 or rank-3 tensor.
    pub fn transpose01(&self) -> Result<Tensor> {
        match self.rank() {
            2 => {
                let (r, c) = (self.shape[0], self.shape[1]);
                let mut out = vec![0.0f32; r * c];
                for i in 0..r {
                    for j in 0..c {
                        out[j * r + i] = self.data[i * c + j];
                    }
                }
                Tensor::new(vec![c, r], out)
            }
            3 => {
                let (a, b, c) = (self.shape[0], self.shape[1], self.shape[2]);
                let mut out = vec![0.0f32; a * b * c];
                for i in 0..a {
                    for j in 0..b {
                        let src = (i * b + j) * c;
                        let dst = (j * a + i) * c;
                        out[dst..dst + c].copy_from_slice(&self.data[src..src + c]);
                    }
                }
                Tensor::new(vec![b, a, c], out)
            }
            _ => Err(CoreError::invalid(
                "transpose01",
                format!("rank {} unsupported", self.rank()),
            )),
        }
    }

    /// Softmax over the last axis, row by row, with max-shift stabilization.
    pub fn softmax_last(&self) -> Result<Tensor> {
        if self.shape.is_empty() {
            return Err(CoreError::invalid("softmax_last", "rank-0 tensor"));
        }
        let cols = *self.shape.last().unwrap();
        if cols == 0 {
            return Err(CoreError::invalid("softmax_last", "empty last axis"));
        }
        let rows = self.data.len() / cols;
        let mut out = vec![0.0f32; self.data.len()];
        for r in 0..rows {
            let row = &self.data[r * cols..(r + 1) * cols];
            let mut mx = f32::NEG_INFINITY;
            for v in row {
                if *v > mx {
                    mx = *v;
                }
            }
            let dst = &mut out[r * cols..(r + 1) * cols];
            let mut denom = 0.0f32;
            for (d, v) in dst.iter_mut().zip(row) {
                let e = (v - mx).exp();
                *d = e;
                denom += e;
            }
            for d in dst.iter_mut() {
                *d /= denom;
            }
        }
        Tensor::new(self.shape.clone(), out)
    }

    /// Contiguous slice along axis 0.
    pub fn slice_axis0(&self, start: usize, len: usize) -> Result<Tensor> {
        if self.shape.is_empty() || start + len > self.shape[0] {
            return Err(CoreError::invalid(
                "slice_axis0",
                format!("range {}..{} out of bounds for shape {:?}", start, start + len, self.shape),
            ));
        }
        let inner: usize = self.shape[1..].iter().product();
        let mut shape = self.shape.clone();
        shape[0] = len;
        let data = self.data[start * inner..(start + len) * inner].to_vec();
        Tensor::new(shape, data)
    }

    /// Concatenates along axis 0; trailing axes must agree.
    pub fn concat_axis0(parts: &[&Tensor]) -> Result<Tensor> {
        if parts.is_empty() {
            return Err(CoreError::invalid("concat_axis0", "no inputs"));
        }
        let tail = &parts[0].shape[1..];
        let mut rows = 0usize;
        for p in parts {
            if p.shape.is_empty() || &p.shape[1..] != tail {
                return Err(CoreError::shapes("concat_axis0", &parts[0].shape, &p.shape));
            }
            rows += p.shape[0];
        }
        let mut shape = parts[0].shape.clone();
        shape[0] = rows;
        let mut data = Vec::with_capacity(rows * tail.iter().product::<usize>());
        for p in parts {
            data.extend_from_slice(&p.data);
        }
        Tensor::new(shape, data)
    }

    /// Repeats a length-c vector (or [1,c] row) into [rows, c].
    pub fn repeat_rows(&self, rows: usize) -> Result<Tensor> {
        let c = match self.rank() {
            1 => self.shape[0],
            2 if self.shape[0] == 1 => self.shape[1],
            _ => {
                return Err(CoreError::invalid(
                    "repeat_rows",
                    format!("expected vector, got shape {:?}", self.shape),
                ))
            }
        };
        let mut data = Vec::with_capacity(rows * c);
        for _ in 0..rows {
            data.extend_from_slice(&self.data);
        }
        Tensor::new(vec![rows, c], data)
    }

    /// L2 norm along `axis` (the axis is removed).
    pub fn l2_norm_axis(&self, axis: usize) -> Result<Tensor> {
        Ok(self.square().sum_axis(axis)?.sqrt_elem())
    }
}

/// out += is not used: out must be zeroed by the caller. Plain ikj loop.
pub(crate) fn matmul_into(a: &[f32], b: &[f32], out: &mut [f32], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let orow = &mut out[i * n..(i + 1) * n];
        for (kk, &av) in arow.iter().enumerate() {
            let brow = &b[kk * n..(kk + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

pub(crate) fn matmul_nt_into(a: &[f32], b: &[f32], out: &mut [f32], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let brow = &b[j * k..(j + 1) * k];
            let mut acc = 0.0f32;
            for (av, bv) in arow.iter().zip(brow) {
                acc += av * bv;
            }
            out[i * n + j] = acc;
        }
    }
}

/// Cuts [n, c, h, w] videos into non-overlapping p x p patches.
///
/// Output layout is [n, (h/p)*(w/p), c*p*p]; tokens run row-major over the
/// patch grid and features are channel-major within a patch.
pub fn patchify(x: &Tensor, p: usize) -> Result<Tensor> {
    if x.rank() != 4 {
        return Err(CoreError::invalid("patchify", format!("expected rank 4, got {:?}", x.shape())));
    }
    let (n, c, h, w) = (x.shape[0], x.shape[1], x.shape[2], x.shape[3]);
    if p == 0 || h % p != 0 || w % p != 0 {
        return Err(CoreError::invalid(
            "patchify",
            format!("patch size {} does not divide {}x{}", p, h, w),
        ));
    }
    let (gh, gw) = (h / p, w / p);
    let tokens = gh * gw;
    let dim = c * p * p;
    let mut out = vec![0.0f32; n * tokens * dim];
    for fi in 0..n {
        for ci in 0..c {
            for gy in 0..gh {
                for gx in 0..gw {
                    let t = gy * gw + gx;
                    for dy in 0..p {
                        let src = ((fi * c + ci) * h + gy * p + dy) * w + gx * p;
                        let dst = (fi * tokens + t) * dim + ci * p * p + dy * p;
                        out[dst..dst + p].copy_from_slice(&x.data[src..src + p]);
                    }
                }
            }
        }
    }
    Tensor::new(vec![n, tokens, dim], out)
}

/// Inverse of [`patchify`]: [n, tokens, c*p*p] back to [n, c, h, w].
pub fn unpatchify(x: &Tensor, p: usize, c: usize, h: usize, w: usize) -> Result<Tensor> {
    if x.rank() != 3 {
        return Err(CoreError::invalid("unpatchify", format!("expected rank 3, got {:?}", x.shape())));
    }
    let (gh, gw) = (h / p, w / p);
    let tokens = gh * gw;
    let dim = c * p * p;
    let n = x.shape[0];
    if p == 0 || h % p != 0 || w % p != 0 || x.shape[1] != tokens || x.shape[2] != dim {
        return Err(CoreError::invalid(
            "unpatchify",
            format!("shape {:?} incompatible with p={} c={} h={} w={}", x.shape(), p, c, h, w),
        ));
    }
    let mut out = vec![0.0f32; n * c * h * w];
    for fi in 0..n {
        for ci in 0..c {
            for gy in 0..gh {
                for gx in 0..gw {
                    let t = gy * gw + gx;
                    for dy in 0..p {
                        let dst = ((fi * c + ci) * h + gy * p + dy) * w + gx * p;
                        let src = (fi * tokens + t) * dim + ci * p * p + dy * p;
                        out[dst..dst + p].copy_from_slice(&x.data[src..src + p]);
                    }
                }
            }
        }
    }
    Tensor::new(vec![n, c, h, w], out)
}

/// Pairwise cosine similarity between the rows of a [r, c] matrix.
///
/// The diagonal is pinned to 1. A row with exactly zero norm is treated as
/// orthogonal to everything: its off-diagonal entries are 0. Norms carry an
/// epsilon so near-zero rows stay finite.
pub const COSINE_EPS: f32 = 1e-8;

pub fn self_cosine(x: &Tensor) -> Result<Tensor> {
    if x.rank() != 2 {
        return Err(CoreError::invalid("self_cosine", format!("expected rank 2, got {:?}", x.shape())));
    }
    let (r, c) = (x.shape[0], x.shape[1]);
    let norms: Vec<f32> = (0..r)
        .map(|i| {
            let row = &x.data[i * c..(i + 1) * c];
            let mut acc = 0.0f32;
            for v in row {
                acc += v * v;
            }
            acc.sqrt()
        })
        .collect();
    let mut out = vec![0.0f32; r * r];
    let mut degenerate = false;
    for i in 0..r {
        out[i * r + i] = 1.0;
        if norms[i] == 0.0 {
            degenerate = true;
            continue;
        }
        for j in (i + 1)..r {
            if norms[j] == 0.0 {
                continue;
            }
            let ri = &x.data[i * c..(i + 1) * c];
            let rj = &x.data[j * c..(j + 1) * c];
            let mut dot = 0.0f32;
            for (a, b) in ri.iter().zip(rj) {
                dot += a * b;
            }
            let v = dot / ((norms[i] + COSINE_EPS) * (norms[j] + COSINE_EPS));
            out[i * r + j] = v;
            out[j * r + i] = v;
        }
    }
    if degenerate {
        log::warn!("self_cosine: degenerate zero-norm token row");
    }
    Tensor::new(vec![r, r], out)
}
