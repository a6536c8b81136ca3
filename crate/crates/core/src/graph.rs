//! Reverse-mode automatic differentiation over [`Tensor`] values.
//!
//! A [`Graph`] records every primitive applied to its variables; nodes are
//! appended in creation order, which is already a topological order, so the
//! backward pass is a single reverse sweep that visits each node exactly
//! once. Gradients accumulate left to right in node order, and every forward
//! value is computed by the same routines as the plain tensor ops, so a taped
//! forward agrees bitwise with an untaped one.
//!
//! The primitive set is closed under everything the self-similarity losses
//! and the token denoiser need: elementwise arithmetic, matrix products
//! (plain, transposed, batched), axis reductions, softmax, reshapes, slicing,
//! concatenation, patch extraction, and pairwise row cosine.

use crate::error::{CoreError, Result};
use crate::tensor::{self, patchify, self_cosine, unpatchify, Tensor, COSINE_EPS};

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, f32),
    Square(usize),
    Sqrt(usize),
    Matmul(usize, usize),
    MatmulNt(usize, usize),
    Linear(usize, usize),
    Bmm(usize, usize),
    BmmNt(usize, usize),
    SumAll(usize),
    SumAxis(usize, usize),
    SoftmaxLast(usize),
    Reshape(usize),
    SliceAxis0 { src: usize, start: usize, len: usize },
    Concat(Vec<usize>),
    RepeatRows(usize, usize),
    Transpose01(usize),
    Patchify(usize, usize),
    Unpatchify { src: usize, p: usize },
    SelfCosine(usize),
}

/// Wengert-style tape. Values are immutable once recorded; `backward` fills
/// per-node gradient accumulators.
pub struct Graph {
    ops: Vec<Op>,
    values: Vec<Tensor>,
    grads: Vec<Option<Tensor>>,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

impl Graph {
    pub fn new() -> Self {
        Graph { ops: Vec::new(), values: Vec::new(), grads: Vec::new() }
    }

    fn push(&mut self, op: Op, value: Tensor) -> Var {
        self.ops.push(op);
        self.values.push(value);
        self.grads.push(None);
        Var(self.values.len() - 1)
    }

    /// Registers an input variable. Gradients flow to leaves.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(Op::Leaf, value)
    }

    /// Registers a value that participates in the forward pass only by
    /// convention: it is a leaf whose gradient the caller ignores.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(Op::Leaf, value)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.values[v.0]
    }

    /// Gradient accumulated at `v` by the last `backward` call.
    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.grads[v.0].as_ref()
    }

    pub fn reset_grads(&mut self) {
        for g in &mut self.grads {
            *g = None;
        }
    }

    pub fn node_count(&self) -> usize {
        self.values.len()
    }

    // ── primitives ──────────────────────────────────────────────────

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.values[a.0].add(&self.values[b.0])?;
        Ok(self.push(Op::Add(a.0, b.0), v))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.values[a.0].sub(&self.values[b.0])?;
        Ok(self.push(Op::Sub(a.0, b.0), v))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.values[a.0].mul(&self.values[b.0])?;
        Ok(self.push(Op::Mul(a.0, b.0), v))
    }

    pub fn scale(&mut self, a: Var, c: f32) -> Var {
        let v = self.values[a.0].scale(c);
        self.push(Op::Scale(a.0, c), v)
    }

    pub fn square(&mut self, a: Var) -> Var {
        let v = self.values[a.0].square();
        self.push(Op::Square(a.0), v)
    }

    pub fn sqrt(&mut self, a: Var) -> Var {
        let v = self.values[a.0].sqrt_elem();
        self.push(Op::Sqrt(a.0), v)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.values[a.0].matmul(&self.values[b.0])?;
        Ok(self.push(Op::Matmul(a.0, b.0), v))
    }

    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.values[a.0].matmul_nt(&self.values[b.0])?;
        Ok(self.push(Op::MatmulNt(a.0, b.0), v))
    }

    /// Applies a [k,n] weight to the last axis of a rank-2/3 input.
    pub fn linear(&mut self, a: Var, w: Var) -> Result<Var> {
        let v = self.values[a.0].linear(&self.values[w.0])?;
        Ok(self.push(Op::Linear(a.0, w.0), v))
    }

    pub fn bmm(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.values[a.0].bmm(&self.values[b.0])?;
        Ok(self.push(Op::Bmm(a.0, b.0), v))
    }

    pub fn bmm_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.values[a.0].bmm_nt(&self.values[b.0])?;
        Ok(self.push(Op::BmmNt(a.0, b.0), v))
    }

    /// Sum of all elements, yielding a [1] scalar.
    pub fn sum(&mut self, a: Var) -> Var {
        let v = Tensor::scalar(self.values[a.0].sum());
        self.push(Op::SumAll(a.0), v)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.values[a.0].len().max(1) as f32;
        let s = self.sum(a);
        self.scale(s, 1.0 / n)
    }

    pub fn sum_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        let v = self.values[a.0].sum_axis(axis)?;
        Ok(self.push(Op::SumAxis(a.0, axis), v))
    }

    pub fn mean_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        let shape = self.values[a.0].shape().to_vec();
        if axis >= shape.len() {
            return Err(CoreError::invalid(
                "mean_axis",
                format!("axis {} out of range for shape {:?}", axis, shape),
            ));
        }
        let s = self.sum_axis(a, axis)?;
        Ok(self.scale(s, 1.0 / shape[axis] as f32))
    }

    /// L2 norm along `axis`, composed from square, sum and sqrt.
    pub fn l2_norm_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        let sq = self.square(a);
        let s = self.sum_axis(sq, axis)?;
        Ok(self.sqrt(s))
    }

    pub fn softmax_last(&mut self, a: Var) -> Result<Var> {
        let v = self.values[a.0].softmax_last()?;
        Ok(self.push(Op::SoftmaxLast(a.0), v))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let v = self.values[a.0].reshape(shape)?;
        Ok(self.push(Op::Reshape(a.0), v))
    }

    pub fn slice_axis0(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let v = self.values[a.0].slice_axis0(start, len)?;
        Ok(self.push(Op::SliceAxis0 { src: a.0, start, len }, v))
    }

    pub fn concat_axis0(&mut self, parts: &[Var]) -> Result<Var> {
        let tensors: Vec<&Tensor> = parts.iter().map(|p| &self.values[p.0]).collect();
        let v = Tensor::concat_axis0(&tensors)?;
        Ok(self.push(Op::Concat(parts.iter().map(|p| p.0).collect()), v))
    }

    pub fn repeat_rows(&mut self, a: Var, rows: usize) -> Result<Var> {
        let v = self.values[a.0].repeat_rows(rows)?;
        Ok(self.push(Op::RepeatRows(a.0, rows), v))
    }

    pub fn transpose01(&mut self, a: Var) -> Result<Var> {
        let v = self.values[a.0].transpose01()?;
        Ok(self.push(Op::Transpose01(a.0), v))
    }

    pub fn patchify(&mut self, a: Var, p: usize) -> Result<Var> {
        let v = patchify(&self.values[a.0], p)?;
        Ok(self.push(Op::Patchify(a.0, p), v))
    }

    pub fn unpatchify(&mut self, a: Var, p: usize, c: usize, h: usize, w: usize) -> Result<Var> {
        let v = unpatchify(&self.values[a.0], p, c, h, w)?;
        Ok(self.push(Op::Unpatchify { src: a.0, p }, v))
    }

    /// Pairwise row cosine, diagonal pinned to 1, zero rows orthogonal.
    pub fn self_cosine(&mut self, a: Var) -> Result<Var> {
        let v = self_cosine(&self.values[a.0])?;
        Ok(self.push(Op::SelfCosine(a.0), v))
    }

    // ── backward ────────────────────────────────────────────────────

    fn accumulate(&mut self, idx: usize, delta: Tensor) {
        match &mut self.grads[idx] {
            Some(g) => {
                for (gv, dv) in g.data_mut().iter_mut().zip(delta.data()) {
                    *gv += dv;
                }
            }
            None => self.grads[idx] = Some(delta),
        }
    }

    /// Reverse sweep from a scalar root. Previous gradients are cleared, so
    /// repeated calls are deterministic.
    pub fn backward(&mut self, root: Var) -> Result<()> {
        if !self.values[root.0].is_scalar() {
            return Err(CoreError::invalid(
                "backward",
                format!("root must be scalar, got shape {:?}", self.values[root.0].shape()),
            ));
        }
        self.reset_grads();
        self.grads[root.0] = Some(Tensor::scalar(1.0));
        for i in (0..=root.0).rev() {
            let g = match &self.grads[i] {
                Some(g) => g.clone(),
                None => continue,
            };
            let op = self.ops[i].clone();
            self.backward_op(i, &op, &g)?;
        }
        Ok(())
    }

    fn backward_op(&mut self, node: usize, op: &Op, g: &Tensor) -> Result<()> {
        match op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.accumulate(*a, g.clone());
                self.accumulate(*b, g.clone());
            }
            Op::Sub(a, b) => {
                self.accumulate(*a, g.clone());
                self.accumulate(*b, g.scale(-1.0));
            }
            Op::Mul(a, b) => {
                let da = g.mul(&self.values[*b])?;
                let db = g.mul(&self.values[*a])?;
                self.accumulate(*a, da);
                self.accumulate(*b, db);
            }
            Op::Scale(a, c) => {
                self.accumulate(*a, g.scale(*c));
            }
            Op::Square(a) => {
                let da = g.mul(&self.values[*a])?.scale(2.0);
                self.accumulate(*a, da);
            }
            Op::Sqrt(a) => {
                // d sqrt(x) = 1 / (2 sqrt(x)); zero output gets zero gradient
                let out = self.values[node].clone();
                let mut da = g.clone();
                for (d, o) in da.data_mut().iter_mut().zip(out.data()) {
                    *d = if *o == 0.0 { 0.0 } else { *d * 0.5 / o };
                }
                self.accumulate(*a, da);
            }
            Op::Matmul(a, b) => {
                let bt = self.values[*b].transpose01()?;
                let at = self.values[*a].transpose01()?;
                let da = g.matmul(&bt)?;
                let db = at.matmul(g)?;
                self.accumulate(*a, da);
                self.accumulate(*b, db);
            }
            Op::MatmulNt(a, b) => {
                // out = A B^T: dA = G B, dB = G^T A
                let da = g.matmul(&self.values[*b])?;
                let db = g.transpose01()?.matmul(&self.values[*a])?;
                self.accumulate(*a, da);
                self.accumulate(*b, db);
            }
            Op::Linear(a, w) => {
                let av = &self.values[*a];
                let wv = &self.values[*w];
                match av.rank() {
                    2 => {
                        let da = g.matmul(&wv.transpose01()?)?;
                        let dw = av.transpose01()?.matmul(g)?;
                        self.accumulate(*a, da);
                        self.accumulate(*w, dw);
                    }
                    3 => {
                        let (bsz, m, k) = (av.shape()[0], av.shape()[1], av.shape()[2]);
                        let n = wv.shape()[1];
                        let wt = wv.transpose01()?;
                        let mut da = Tensor::zeros(av.shape());
                        let mut dw = Tensor::zeros(wv.shape());
                        for i in 0..bsz {
                            let gb = Tensor::new(
                                vec![m, n],
                                g.data()[i * m * n..(i + 1) * m * n].to_vec(),
                            )?;
                            let ab = Tensor::new(
                                vec![m, k],
                                av.data()[i * m * k..(i + 1) * m * k].to_vec(),
                            )?;
                            let dab = gb.matmul(&wt)?;
                            da.data_mut()[i * m * k..(i + 1) * m * k].copy_from_slice(dab.data());
                            let dwb = ab.transpose01()?.matmul(&gb)?;
                            for (acc, v) in dw.data_mut().iter_mut().zip(dwb.data()) {
                                *acc += v;
                            }
                        }
                        self.accumulate(*a, da);
                        self.accumulate(*w, dw);
                    }
                    _ => unreachable!("linear validated at record time"),
                }
            }
            Op::Bmm(a, b) => {
                let av = &self.values[*a];
                let bv = &self.values[*b];
                let (bsz, m, k, n) = (av.shape()[0], av.shape()[1], av.shape()[2], bv.shape()[2]);
                let mut da = Tensor::zeros(av.shape());
                let mut db = Tensor::zeros(bv.shape());
                for i in 0..bsz {
                    let gb = Tensor::new(vec![m, n], g.data()[i * m * n..(i + 1) * m * n].to_vec())?;
                    let ab = Tensor::new(vec![m, k], av.data()[i * m * k..(i + 1) * m * k].to_vec())?;
                    let bb = Tensor::new(vec![k, n], bv.data()[i * k * n..(i + 1) * k * n].to_vec())?;
                    let dab = gb.matmul(&bb.transpose01()?)?;
                    let dbb = ab.transpose01()?.matmul(&gb)?;
                    da.data_mut()[i * m * k..(i + 1) * m * k].copy_from_slice(dab.data());
                    db.data_mut()[i * k * n..(i + 1) * k * n].copy_from_slice(dbb.data());
                }
                self.accumulate(*a, da);
                self.accumulate(*b, db);
            }
            Op::BmmNt(a, b) => {
                // out_b = A_b B_b^T: dA_b = G_b B_b, dB_b = G_b^T A_b
                let av = &self.values[*a];
                let bv = &self.values[*b];
                let (bsz, m, k, n) = (av.shape()[0], av.shape()[1], av.shape()[2], bv.shape()[1]);
                let mut da = Tensor::zeros(av.shape());
                let mut db = Tensor::zeros(bv.shape());
                for i in 0..bsz {
                    let gb = Tensor::new(vec![m, n], g.data()[i * m * n..(i + 1) * m * n].to_vec())?;
                    let ab = Tensor::new(vec![m, k], av.data()[i * m * k..(i + 1) * m * k].to_vec())?;
                    let bb = Tensor::new(vec![n, k], bv.data()[i * n * k..(i + 1) * n * k].to_vec())?;
                    let dab = gb.matmul(&bb)?;
                    let dbb = gb.transpose01()?.matmul(&ab)?;
                    da.data_mut()[i * m * k..(i + 1) * m * k].copy_from_slice(dab.data());
                    db.data_mut()[i * n * k..(i + 1) * n * k].copy_from_slice(dbb.data());
                }
                self.accumulate(*a, da);
                self.accumulate(*b, db);
            }
            Op::SumAll(a) => {
                let da = Tensor::full(self.values[*a].shape(), g.data()[0]);
                self.accumulate(*a, da);
            }
            Op::SumAxis(a, axis) => {
                let ashape = self.values[*a].shape().to_vec();
                let outer: usize = ashape[..*axis].iter().product();
                let mid = ashape[*axis];
                let inner: usize = ashape[*axis + 1..].iter().product();
                let mut da = Tensor::zeros(&ashape);
                for o in 0..outer {
                    for m in 0..mid {
                        let base = (o * mid + m) * inner;
                        let gbase = o * inner;
                        for i in 0..inner {
                            da.data_mut()[base + i] = g.data()[gbase + i];
                        }
                    }
                }
                self.accumulate(*a, da);
            }
            Op::SoftmaxLast(a) => {
                let y = &self.values[node];
                let cols = *y.shape().last().unwrap();
                let rows = y.len() / cols;
                let mut da = Tensor::zeros(y.shape());
                for r in 0..rows {
                    let yr = &y.data()[r * cols..(r + 1) * cols];
                    let gr = &g.data()[r * cols..(r + 1) * cols];
                    let mut dot = 0.0f32;
                    for (yv, gv) in yr.iter().zip(gr) {
                        dot += yv * gv;
                    }
                    let dr = &mut da.data_mut()[r * cols..(r + 1) * cols];
                    for ((d, yv), gv) in dr.iter_mut().zip(yr).zip(gr) {
                        *d = yv * (gv - dot);
                    }
                }
                self.accumulate(*a, da);
            }
            Op::Reshape(a) => {
                let da = g.reshape(self.values[*a].shape())?;
                self.accumulate(*a, da);
            }
            Op::SliceAxis0 { src, start, len } => {
                let sshape = self.values[*src].shape().to_vec();
                let inner: usize = sshape[1..].iter().product();
                let mut da = Tensor::zeros(&sshape);
                da.data_mut()[start * inner..(start + len) * inner].copy_from_slice(g.data());
                self.accumulate(*src, da);
            }
            Op::Concat(parts) => {
                let mut offset = 0usize;
                for p in parts {
                    let pshape = self.values[*p].shape().to_vec();
                    let count: usize = pshape.iter().product();
                    let dp = Tensor::new(pshape, g.data()[offset..offset + count].to_vec())?;
                    offset += count;
                    self.accumulate(*p, dp);
                }
            }
            Op::RepeatRows(a, rows) => {
                let ashape = self.values[*a].shape().to_vec();
                let c = g.shape()[1];
                let mut da = Tensor::zeros(&ashape);
                for r in 0..*rows {
                    for j in 0..c {
                        da.data_mut()[j] += g.data()[r * c + j];
                    }
                }
                self.accumulate(*a, da);
            }
            Op::Transpose01(a) => {
                let da = g.transpose01()?;
                self.accumulate(*a, da);
            }
            Op::Patchify(a, p) => {
                let ashape = self.values[*a].shape();
                let (c, h, w) = (ashape[1], ashape[2], ashape[3]);
                let da = unpatchify(g, *p, c, h, w)?;
                self.accumulate(*a, da);
            }
            Op::Unpatchify { src, p, .. } => {
                let da = patchify(g, *p)?;
                self.accumulate(*src, da);
            }
            Op::SelfCosine(a) => {
                let da = self_cosine_backward(&self.values[*a], &self.values[node], g);
                self.accumulate(*a, da);
            }
        }
        Ok(())
    }
}

impl Graph {
    /// Replays the recorded ops up to `root` in f64, with `leaf` overridden
    /// by `leaf_data`. Central differences computed on this replay are not
    /// polluted by f32 forward rounding, which the trivial quadratic check
    /// in `grad_check` requires.
    fn forward_f64(&self, root: Var, leaf: Var, leaf_data: &[f64]) -> Result<f64> {
        let mut vals: Vec<Vec<f64>> = Vec::with_capacity(root.0 + 1);
        for i in 0..=root.0 {
            let shape = self.values[i].shape();
            let v: Vec<f64> = match &self.ops[i] {
                Op::Leaf => {
                    if i == leaf.0 {
                        leaf_data.to_vec()
                    } else {
                        self.values[i].data().iter().map(|v| *v as f64).collect()
                    }
                }
                Op::Add(a, b) => vals[*a].iter().zip(&vals[*b]).map(|(x, y)| x + y).collect(),
                Op::Sub(a, b) => vals[*a].iter().zip(&vals[*b]).map(|(x, y)| x - y).collect(),
                Op::Mul(a, b) => vals[*a].iter().zip(&vals[*b]).map(|(x, y)| x * y).collect(),
                Op::Scale(a, c) => vals[*a].iter().map(|x| x * *c as f64).collect(),
                Op::Square(a) => vals[*a].iter().map(|x| x * x).collect(),
                Op::Sqrt(a) => vals[*a].iter().map(|x| x.sqrt()).collect(),
                Op::Matmul(a, b) => {
                    let (m, k) = (self.values[*a].shape()[0], self.values[*a].shape()[1]);
                    let n = self.values[*b].shape()[1];
                    matmul_f64(&vals[*a], &vals[*b], 1, m, k, n, false)
                }
                Op::MatmulNt(a, b) => {
                    let (m, k) = (self.values[*a].shape()[0], self.values[*a].shape()[1]);
                    let n = self.values[*b].shape()[0];
                    matmul_f64(&vals[*a], &vals[*b], 1, m, k, n, true)
                }
                Op::Linear(a, w) => {
                    let ash = self.values[*a].shape();
                    let (k, n) = (self.values[*w].shape()[0], self.values[*w].shape()[1]);
                    if ash.len() == 2 {
                        matmul_f64(&vals[*a], &vals[*w], 1, ash[0], k, n, false)
                    } else {
                        let mut out = Vec::with_capacity(ash[0] * ash[1] * n);
                        for bi in 0..ash[0] {
                            out.extend(matmul_f64(
                                &vals[*a][bi * ash[1] * k..(bi + 1) * ash[1] * k],
                                &vals[*w],
                                1,
                                ash[1],
                                k,
                                n,
                                false,
                            ));
                        }
                        out
                    }
                }
                Op::Bmm(a, b) => {
                    let ash = self.values[*a].shape();
                    let n = self.values[*b].shape()[2];
                    matmul_f64(&vals[*a], &vals[*b], ash[0], ash[1], ash[2], n, false)
                }
                Op::BmmNt(a, b) => {
                    let ash = self.values[*a].shape();
                    let n = self.values[*b].shape()[1];
                    matmul_f64(&vals[*a], &vals[*b], ash[0], ash[1], ash[2], n, true)
                }
                Op::SumAll(a) => vec![vals[*a].iter().sum()],
                Op::SumAxis(a, axis) => {
                    let ashape = self.values[*a].shape();
                    let outer: usize = ashape[..*axis].iter().product();
                    let mid = ashape[*axis];
                    let inner: usize = ashape[*axis + 1..].iter().product();
                    let mut out = vec![0.0f64; outer * inner];
                    for o in 0..outer {
                        for mm in 0..mid {
                            let base = (o * mid + mm) * inner;
                            for ii in 0..inner {
                                out[o * inner + ii] += vals[*a][base + ii];
                            }
                        }
                    }
                    out
                }
                Op::SoftmaxLast(a) => {
                    let cols = *self.values[*a].shape().last().unwrap();
                    let rows = vals[*a].len() / cols;
                    let mut out = vec![0.0f64; vals[*a].len()];
                    for r in 0..rows {
                        let row = &vals[*a][r * cols..(r + 1) * cols];
                        let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                        let mut denom = 0.0;
                        for (o, v) in out[r * cols..(r + 1) * cols].iter_mut().zip(row) {
                            *o = (v - mx).exp();
                            denom += *o;
                        }
                        for o in &mut out[r * cols..(r + 1) * cols] {
                            *o /= denom;
                        }
                    }
                    out
                }
                Op::Reshape(a) => vals[*a].clone(),
                Op::SliceAxis0 { src, start, len } => {
                    let inner: usize = self.values[*src].shape()[1..].iter().product();
                    vals[*src][start * inner..(start + len) * inner].to_vec()
                }
                Op::Concat(parts) => {
                    let mut out = Vec::new();
                    for p in parts {
                        out.extend_from_slice(&vals[*p]);
                    }
                    out
                }
                Op::RepeatRows(a, rows) => {
                    let mut out = Vec::with_capacity(rows * vals[*a].len());
                    for _ in 0..*rows {
                        out.extend_from_slice(&vals[*a]);
                    }
                    out
                }
                Op::Transpose01(a) => {
                    let ash = self.values[*a].shape();
                    let (r, cdim) = (ash[0], ash[1]);
                    let inner: usize = ash[2..].iter().product();
                    let mut out = vec![0.0f64; vals[*a].len()];
                    for x in 0..r {
                        for y in 0..cdim {
                            let src = (x * cdim + y) * inner;
                            let dst = (y * r + x) * inner;
                            out[dst..dst + inner].copy_from_slice(&vals[*a][src..src + inner]);
                        }
                    }
                    out
                }
                Op::Patchify(a, p) => {
                    permute_like_patchify(&vals[*a], self.values[*a].shape(), *p, false)
                }
                Op::Unpatchify { src, p } => {
                    permute_like_patchify(&vals[*src], shape, *p, true)
                }
                Op::SelfCosine(a) => {
                    let ash = self.values[*a].shape();
                    self_cosine_f64(&vals[*a], ash[0], ash[1])
                }
            };
            debug_assert_eq!(v.len(), self.values[i].len(), "f64 replay shape drift at node {i}");
            vals.push(v);
        }
        Ok(vals[root.0][0])
    }
}

fn matmul_f64(a: &[f64], b: &[f64], batch: usize, m: usize, k: usize, n: usize, nt: bool) -> Vec<f64> {
    let mut out = vec![0.0f64; batch * m * n];
    let (astride, bstride, ostride) = (m * k, if nt { n * k } else { k * n }, m * n);
    for bi in 0..batch {
        let ab = &a[bi * astride..(bi + 1) * astride];
        let bb = &b[bi * bstride..(bi + 1) * bstride];
        let ob = &mut out[bi * ostride..(bi + 1) * ostride];
        for i in 0..m {
            for j in 0..n {
                let mut acc = 0.0;
                for kk in 0..k {
                    let bv = if nt { bb[j * k + kk] } else { bb[kk * n + j] };
                    acc += ab[i * k + kk] * bv;
                }
                ob[i * n + j] = acc;
            }
        }
    }
    out
}

/// Shared index mapping for the patch permutation; `video_shape` is the
/// [n,c,h,w] side of the mapping in both directions.
fn permute_like_patchify(data: &[f64], video_shape: &[usize], p: usize, inverse: bool) -> Vec<f64> {
    let (n, c, h, w) = (video_shape[0], video_shape[1], video_shape[2], video_shape[3]);
    let (gh, gw) = (h / p, w / p);
    let tokens = gh * gw;
    let dim = c * p * p;
    let mut out = vec![0.0f64; n * c * h * w];
    for fi in 0..n {
        for ci in 0..c {
            for gy in 0..gh {
                for gx in 0..gw {
                    let t = gy * gw + gx;
                    for dy in 0..p {
                        for dx in 0..p {
                            let img = ((fi * c + ci) * h + gy * p + dy) * w + gx * p + dx;
                            let tok = (fi * tokens + t) * dim + ci * p * p + dy * p + dx;
                            if inverse {
                                out[img] = data[tok];
                            } else {
                                out[tok] = data[img];
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

fn self_cosine_f64(data: &[f64], r: usize, c: usize) -> Vec<f64> {
    let eps = COSINE_EPS as f64;
    let norms: Vec<f64> = (0..r)
        .map(|i| data[i * c..(i + 1) * c].iter().map(|v| v * v).sum::<f64>().sqrt())
        .collect();
    let mut out = vec![0.0f64; r * r];
    for i in 0..r {
        out[i * r + i] = 1.0;
        if norms[i] == 0.0 {
            continue;
        }
        for j in (i + 1)..r {
            if norms[j] == 0.0 {
                continue;
            }
            let dot: f64 = data[i * c..(i + 1) * c]
                .iter()
                .zip(&data[j * c..(j + 1) * c])
                .map(|(a, b)| a * b)
                .sum();
            let v = dot / ((norms[i] + eps) * (norms[j] + eps));
            out[i * r + j] = v;
            out[j * r + i] = v;
        }
    }
    out
}

/// VJP of pairwise row cosine. The output entries (i,j) and (j,i) are the
/// same function of rows i and j, so each ordered pair collects the upstream
/// gradient from both. The pinned diagonal is constant; rows with exactly
/// zero norm get zero gradient, matching the forward convention.
fn self_cosine_backward(x: &Tensor, out: &Tensor, g: &Tensor) -> Tensor {
    let (r, c) = (x.shape()[0], x.shape()[1]);
    let norms: Vec<f32> = (0..r)
        .map(|i| {
            let row = &x.data()[i * c..(i + 1) * c];
            let mut acc = 0.0f32;
            for v in row {
                acc += v * v;
            }
            acc.sqrt()
        })
        .collect();
    let mut dx = Tensor::zeros(x.shape());
    for i in 0..r {
        if norms[i] == 0.0 {
            continue;
        }
        let denom_i = norms[i] + COSINE_EPS;
        for j in 0..r {
            if j == i || norms[j] == 0.0 {
                continue;
            }
            let gw = g.data()[i * r + j] + g.data()[j * r + i];
            if gw == 0.0 {
                continue;
            }
            let denom_j = norms[j] + COSINE_EPS;
            let s = out.data()[i * r + j];
            let scale_j = gw / (denom_i * denom_j);
            let scale_i = gw * s / (norms[i] * denom_i);
            let (xi_start, xj_start) = (i * c, j * c);
            for k in 0..c {
                dx.data_mut()[xi_start + k] +=
                    scale_j * x.data()[xj_start + k] - scale_i * x.data()[xi_start + k];
            }
        }
    }
    dx
}

/// Max relative disagreement between analytic and central-difference
/// gradients of a scalar-valued build over `x`:
/// max_i |analytic_i - numeric_i| / (|numeric_i| + 1e-8).
pub fn grad_check<F>(build: F, x: &Tensor, h: f32) -> Result<f32>
where
    F: Fn(&mut Graph, Var) -> Result<Var>,
{
    if h <= 0.0 {
        return Err(CoreError::invalid("grad_check", "step must be positive"));
    }
    let mut g = Graph::new();
    let xv = g.leaf(x.clone());
    let root = build(&mut g, xv)?;
    let f0 = g.value(root).scalar_value()?;
    if !f0.is_finite() {
        return Err(CoreError::NonFinite("grad_check: f(x)".into()));
    }
    g.backward(root)?;
    let analytic = match g.grad(xv) {
        Some(t) => t.clone(),
        None => Tensor::zeros(x.shape()),
    };

    // Central differences on an f64 replay of the same tape, so the oracle
    // is not drowned in f32 forward rounding.
    let base: Vec<f64> = x.data().iter().map(|v| *v as f64).collect();
    let mut max_rel = 0.0f64;
    for i in 0..x.len() {
        let mut xp = base.clone();
        xp[i] += h as f64;
        let mut xm = base.clone();
        xm[i] -= h as f64;
        let fp = g.forward_f64(root, xv, &xp)?;
        let fm = g.forward_f64(root, xv, &xm)?;
        let numeric = (fp - fm) / (2.0 * h as f64);
        let rel = (analytic.data()[i] as f64 - numeric).abs() / (numeric.abs() + 1e-8);
        if rel > max_rel {
            max_rel = rel;
        }
    }
    Ok(max_rel as f32)
}

pub use tensor::Tensor as GraphTensor;
