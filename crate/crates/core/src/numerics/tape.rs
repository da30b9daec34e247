//! Reverse-mode automatic differentiation over a linear tape.
//!
//! Every op appends one node holding its output value. Nodes are only ever
//! appended, so the tape is topologically ordered by construction and the
//! backward pass is a single reverse sweep.

use crate::error::{Error, Result};

use super::tensor::{Scalar, Tensor};

/// Value used by [`Tape::masked_fill`] for forbidden attention positions.
pub const MASK_VALUE: f64 = -1e9;

const LAYER_NORM_EPS: f64 = 1e-5;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op<T> {
    Leaf,
    MatMul {
        a: Var,
        b: Var,
        rows: usize,
        inner: usize,
        cols: usize,
    },
    BatchMatMul {
        a: Var,
        b: Var,
        batch: usize,
        m: usize,
        k: usize,
        n: usize,
        transpose_b: bool,
    },
    Add {
        a: Var,
        b: Var,
    },
    AddBroadcast {
        a: Var,
        b: Var,
    },
    Mul {
        a: Var,
        b: Var,
    },
    Scale {
        a: Var,
        factor: T,
    },
    Gelu {
        a: Var,
        deriv: Vec<T>,
    },
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        normalized: Vec<T>,
        inv_std: Vec<T>,
    },
    Gather {
        table: Var,
        indices: Vec<usize>,
    },
    Transpose {
        a: Var,
        rows: usize,
        cols: usize,
    },
    Reshape {
        a: Var,
    },
    SplitHeads {
        a: Var,
        batch: usize,
        seq: usize,
        heads: usize,
    },
    ConcatHeads {
        a: Var,
        batch: usize,
        seq: usize,
        heads: usize,
    },
    MaskedFill {
        a: Var,
        mask: Vec<bool>,
    },
    Softmax {
        a: Var,
    },
    NarrowSeq {
        a: Var,
        seq: usize,
        start: usize,
        len: usize,
    },
    Sum {
        a: Var,
    },
    CrossEntropy {
        logits: Var,
        probs: Vec<T>,
        targets: Vec<usize>,
        mask: Vec<bool>,
        count: usize,
    },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
    grad: Option<Tensor<T>>,
}

/// Recorded computation graph. One tape per forward/backward pass.
pub struct Tape<T = f32> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T> std::fmt::Debug for Tape<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Tape").field("nodes", &self.nodes.len()).finish()
    }
}

fn shape_err(op: &str, a: &[usize], b: &[usize]) -> Error {
    Error::Shape(format!("{op}: incompatible shapes {a:?} and {b:?}"))
}

/// Constants of the tanh-approximated GELU, converted once per call site.
#[derive(Clone, Copy)]
struct GeluConsts<T> {
    c: T,
    k: T,
    k3: T,
    half: T,
}

impl<T: Scalar> GeluConsts<T> {
    fn new() -> Self {
        Self {
            c: T::from_f64((2.0 / std::f64::consts::PI).sqrt()),
            k: T::from_f64(0.044715),
            k3: T::from_f64(3.0 * 0.044715),
            half: T::from_f64(0.5),
        }
    }

    /// (value, derivative)
    #[inline]
    fn parts(self, x: T) -> (T, T) {
        let one = T::one();
        let x2 = x * x;
        let t = (self.c * (x + self.k * x2 * x)).tanh_fast();
        let value = self.half * x * (one + t);
        let d_inner = self.c * (one + self.k3 * x2);
        let deriv = self.half * (one + t) + self.half * x * (one - t * t) * d_inner;
        (value, deriv)
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    fn node(&self, v: Var) -> &Node<T> {
        &self.nodes[v.0]
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Trainable leaf: receives a gradient buffer on [`Tape::backward`].
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Non-trainable leaf (inputs, masks).
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.node(v).value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.node(v).value.shape()
    }

    /// Accumulated gradient of a trainable leaf, if backward has reached it.
    pub fn grad(&self, v: Var) -> Option<&Tensor<T>> {
        self.node(v).grad.as_ref()
    }

    pub fn take_grad(&mut self, v: Var) -> Option<Tensor<T>> {
        self.nodes[v.0].grad.take()
    }

    pub fn zero_grads(&mut self) {
        for node in &mut self.nodes {
            node.grad = None;
        }
    }

    /// `a[..., k] · b[k, n] -> [..., n]`; leading dimensions of `a` are
    /// flattened into rows.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() < 2 || sb.len() != 2 || sa[sa.len() - 1] != sb[0] {
            return Err(shape_err("matmul", &sa, &sb));
        }
        let inner = sb[0];
        let cols = sb[1];
        let rows = self.value(a).numel() / inner;
        let mut out = vec![T::zero(); rows * cols];
        T::gemm(
            rows,
            inner,
            cols,
            T::one(),
            self.value(a).data(),
            (inner as isize, 1),
            self.value(b).data(),
            (cols as isize, 1),
            T::zero(),
            &mut out,
            (cols as isize, 1),
        );
        let mut shape = sa;
        *shape.last_mut().unwrap() = cols;
        let rg = self.needs(a) || self.needs(b);
        Ok(self.push(
            Tensor::new(shape, out)?,
            Op::MatMul {
                a,
                b,
                rows,
                inner,
                cols,
            },
            rg,
        ))
    }

    /// Batched product of `[N, m, k]` with `[N, k, n]`, or with `[N, n, k]`
    /// read transposed when `transpose_b` is set.
    pub fn batch_matmul(&mut self, a: Var, b: Var, transpose_b: bool) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() != 3 || sb.len() != 3 || sa[0] != sb[0] {
            return Err(shape_err("batch_matmul", &sa, &sb));
        }
        let (batch, m, k) = (sa[0], sa[1], sa[2]);
        let (bk, n) = if transpose_b {
            (sb[2], sb[1])
        } else {
            (sb[1], sb[2])
        };
        if bk != k {
            return Err(shape_err("batch_matmul", &sa, &sb));
        }
        let av = self.value(a).data();
        let bv = self.value(b).data();
        let mut out = vec![T::zero(); batch * m * n];
        for p in 0..batch {
            let ab = &av[p * m * k..(p + 1) * m * k];
            let bb = &bv[p * k * n..(p + 1) * k * n];
            let ob = &mut out[p * m * n..(p + 1) * m * n];
            for i in 0..m {
                let arow = &ab[i * k..(i + 1) * k];
                for j in 0..n {
                    let mut acc = T::zero();
                    if transpose_b {
                        let brow = &bb[j * k..(j + 1) * k];
                        for l in 0..k {
                            acc = acc + arow[l] * brow[l];
                        }
                    } else {
                        for l in 0..k {
                            acc = acc + arow[l] * bb[l * n + j];
                        }
                    }
                    ob[i * n + j] = acc;
                }
            }
        }
        let rg = self.needs(a) || self.needs(b);
        Ok(self.push(
            Tensor::new([batch, m, n], out)?,
            Op::BatchMatMul {
                a,
                b,
                batch,
                m,
                k,
                n,
                transpose_b,
            },
            rg,
        ))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(shape_err("add", self.shape(a), self.shape(b)));
        }
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| x + y)
            .collect();
        let shape = self.shape(a).to_vec();
        let rg = self.needs(a) || self.needs(b);
        Ok(self.push(Tensor::new(shape, data)?, Op::Add { a, b }, rg))
    }

    /// `a + b` where `b`'s shape is a trailing suffix of `a`'s shape; `b` is
    /// repeated over the leading dimensions.
    pub fn add_broadcast(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sb.len() > sa.len() || sa[sa.len() - sb.len()..] != *sb {
            return Err(shape_err("add_broadcast", sa, sb));
        }
        let bv = self.value(b).data();
        let period = bv.len();
        let data = self
            .value(a)
            .data()
            .iter()
            .enumerate()
            .map(|(i, &x)| x + bv[i % period])
            .collect();
        let shape = sa.to_vec();
        let rg = self.needs(a) || self.needs(b);
        Ok(self.push(Tensor::new(shape, data)?, Op::AddBroadcast { a, b }, rg))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(shape_err("mul", self.shape(a), self.shape(b)));
        }
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| x * y)
            .collect();
        let shape = self.shape(a).to_vec();
        let rg = self.needs(a) || self.needs(b);
        Ok(self.push(Tensor::new(shape, data)?, Op::Mul { a, b }, rg))
    }

    pub fn scale(&mut self, a: Var, factor: T) -> Var {
        let value = self.value(a);
        let data = value.data().iter().map(|&x| x * factor).collect();
        let t = Tensor::new(value.shape().to_vec(), data).expect("same shape");
        let rg = self.needs(a);
        self.push(t, Op::Scale { a, factor }, rg)
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        let value = self.value(a);
        let rg = self.needs(a);
        let k = GeluConsts::new();
        let mut data = vec![T::zero(); value.numel()];
        let mut deriv = vec![T::zero(); if rg { value.numel() } else { 0 }];
        if rg {
            for ((y, dy), &x) in data.iter_mut().zip(deriv.iter_mut()).zip(value.data()) {
                (*y, *dy) = k.parts(x);
            }
        } else {
            for (y, &x) in data.iter_mut().zip(value.data()) {
                *y = k.parts(x).0;
            }
        }
        let t = Tensor::new(value.shape().to_vec(), data).expect("same shape");
        self.push(t, Op::Gelu { a, deriv }, rg)
    }

    /// Normalizes over the last dimension, then applies `gain` and `bias`.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var> {
        let d = self.value(x).last_dim();
        if self.shape(gain) != [d] || self.shape(bias) != [d] {
            return Err(shape_err("layer_norm", self.shape(x), self.shape(gain)));
        }
        let eps = T::from_f64(LAYER_NORM_EPS);
        let dn = T::from_f64(d as f64);
        let xv = self.value(x).data();
        let g = self.value(gain).data();
        let bvals = self.value(bias).data();
        let rows = xv.len() / d;
        let mut normalized = vec![T::zero(); xv.len()];
        let mut inv_std = vec![T::zero(); rows];
        let mut out = vec![T::zero(); xv.len()];
        for r in 0..rows {
            let row = &xv[r * d..(r + 1) * d];
            let mean = row.iter().copied().sum::<T>() / dn;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / dn;
            let rstd = T::one() / (var + eps).sqrt();
            inv_std[r] = rstd;
            for i in 0..d {
                let nh = (row[i] - mean) * rstd;
                normalized[r * d + i] = nh;
                out[r * d + i] = nh * g[i] + bvals[i];
            }
        }
        let shape = self.shape(x).to_vec();
        let rg = self.needs(x) || self.needs(gain) || self.needs(bias);
        Ok(self.push(
            Tensor::new(shape, out)?,
            Op::LayerNorm {
                x,
                gain,
                bias,
                normalized,
                inv_std,
            },
            rg,
        ))
    }

    /// Row lookup: `table[V, D]` indexed by `indices` gives `[len, D]`.
    pub fn embedding(&mut self, table: Var, indices: &[usize]) -> Result<Var> {
        let st = self.shape(table);
        if st.len() != 2 {
            return Err(Error::Shape(format!(
                "embedding: table must be 2-D, got {st:?}"
            )));
        }
        let (rows, d) = (st[0], st[1]);
        if let Some(&bad) = indices.iter().find(|&&i| i >= rows) {
            return Err(Error::Domain(format!(
                "embedding: index {bad} out of range for {rows} rows"
            )));
        }
        let tv = self.value(table).data();
        let mut out = Vec::with_capacity(indices.len() * d);
        for &i in indices {
            out.extend_from_slice(&tv[i * d..(i + 1) * d]);
        }
        let rg = self.needs(table);
        Ok(self.push(
            Tensor::new([indices.len(), d], out)?,
            Op::Gather {
                table,
                indices: indices.to_vec(),
            },
            rg,
        ))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let s = self.shape(a);
        if s.len() != 2 {
            return Err(Error::Shape(format!("transpose: expected 2-D, got {s:?}")));
        }
        let (rows, cols) = (s[0], s[1]);
        let av = self.value(a).data();
        let mut out = vec![T::zero(); rows * cols];
        for i in 0..rows {
            for j in 0..cols {
                out[j * rows + i] = av[i * cols + j];
            }
        }
        let rg = self.needs(a);
        Ok(self.push(
            Tensor::new([cols, rows], out)?,
            Op::Transpose { a, rows, cols },
            rg,
        ))
    }

    /// Copying reshape; the result never aliases `a`.
    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(a).clone().reshaped(shape.to_vec())?;
        let rg = self.needs(a);
        Ok(self.push(t, Op::Reshape { a }, rg))
    }

    /// `[B, T, H·Dh] -> [B·H, T, Dh]`.
    pub fn split_heads(&mut self, a: Var, heads: usize) -> Result<Var> {
        let s = self.shape(a).to_vec();
        if s.len() != 3 || heads == 0 || s[2] % heads != 0 {
            return Err(Error::Shape(format!(
                "split_heads: cannot split {s:?} into {heads} heads"
            )));
        }
        let (batch, seq, width) = (s[0], s[1], s[2]);
        let dh = width / heads;
        let av = self.value(a).data();
        let mut out = vec![T::zero(); av.len()];
        for b in 0..batch {
            for t in 0..seq {
                for h in 0..heads {
                    let src = (b * seq + t) * width + h * dh;
                    let dst = ((b * heads + h) * seq + t) * dh;
                    out[dst..dst + dh].copy_from_slice(&av[src..src + dh]);
                }
            }
        }
        let rg = self.needs(a);
        Ok(self.push(
            Tensor::new([batch * heads, seq, dh], out)?,
            Op::SplitHeads {
                a,
                batch,
                seq,
                heads,
            },
            rg,
        ))
    }

    /// `[B·H, T, Dh] -> [B, T, H·Dh]`, inverse of [`Tape::split_heads`].
    pub fn concat_heads(&mut self, a: Var, heads: usize) -> Result<Var> {
        let s = self.shape(a).to_vec();
        if s.len() != 3 || heads == 0 || s[0] % heads != 0 {
            return Err(Error::Shape(format!(
                "concat_heads: cannot merge {s:?} over {heads} heads"
            )));
        }
        let (batch, seq, dh) = (s[0] / heads, s[1], s[2]);
        let width = heads * dh;
        let av = self.value(a).data();
        let mut out = vec![T::zero(); av.len()];
        for b in 0..batch {
            for t in 0..seq {
                for h in 0..heads {
                    let dst = (b * seq + t) * width + h * dh;
                    let src = ((b * heads + h) * seq + t) * dh;
                    out[dst..dst + dh].copy_from_slice(&av[src..src + dh]);
                }
            }
        }
        let rg = self.needs(a);
        Ok(self.push(
            Tensor::new([batch, seq, width], out)?,
            Op::ConcatHeads {
                a,
                batch,
                seq,
                heads,
            },
            rg,
        ))
    }

    /// Overwrites positions where `mask` is set with [`MASK_VALUE`]. The mask
    /// shape must be a trailing suffix of `a`'s shape and is repeated over
    /// the leading dimensions.
    pub fn masked_fill(&mut self, a: Var, mask: &[bool], mask_shape: &[usize]) -> Result<Var> {
        let sa = self.shape(a);
        if mask_shape.len() > sa.len()
            || sa[sa.len() - mask_shape.len()..] != *mask_shape
            || mask.len() != mask_shape.iter().product::<usize>()
        {
            return Err(shape_err("masked_fill", sa, mask_shape));
        }
        let fill = T::from_f64(MASK_VALUE);
        let period = mask.len();
        let data = self
            .value(a)
            .data()
            .iter()
            .enumerate()
            .map(|(i, &x)| if mask[i % period] { fill } else { x })
            .collect();
        let shape = sa.to_vec();
        let rg = self.needs(a);
        Ok(self.push(
            Tensor::new(shape, data)?,
            Op::MaskedFill {
                a,
                mask: mask.to_vec(),
            },
            rg,
        ))
    }

    /// Softmax over the last dimension.
    pub fn softmax(&mut self, a: Var) -> Var {
        let value = self.value(a);
        let d = value.last_dim();
        let mut out = value.data().to_vec();
        for row in out.chunks_mut(d) {
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let mut total = T::zero();
            for x in row.iter_mut() {
                *x = (*x - max).exp();
                total = total + *x;
            }
            for x in row.iter_mut() {
                *x = *x / total;
            }
        }
        let t = Tensor::new(value.shape().to_vec(), out).expect("same shape");
        let rg = self.needs(a);
        self.push(t, Op::Softmax { a }, rg)
    }

    /// Slice `[B, T, D] -> [B, len, D]` starting at sequence position `start`.
    pub fn narrow_seq(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let s = self.shape(a).to_vec();
        if s.len() != 3 || start + len > s[1] {
            return Err(Error::Shape(format!(
                "narrow_seq: positions {start}..{} out of range for {s:?}",
                start + len
            )));
        }
        let (batch, seq, d) = (s[0], s[1], s[2]);
        let av = self.value(a).data();
        let mut out = Vec::with_capacity(batch * len * d);
        for b in 0..batch {
            let from = (b * seq + start) * d;
            out.extend_from_slice(&av[from..from + len * d]);
        }
        let rg = self.needs(a);
        Ok(self.push(
            Tensor::new([batch, len, d], out)?,
            Op::NarrowSeq { a, seq, start, len },
            rg,
        ))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let total = self.value(a).data().iter().copied().sum::<T>();
        let rg = self.needs(a);
        self.push(Tensor::scalar(total), Op::Sum { a }, rg)
    }

    /// Mean negative log-likelihood of `targets` over the rows selected by
    /// `mask`. `logits` is `[rows, vocab]`.
    pub fn softmax_cross_entropy(
        &mut self,
        logits: Var,
        targets: &[usize],
        mask: &[bool],
    ) -> Result<Var> {
        let s = self.shape(logits).to_vec();
        if s.len() != 2 || targets.len() != s[0] || mask.len() != s[0] {
            return Err(Error::Shape(format!(
                "softmax_cross_entropy: logits {s:?} with {} targets and {} mask entries",
                targets.len(),
                mask.len()
            )));
        }
        let (rows, vocab) = (s[0], s[1]);
        if let Some(&bad) = targets.iter().find(|&&t| t >= vocab) {
            return Err(Error::Domain(format!(
                "softmax_cross_entropy: target {bad} outside vocabulary of {vocab}"
            )));
        }
        let count = mask.iter().filter(|&&m| m).count();
        if count == 0 {
            return Err(Error::Domain(
                "softmax_cross_entropy: mask selects no loss-bearing rows".into(),
            ));
        }
        let lv = self.value(logits).data();
        let mut probs = vec![T::zero(); rows * vocab];
        let mut total = T::zero();
        for r in 0..rows {
            if !mask[r] {
                continue;
            }
            let row = &lv[r * vocab..(r + 1) * vocab];
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let mut z = T::zero();
            for (p, &x) in probs[r * vocab..(r + 1) * vocab].iter_mut().zip(row) {
                *p = (x - max).exp();
                z = z + *p;
            }
            for p in &mut probs[r * vocab..(r + 1) * vocab] {
                *p = *p / z;
            }
            total = total + (z.ln() + max - row[targets[r]]);
        }
        let loss = total / T::from_f64(count as f64);
        let rg = self.needs(logits);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy {
                logits,
                probs,
                targets: targets.to_vec(),
                mask: mask.to_vec(),
                count,
            },
            rg,
        ))
    }

    /// Fills the gradient buffer of every trainable leaf with
    /// `d(root)/d(leaf)`, adding to whatever a previous call left there.
    pub fn backward(&mut self, root: Var) -> Result<()> {
        if self.value(root).numel() != 1 {
            return Err(Error::Shape(format!(
                "backward: root must be scalar, got shape {:?}",
                self.shape(root)
            )));
        }
        let mut grads: Vec<Option<Vec<T>>> = Vec::with_capacity(root.0 + 1);
        grads.resize_with(root.0 + 1, || None);
        grads[root.0] = Some(vec![T::one()]);

        for idx in (0..=root.0).rev() {
            let Some(g) = grads[idx].take() else {
                continue;
            };
            if !self.nodes[idx].requires_grad {
                continue;
            }
            if let Op::Leaf = self.nodes[idx].op {
                let node = &mut self.nodes[idx];
                match &mut node.grad {
                    Some(acc) => {
                        for (a, x) in acc.data_mut().iter_mut().zip(&g) {
                            *a = *a + *x;
                        }
                    }
                    None => node.grad = Some(Tensor::new(node.value.shape().to_vec(), g)?),
                }
                continue;
            }
            self.propagate(idx, &g, &mut grads);
        }
        Ok(())
    }

    fn propagate(&self, idx: usize, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let nodes = &self.nodes;
        let wants = |v: Var| nodes[v.0].requires_grad;
        macro_rules! acc {
            ($v:expr) => {{
                let v: Var = $v;
                let len = nodes[v.0].value.numel();
                grads[v.0].get_or_insert_with(|| vec![T::zero(); len])
            }};
        }
        let out = &nodes[idx].value;

        match &nodes[idx].op {
            Op::Leaf => {}
            &Op::MatMul {
                a,
                b,
                rows,
                inner,
                cols,
            } => {
                if wants(a) {
                    let da = acc!(a);
                    T::gemm(
                        rows,
                        cols,
                        inner,
                        T::one(),
                        g,
                        (cols as isize, 1),
                        nodes[b.0].value.data(),
                        (1, cols as isize),
                        T::one(),
                        da,
                        (inner as isize, 1),
                    );
                }
                if wants(b) {
                    let db = acc!(b);
                    T::gemm(
                        inner,
                        rows,
                        cols,
                        T::one(),
                        nodes[a.0].value.data(),
                        (1, inner as isize),
                        g,
                        (cols as isize, 1),
                        T::one(),
                        db,
                        (cols as isize, 1),
                    );
                }
            }
            &Op::BatchMatMul {
                a,
                b,
                batch,
                m,
                k,
                n,
                transpose_b,
            } => {
                let av = nodes[a.0].value.data();
                let bv = nodes[b.0].value.data();
                let b_at = |p: usize, l: usize, j: usize| {
                    if transpose_b {
                        p * k * n + j * k + l
                    } else {
                        p * k * n + l * n + j
                    }
                };
                if wants(a) {
                    let da = acc!(a);
                    for p in 0..batch {
                        for i in 0..m {
                            for l in 0..k {
                                let mut s = T::zero();
                                for j in 0..n {
                                    s = s + g[(p * m + i) * n + j] * bv[b_at(p, l, j)];
                                }
                                let at = (p * m + i) * k + l;
                                da[at] = da[at] + s;
                            }
                        }
                    }
                }
                if wants(b) {
                    let db = acc!(b);
                    for p in 0..batch {
                        for l in 0..k {
                            for j in 0..n {
                                let mut s = T::zero();
                                for i in 0..m {
                                    s = s + av[(p * m + i) * k + l] * g[(p * m + i) * n + j];
                                }
                                let at = b_at(p, l, j);
                                db[at] = db[at] + s;
                            }
                        }
                    }
                }
            }
            &Op::Add { a, b } => {
                for v in [a, b] {
                    if wants(v) {
                        for (d, &x) in acc!(v).iter_mut().zip(g) {
                            *d = *d + x;
                        }
                    }
                }
            }
            &Op::AddBroadcast { a, b } => {
                if wants(a) {
                    for (d, &x) in acc!(a).iter_mut().zip(g) {
                        *d = *d + x;
                    }
                }
                if wants(b) {
                    let db = acc!(b);
                    let period = db.len();
                    for (i, &x) in g.iter().enumerate() {
                        db[i % period] = db[i % period] + x;
                    }
                }
            }
            &Op::Mul { a, b } => {
                if wants(a) {
                    let bv = nodes[b.0].value.data();
                    for ((d, &x), &y) in acc!(a).iter_mut().zip(g).zip(bv) {
                        *d = *d + x * y;
                    }
                }
                if wants(b) {
                    let av = nodes[a.0].value.data();
                    for ((d, &x), &y) in acc!(b).iter_mut().zip(g).zip(av) {
                        *d = *d + x * y;
                    }
                }
            }
            &Op::Scale { a, factor } => {
                for (d, &x) in acc!(a).iter_mut().zip(g) {
                    *d = *d + x * factor;
                }
            }
            Op::Gelu { a, deriv } => {
                for ((d, &x), &dy) in acc!(*a).iter_mut().zip(g).zip(deriv) {
                    *d = *d + x * dy;
                }
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                normalized,
                inv_std,
            } => {
                let d = out.last_dim();
                let rows = inv_std.len();
                let gv = nodes[gain.0].value.data();
                if wants(*gain) {
                    let dg = acc!(*gain);
                    for r in 0..rows {
                        for i in 0..d {
                            dg[i] = dg[i] + g[r * d + i] * normalized[r * d + i];
                        }
                    }
                }
                if wants(*bias) {
                    let db = acc!(*bias);
                    for r in 0..rows {
                        for i in 0..d {
                            db[i] = db[i] + g[r * d + i];
                        }
                    }
                }
                if wants(*x) {
                    let dx = acc!(*x);
                    let dn = T::from_f64(d as f64);
                    for r in 0..rows {
                        let gr = &g[r * d..(r + 1) * d];
                        let nr = &normalized[r * d..(r + 1) * d];
                        let mut mean_dy = T::zero();
                        let mut mean_dy_n = T::zero();
                        for i in 0..d {
                            let dyh = gr[i] * gv[i];
                            mean_dy = mean_dy + dyh;
                            mean_dy_n = mean_dy_n + dyh * nr[i];
                        }
                        mean_dy = mean_dy / dn;
                        mean_dy_n = mean_dy_n / dn;
                        for i in 0..d {
                            let dyh = gr[i] * gv[i];
                            let at = r * d + i;
                            dx[at] = dx[at] + inv_std[r] * (dyh - mean_dy - nr[i] * mean_dy_n);
                        }
                    }
                }
            }
            Op::Gather { table, indices } => {
                let d = out.last_dim();
                let dt = acc!(*table);
                for (row, &i) in indices.iter().enumerate() {
                    for j in 0..d {
                        dt[i * d + j] = dt[i * d + j] + g[row * d + j];
                    }
                }
            }
            &Op::Transpose { a, rows, cols } => {
                let da = acc!(a);
                for i in 0..rows {
                    for j in 0..cols {
                        da[i * cols + j] = da[i * cols + j] + g[j * rows + i];
                    }
                }
            }
            &Op::Reshape { a } => {
                for (d, &x) in acc!(a).iter_mut().zip(g) {
                    *d = *d + x;
                }
            }
            &Op::SplitHeads {
                a,
                batch,
                seq,
                heads,
            } => {
                let width = nodes[a.0].value.last_dim();
                let dh = width / heads;
                let da = acc!(a);
                for b in 0..batch {
                    for t in 0..seq {
                        for h in 0..heads {
                            let src = (b * seq + t) * width + h * dh;
                            let dst = ((b * heads + h) * seq + t) * dh;
                            for i in 0..dh {
                                da[src + i] = da[src + i] + g[dst + i];
                            }
                        }
                    }
                }
            }
            &Op::ConcatHeads {
                a,
                batch,
                seq,
                heads,
            } => {
                let dh = nodes[a.0].value.last_dim();
                let width = heads * dh;
                let da = acc!(a);
                for b in 0..batch {
                    for t in 0..seq {
                        for h in 0..heads {
                            let dst = (b * seq + t) * width + h * dh;
                            let src = ((b * heads + h) * seq + t) * dh;
                            for i in 0..dh {
                                da[src + i] = da[src + i] + g[dst + i];
                            }
                        }
                    }
                }
            }
            Op::MaskedFill { a, mask } => {
                let period = mask.len();
                for (i, (d, &x)) in acc!(*a).iter_mut().zip(g).enumerate() {
                    if !mask[i % period] {
                        *d = *d + x;
                    }
                }
            }
            &Op::Softmax { a } => {
                let d = out.last_dim();
                let y = out.data();
                let da = acc!(a);
                for r in 0..y.len() / d {
                    let yr = &y[r * d..(r + 1) * d];
                    let gr = &g[r * d..(r + 1) * d];
                    let dot = yr.iter().zip(gr).map(|(&p, &q)| p * q).sum::<T>();
                    for i in 0..d {
                        da[r * d + i] = da[r * d + i] + yr[i] * (gr[i] - dot);
                    }
                }
            }
            &Op::NarrowSeq { a, seq, start, len } => {
                let d = out.last_dim();
                let batch = out.shape()[0];
                let da = acc!(a);
                for b in 0..batch {
                    for i in 0..len * d {
                        let at = (b * seq + start) * d + i;
                        da[at] = da[at] + g[b * len * d + i];
                    }
                }
            }
            &Op::Sum { a } => {
                for d in acc!(a).iter_mut() {
                    *d = *d + g[0];
                }
            }
            Op::CrossEntropy {
                logits,
                probs,
                targets,
                mask,
                count,
            } => {
                let vocab = nodes[logits.0].value.last_dim();
                let scale = g[0] / T::from_f64(*count as f64);
                let dl = acc!(*logits);
                for (r, (&t, &m)) in targets.iter().zip(mask).enumerate() {
                    if !m {
                        continue;
                    }
                    for j in 0..vocab {
                        let at = r * vocab + j;
                        let onehot = if j == t { T::one() } else { T::zero() };
                        dl[at] = dl[at] + scale * (probs[at] - onehot);
                    }
                }
            }
        }
    }
}
