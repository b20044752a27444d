//! Define-by-run autodiff graph.
//!
//! Every operation evaluates eagerly, records its inputs, and rejects
//! non-finite values. `Graph::grad` emits the backward pass as new graph
//! nodes, so gradients are themselves differentiable; that is what lets the
//! critic's gradient penalty be trained with exact second-order gradients
//! instead of a finite-difference fallback.
//!
//! The op set is closed under differentiation: conv / deconv / conv_dw map
//! onto each other, reduce_sum and expand are adjoints, concat and slice
//! likewise. Piecewise-linear ops (relu, leaky relu, abs) differentiate
//! against a detached mask with the zero-at-kink subgradient convention.

use super::conv;
use super::tensor::{Scalar, Tensor};
use super::NnError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(pub(crate) usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var, f64),
    Recip(Var),
    Sqrt(Var),
    Tanh(Var),
    Relu(Var),
    LeakyRelu(Var, f64),
    Abs(Var),
    Matmul(Var, Var),
    Transpose(Var),
    Conv { x: Var, w: Var, stride: usize },
    Deconv { y: Var, w: Var, stride: usize, out_hw: (usize, usize) },
    ConvDw { x: Var, gy: Var, stride: usize, k: usize },
    ReduceSum { a: Var, axes: Vec<usize> },
    Expand(Var),
    Reshape(Var),
    Concat { a: Var, b: Var, axis: usize },
    Slice { a: Var, axis: usize, start: usize, len: usize },
    Pad { a: Var, axis: usize, before: usize, full: usize },
}

struct Node<T> {
    op: Op,
    value: Tensor<T>,
    requires_grad: bool,
}

pub struct Graph<T: Scalar> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, op: Op, value: Tensor<T>, requires_grad: bool) -> Result<Var, NnError> {
        value.assert_finite(op_name(&op))?;
        self.nodes.push(Node {
            op,
            value,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Constant leaf: gradients never flow into it.
    pub fn input(&mut self, value: Tensor<T>) -> Result<Var, NnError> {
        self.push(Op::Leaf, value, false)
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Tensor<T>) -> Result<Var, NnError> {
        self.push(Op::Leaf, value, true)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        let value = broadcast_zip(self.value(a), self.value(b), |x, y| x.add(y))?;
        self.push(Op::Add(a, b), value, self.needs(a) || self.needs(b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        let value = broadcast_zip(self.value(a), self.value(b), |x, y| x.sub(y))?;
        self.push(Op::Sub(a, b), value, self.needs(a) || self.needs(b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        let value = broadcast_zip(self.value(a), self.value(b), |x, y| x.mul(y))?;
        self.push(Op::Mul(a, b), value, self.needs(a) || self.needs(b))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var, NnError> {
        let k = T::from_f64(c);
        let value = self.value(a).map(|v| v.mul(k));
        self.push(Op::Scale(a, c), value, self.needs(a))
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Result<Var, NnError> {
        let k = T::from_f64(c);
        let value = self.value(a).map(|v| v.add(k));
        self.push(Op::AddScalar(a, c), value, self.needs(a))
    }

    pub fn recip(&mut self, a: Var) -> Result<Var, NnError> {
        let value = self.value(a).map(|v| v.recip());
        self.push(Op::Recip(a), value, self.needs(a))
    }

    pub fn sqrt(&mut self, a: Var) -> Result<Var, NnError> {
        let value = self.value(a).map(|v| v.sqrt());
        self.push(Op::Sqrt(a), value, self.needs(a))
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var, NnError> {
        let value = self.value(a).map(|v| v.tanh());
        self.push(Op::Tanh(a), value, self.needs(a))
    }

    pub fn relu(&mut self, a: Var) -> Result<Var, NnError> {
        let value = self
            .value(a)
            .map(|v| if v > T::ZERO { v } else { T::ZERO });
        self.push(Op::Relu(a), value, self.needs(a))
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Result<Var, NnError> {
        let s = T::from_f64(slope);
        let value = self
            .value(a)
            .map(|v| if v > T::ZERO { v } else { v.mul(s) });
        self.push(Op::LeakyRelu(a, slope), value, self.needs(a))
    }

    pub fn abs(&mut self, a: Var) -> Result<Var, NnError> {
        let value = self.value(a).map(|v| v.abs());
        self.push(Op::Abs(a), value, self.needs(a))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, NnError> {
        let value = conv::matmul(self.value(a), self.value(b))?;
        self.push(Op::Matmul(a, b), value, self.needs(a) || self.needs(b))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var, NnError> {
        let value = conv::transpose2d(self.value(a))?;
        self.push(Op::Transpose(a), value, self.needs(a))
    }

    pub fn conv2d(&mut self, x: Var, w: Var, stride: usize) -> Result<Var, NnError> {
        let value = conv::conv2d(self.value(x), self.value(w), stride)?;
        self.push(
            Op::Conv { x, w, stride },
            value,
            self.needs(x) || self.needs(w),
        )
    }

    pub fn deconv2d(
        &mut self,
        y: Var,
        w: Var,
        stride: usize,
        out_hw: (usize, usize),
    ) -> Result<Var, NnError> {
        let value = conv::deconv2d(self.value(y), self.value(w), stride, out_hw)?;
        self.push(
            Op::Deconv { y, w, stride, out_hw },
            value,
            self.needs(y) || self.needs(w),
        )
    }

    pub fn conv2d_dw(&mut self, x: Var, gy: Var, stride: usize, k: usize) -> Result<Var, NnError> {
        let value = conv::conv2d_dw(self.value(x), self.value(gy), stride, k)?;
        self.push(
            Op::ConvDw { x, gy, stride, k },
            value,
            self.needs(x) || self.needs(gy),
        )
    }

    /// Sum over `axes`, keeping reduced dims as size 1.
    pub fn reduce_sum(&mut self, a: Var, axes: &[usize]) -> Result<Var, NnError> {
        let value = reduce_sum_kernel(self.value(a), axes)?;
        self.push(
            Op::ReduceSum {
                a,
                axes: axes.to_vec(),
            },
            value,
            self.needs(a),
        )
    }

    /// Broadcast dims of size 1 up to `target`.
    pub fn expand(&mut self, a: Var, target: &[usize]) -> Result<Var, NnError> {
        let value = expand_kernel(self.value(a), target)?;
        self.push(Op::Expand(a), value, self.needs(a))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var, NnError> {
        let value = self.value(a).reshaped(shape.to_vec())?;
        self.push(Op::Reshape(a), value, self.needs(a))
    }

    pub fn concat(&mut self, a: Var, b: Var, axis: usize) -> Result<Var, NnError> {
        let value = concat_kernel(self.value(a), self.value(b), axis)?;
        self.push(
            Op::Concat { a, b, axis },
            value,
            self.needs(a) || self.needs(b),
        )
    }

    pub fn slice(&mut self, a: Var, axis: usize, start: usize, len: usize) -> Result<Var, NnError> {
        let value = slice_kernel(self.value(a), axis, start, len)?;
        self.push(
            Op::Slice { a, axis, start, len },
            value,
            self.needs(a),
        )
    }

    fn pad(&mut self, a: Var, axis: usize, before: usize, full: usize) -> Result<Var, NnError> {
        let value = pad_kernel(self.value(a), axis, before, full)?;
        self.push(
            Op::Pad { a, axis, before, full },
            value,
            self.needs(a),
        )
    }

    // ---- composites ----

    pub fn sum_all(&mut self, a: Var) -> Result<Var, NnError> {
        let nd = self.shape(a).len();
        let axes: Vec<usize> = (0..nd).collect();
        let s = self.reduce_sum(a, &axes)?;
        self.reshape(s, &[1])
    }

    pub fn mean_all(&mut self, a: Var) -> Result<Var, NnError> {
        let n = self.value(a).len();
        let s = self.sum_all(a)?;
        self.scale(s, 1.0 / n as f64)
    }

    pub fn mean_axes(&mut self, a: Var, axes: &[usize]) -> Result<Var, NnError> {
        let shape = self.shape(a);
        let n: usize = axes.iter().map(|&d| shape[d]).product();
        let s = self.reduce_sum(a, axes)?;
        self.scale(s, 1.0 / n as f64)
    }

    /// Builds gradient nodes of a scalar `root` w.r.t. each var in `wrt`.
    /// Returns `None` for vars the root does not depend on.
    pub fn grad(&mut self, root: Var, wrt: &[Var]) -> Result<Vec<Option<Var>>, NnError> {
        if self.value(root).len() != 1 {
            return Err(NnError::Shape(format!(
                "grad root must be scalar, got shape {:?}",
                self.shape(root)
            )));
        }
        let root_id = root.0;
        let mut adjoint: Vec<Option<Var>> = vec![None; root_id + 1];
        let seed = Tensor::filled(self.shape(root).to_vec(), T::ONE);
        adjoint[root_id] = Some(self.input(seed)?);

        // Node ids are topologically ordered by construction, so a single
        // reverse sweep visits consumers before producers.
        for id in (0..=root_id).rev() {
            let g = match adjoint[id] {
                Some(g) => g,
                None => continue,
            };
            if !self.nodes[id].requires_grad {
                continue;
            }
            let op = self.nodes[id].op.clone();
            match op {
                Op::Leaf => {}
                Op::Add(a, b) => {
                    self.accumulate(&mut adjoint, a, g)?;
                    self.accumulate(&mut adjoint, b, g)?;
                }
                Op::Sub(a, b) => {
                    self.accumulate(&mut adjoint, a, g)?;
                    let ng = self.scale(g, -1.0)?;
                    self.accumulate(&mut adjoint, b, ng)?;
                }
                Op::Mul(a, b) => {
                    if self.needs(a) {
                        let c = self.mul(g, b)?;
                        self.accumulate(&mut adjoint, a, c)?;
                    }
                    if self.needs(b) {
                        let c = self.mul(g, a)?;
                        self.accumulate(&mut adjoint, b, c)?;
                    }
                }
                Op::Scale(a, c) => {
                    let s = self.scale(g, c)?;
                    self.accumulate(&mut adjoint, a, s)?;
                }
                Op::AddScalar(a, _) => self.accumulate(&mut adjoint, a, g)?,
                Op::Recip(a) => {
                    // d(1/x) = -g / x^2 = -g * r * r with r the output value.
                    let out = Var(id);
                    let gr = self.mul(g, out)?;
                    let grr = self.mul(gr, out)?;
                    let c = self.scale(grr, -1.0)?;
                    self.accumulate(&mut adjoint, a, c)?;
                }
                Op::Sqrt(a) => {
                    // d(sqrt x) = g / (2 sqrt x)
                    let out = Var(id);
                    let r = self.recip(out)?;
                    let gr = self.mul(g, r)?;
                    let c = self.scale(gr, 0.5)?;
                    self.accumulate(&mut adjoint, a, c)?;
                }
                Op::Tanh(a) => {
                    let out = Var(id);
                    let yy = self.mul(out, out)?;
                    let neg = self.scale(yy, -1.0)?;
                    let one_minus = self.add_scalar(neg, 1.0)?;
                    let c = self.mul(g, one_minus)?;
                    self.accumulate(&mut adjoint, a, c)?;
                }
                Op::Relu(a) => {
                    let mask = self.detached_mask(a, |v| v > T::ZERO, T::ONE, T::ZERO)?;
                    let c = self.mul(g, mask)?;
                    self.accumulate(&mut adjoint, a, c)?;
                }
                Op::LeakyRelu(a, slope) => {
                    let s = T::from_f64(slope);
                    let mask = self.detached_mask(a, |v| v > T::ZERO, T::ONE, s)?;
                    let c = self.mul(g, mask)?;
                    self.accumulate(&mut adjoint, a, c)?;
                }
                Op::Abs(a) => {
                    // sign with sign(0) = 0: zero subgradient at the kink.
                    let sign = {
                        let t = self.value(a).map(|v| {
                            if v > T::ZERO {
                                T::ONE
                            } else if v < T::ZERO {
                                T::from_f64(-1.0)
                            } else {
                                T::ZERO
                            }
                        });
                        self.input(t)?
                    };
                    let c = self.mul(g, sign)?;
                    self.accumulate(&mut adjoint, a, c)?;
                }
                Op::Matmul(a, b) => {
                    if self.needs(a) {
                        let bt = self.transpose(b)?;
                        let c = self.matmul(g, bt)?;
                        self.accumulate(&mut adjoint, a, c)?;
                    }
                    if self.needs(b) {
                        let at = self.transpose(a)?;
                        let c = self.matmul(at, g)?;
                        self.accumulate(&mut adjoint, b, c)?;
                    }
                }
                Op::Transpose(a) => {
                    let c = self.transpose(g)?;
                    self.accumulate(&mut adjoint, a, c)?;
                }
                Op::Conv { x, w, stride } => {
                    let k = self.shape(w)[2];
                    if self.needs(x) {
                        let hw = (self.shape(x)[2], self.shape(x)[3]);
                        let c = self.deconv2d(g, w, stride, hw)?;
                        self.accumulate(&mut adjoint, x, c)?;
                    }
                    if self.needs(w) {
                        let c = self.conv2d_dw(x, g, stride, k)?;
                        self.accumulate(&mut adjoint, w, c)?;
                    }
                }
                Op::Deconv { y, w, stride, .. } => {
                    let k = self.shape(w)[2];
                    if self.needs(y) {
                        let c = self.conv2d(g, w, stride)?;
                        self.accumulate(&mut adjoint, y, c)?;
                    }
                    if self.needs(w) {
                        let c = self.conv2d_dw(g, y, stride, k)?;
                        self.accumulate(&mut adjoint, w, c)?;
                    }
                }
                Op::ConvDw { x, gy, stride, .. } => {
                    if self.needs(x) {
                        let hw = (self.shape(x)[2], self.shape(x)[3]);
                        let c = self.deconv2d(gy, g, stride, hw)?;
                        self.accumulate(&mut adjoint, x, c)?;
                    }
                    if self.needs(gy) {
                        let c = self.conv2d(x, g, stride)?;
                        self.accumulate(&mut adjoint, gy, c)?;
                    }
                }
                Op::ReduceSum { a, .. } => {
                    let target = self.shape(a).to_vec();
                    let c = self.expand(g, &target)?;
                    self.accumulate(&mut adjoint, a, c)?;
                }
                Op::Expand(a) => {
                    let (src, dst) = (self.shape(a).to_vec(), self.shape(Var(id)).to_vec());
                    let axes: Vec<usize> = (0..src.len())
                        .filter(|&d| src[d] == 1 && dst[d] > 1)
                        .collect();
                    let c = if axes.is_empty() {
                        g
                    } else {
                        self.reduce_sum(g, &axes)?
                    };
                    self.accumulate(&mut adjoint, a, c)?;
                }
                Op::Reshape(a) => {
                    let shape = self.shape(a).to_vec();
                    let c = self.reshape(g, &shape)?;
                    self.accumulate(&mut adjoint, a, c)?;
                }
                Op::Concat { a, b, axis } => {
                    let a_len = self.shape(a)[axis];
                    let b_len = self.shape(b)[axis];
                    if self.needs(a) {
                        let c = self.slice(g, axis, 0, a_len)?;
                        self.accumulate(&mut adjoint, a, c)?;
                    }
                    if self.needs(b) {
                        let c = self.slice(g, axis, a_len, b_len)?;
                        self.accumulate(&mut adjoint, b, c)?;
                    }
                }
                Op::Slice { a, axis, start, .. } => {
                    let full = self.shape(a)[axis];
                    let c = self.pad(g, axis, start, full)?;
                    self.accumulate(&mut adjoint, a, c)?;
                }
                Op::Pad { a, axis, before, .. } => {
                    let len = self.shape(a)[axis];
                    let c = self.slice(g, axis, before, len)?;
                    self.accumulate(&mut adjoint, a, c)?;
                }
            }
        }

        Ok(wrt
            .iter()
            .map(|v| if v.0 <= root_id { adjoint[v.0] } else { None })
            .collect())
    }

    fn accumulate(
        &mut self,
        adjoint: &mut [Option<Var>],
        target: Var,
        contrib: Var,
    ) -> Result<(), NnError> {
        if !self.needs(target) {
            return Ok(());
        }
        // Binary broadcasting means the upstream adjoint can be wider than
        // the operand; fold the broadcast axes back down.
        let contrib = self.reduce_to_shape(contrib, &self.shape(target).to_vec())?;
        adjoint[target.0] = Some(match adjoint[target.0] {
            None => contrib,
            Some(prev) => self.add(prev, contrib)?,
        });
        Ok(())
    }

    fn reduce_to_shape(&mut self, v: Var, target: &[usize]) -> Result<Var, NnError> {
        let shape = self.shape(v);
        if shape == target {
            return Ok(v);
        }
        if shape.len() != target.len() {
            return Err(NnError::Shape(format!(
                "cannot reduce {shape:?} to {target:?}"
            )));
        }
        let axes: Vec<usize> = (0..shape.len())
            .filter(|&d| target[d] == 1 && shape[d] > 1)
            .collect();
        self.reduce_sum(v, &axes)
    }

    fn detached_mask(
        &mut self,
        a: Var,
        pred: impl Fn(T) -> bool,
        on_true: T,
        on_false: T,
    ) -> Result<Var, NnError> {
        let t = self
            .value(a)
            .map(|v| if pred(v) { on_true } else { on_false });
        self.input(t)
    }
}

fn op_name(op: &Op) -> &'static str {
    match op {
        Op::Leaf => "leaf",
        Op::Add(..) => "add",
        Op::Sub(..) => "sub",
        Op::Mul(..) => "mul",
        Op::Scale(..) => "scale",
        Op::AddScalar(..) => "add_scalar",
        Op::Recip(..) => "recip",
        Op::Sqrt(..) => "sqrt",
        Op::Tanh(..) => "tanh",
        Op::Relu(..) => "relu",
        Op::LeakyRelu(..) => "leaky_relu",
        Op::Abs(..) => "abs",
        Op::Matmul(..) => "matmul",
        Op::Transpose(..) => "transpose",
        Op::Conv { .. } => "conv2d",
        Op::Deconv { .. } => "deconv2d",
        Op::ConvDw { .. } => "conv2d_dw",
        Op::ReduceSum { .. } => "reduce_sum",
        Op::Expand(..) => "expand",
        Op::Reshape(..) => "reshape",
        Op::Concat { .. } => "concat",
        Op::Slice { .. } => "slice",
        Op::Pad { .. } => "pad",
    }
}

// ---- element kernels ----

fn broadcast_zip<T: Scalar>(
    a: &Tensor<T>,
    b: &Tensor<T>,
    f: impl Fn(T, T) -> T,
) -> Result<Tensor<T>, NnError> {
    if a.shape() == b.shape() {
        let data = a
            .data()
            .iter()
            .zip(b.data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        return Tensor::new(a.shape().to_vec(), data);
    }
    let (sa, sb) = (a.shape(), b.shape());
    if sa.len() != sb.len() {
        return Err(NnError::Shape(format!(
            "broadcast rank mismatch {sa:?} vs {sb:?}"
        )));
    }
    let mut out_shape = Vec::with_capacity(sa.len());
    for (&x, &y) in sa.iter().zip(sb) {
        if x == y || x == 1 || y == 1 {
            out_shape.push(x.max(y));
        } else {
            return Err(NnError::Shape(format!(
                "incompatible broadcast {sa:?} vs {sb:?}"
            )));
        }
    }
    let strides_for = |shape: &[usize]| -> Vec<usize> {
        let mut st = vec![0usize; shape.len()];
        let mut acc = 1;
        for d in (0..shape.len()).rev() {
            st[d] = if shape[d] == 1 { 0 } else { acc };
            acc *= shape[d];
        }
        st
    };
    let (sta, stb) = (strides_for(sa), strides_for(sb));
    let total: usize = out_shape.iter().product();
    let mut out = Tensor::zeros(out_shape.clone());
    let nd = out_shape.len();
    let mut coords = vec![0usize; nd];
    let (da, db, dout) = (a.data(), b.data(), out.data_mut());
    let mut ia = 0usize;
    let mut ib = 0usize;
    for item in dout.iter_mut().take(total) {
        *item = f(da[ia], db[ib]);
        // Odometer increment keeps index math incremental.
        for d in (0..nd).rev() {
            coords[d] += 1;
            ia += sta[d];
            ib += stb[d];
            if coords[d] < out_shape[d] {
                break;
            }
            coords[d] = 0;
            ia -= sta[d] * out_shape[d];
            ib -= stb[d] * out_shape[d];
        }
    }
    Ok(out)
}

fn reduce_sum_kernel<T: Scalar>(a: &Tensor<T>, axes: &[usize]) -> Result<Tensor<T>, NnError> {
    let shape = a.shape();
    for &ax in axes {
        if ax >= shape.len() {
            return Err(NnError::Shape(format!(
                "reduce axis {ax} out of range for {shape:?}"
            )));
        }
    }
    let mut out_shape = shape.to_vec();
    for &ax in axes {
        out_shape[ax] = 1;
    }
    let mut out = Tensor::zeros(out_shape.clone());
    let out_strides = row_major_strides(&out_shape);
    let nd = shape.len();
    let mut coords = vec![0usize; nd];
    let src = a.data();
    let dst: &mut [T] = out.data_mut();
    let mut oi = 0usize;
    let out_stride_eff: Vec<usize> = (0..nd)
        .map(|d| if out_shape[d] == 1 { 0 } else { out_strides[d] })
        .collect();
    for &v in src {
        dst[oi] = dst[oi].add(v);
        for d in (0..nd).rev() {
            coords[d] += 1;
            oi += out_stride_eff[d];
            if coords[d] < shape[d] {
                break;
            }
            coords[d] = 0;
            oi -= out_stride_eff[d] * shape[d];
        }
    }
    Ok(out)
}

fn expand_kernel<T: Scalar>(a: &Tensor<T>, target: &[usize]) -> Result<Tensor<T>, NnError> {
    let shape = a.shape();
    if shape.len() != target.len() {
        return Err(NnError::Shape(format!(
            "expand rank mismatch {shape:?} -> {target:?}"
        )));
    }
    for (&s, &t) in shape.iter().zip(target) {
        if s != t && s != 1 {
            return Err(NnError::Shape(format!(
                "cannot expand {shape:?} to {target:?}"
            )));
        }
    }
    let src_strides = row_major_strides(shape);
    let eff: Vec<usize> = (0..shape.len())
        .map(|d| if shape[d] == 1 { 0 } else { src_strides[d] })
        .collect();
    let total: usize = target.iter().product();
    let mut out = Tensor::zeros(target.to_vec());
    let nd = target.len();
    let mut coords = vec![0usize; nd];
    let src = a.data();
    let dst = out.data_mut();
    let mut si = 0usize;
    for item in dst.iter_mut().take(total) {
        *item = src[si];
        for d in (0..nd).rev() {
            coords[d] += 1;
            si += eff[d];
            if coords[d] < target[d] {
                break;
            }
            coords[d] = 0;
            si -= eff[d] * target[d];
        }
    }
    Ok(out)
}

fn concat_kernel<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, axis: usize) -> Result<Tensor<T>, NnError> {
    let (sa, sb) = (a.shape(), b.shape());
    if sa.len() != sb.len() || axis >= sa.len() {
        return Err(NnError::Shape(format!(
            "concat axis {axis}: {sa:?} vs {sb:?}"
        )));
    }
    for d in 0..sa.len() {
        if d != axis && sa[d] != sb[d] {
            return Err(NnError::Shape(format!(
                "concat non-axis dims differ: {sa:?} vs {sb:?}"
            )));
        }
    }
    let outer: usize = sa[..axis].iter().product();
    let inner: usize = sa[axis + 1..].iter().product();
    let (la, lb) = (sa[axis], sb[axis]);
    let mut out_shape = sa.to_vec();
    out_shape[axis] = la + lb;
    let mut out = Tensor::zeros(out_shape);
    let dst = out.data_mut();
    let (da, db) = (a.data(), b.data());
    let blk_a = la * inner;
    let blk_b = lb * inner;
    for o in 0..outer {
        let at = o * (blk_a + blk_b);
        dst[at..at + blk_a].copy_from_slice(&da[o * blk_a..(o + 1) * blk_a]);
        dst[at + blk_a..at + blk_a + blk_b].copy_from_slice(&db[o * blk_b..(o + 1) * blk_b]);
    }
    Ok(out)
}

fn slice_kernel<T: Scalar>(
    a: &Tensor<T>,
    axis: usize,
    start: usize,
    len: usize,
) -> Result<Tensor<T>, NnError> {
    let shape = a.shape();
    if axis >= shape.len() || start + len > shape[axis] {
        return Err(NnError::Shape(format!(
            "slice [{start}, {start}+{len}) on axis {axis} of {shape:?}"
        )));
    }
    let outer: usize = shape[..axis].iter().product();
    let inner: usize = shape[axis + 1..].iter().product();
    let full = shape[axis];
    let mut out_shape = shape.to_vec();
    out_shape[axis] = len;
    let mut out = Tensor::zeros(out_shape);
    let dst = out.data_mut();
    let src = a.data();
    for o in 0..outer {
        let s = (o * full + start) * inner;
        let d = o * len * inner;
        dst[d..d + len * inner].copy_from_slice(&src[s..s + len * inner]);
    }
    Ok(out)
}

fn pad_kernel<T: Scalar>(
    a: &Tensor<T>,
    axis: usize,
    before: usize,
    full: usize,
) -> Result<Tensor<T>, NnError> {
    let shape = a.shape();
    if axis >= shape.len() || before + shape[axis] > full {
        return Err(NnError::Shape(format!(
            "pad to {full} at offset {before} on axis {axis} of {shape:?}"
        )));
    }
    let outer: usize = shape[..axis].iter().product();
    let inner: usize = shape[axis + 1..].iter().product();
    let len = shape[axis];
    let mut out_shape = shape.to_vec();
    out_shape[axis] = full;
    let mut out = Tensor::zeros(out_shape);
    let dst = out.data_mut();
    let src = a.data();
    for o in 0..outer {
        let d = (o * full + before) * inner;
        let s = o * len * inner;
        dst[d..d + len * inner].copy_from_slice(&src[s..s + len * inner]);
    }
    Ok(out)
}

fn row_major_strides(shape: &[usize]) -> Vec<usize> {
    let mut st = vec![0usize; shape.len()];
    let mut acc = 1;
    for d in (0..shape.len()).rev() {
        st[d] = acc;
        acc *= shape[d];
    }
    st
}
