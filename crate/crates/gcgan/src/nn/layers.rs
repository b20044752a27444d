//! Parameter bookkeeping and layer forward builders.
//!
//! Parameters live in a `ParamSet` (f32 master copies, archive-compatible
//! names). A forward pass binds them into a graph either `Trainable` or
//! `Frozen`; frozen parameters enter as constant leaves, so no gradient can
//! ever touch them. Normalization layers keep running statistics in the
//! parameter set as non-trainable entries.
//!
//! The math itself lives in generic free functions (`fc_forward`,
//! `batch_norm_forward`, ...) so gradient checks can run the exact same
//! composites in f64.

use super::archive::TensorArchive;
use super::graph::{Graph, Var};
use super::tensor::{Scalar, Tensor};
use super::NnError;
use crate::rng::Rng;

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f32 = 0.9;
pub const WEIGHT_SIGMA: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Binding {
    Trainable,
    Frozen,
}

#[derive(Debug)]
struct ParamEntry {
    name: String,
    value: Tensor<f32>,
    trainable: bool,
}

/// Named parameter store for one network.
#[derive(Debug, Default)]
pub struct ParamSet {
    entries: Vec<ParamEntry>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: String, value: Tensor<f32>, trainable: bool) -> usize {
        self.entries.push(ParamEntry {
            name,
            value,
            trainable,
        });
        self.entries.len() - 1
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn name(&self, i: usize) -> &str {
        &self.entries[i].name
    }

    pub fn value(&self, i: usize) -> &Tensor<f32> {
        &self.entries[i].value
    }

    pub fn value_mut(&mut self, i: usize) -> &mut Tensor<f32> {
        &mut self.entries[i].value
    }

    pub fn is_trainable(&self, i: usize) -> bool {
        self.entries[i].trainable
    }

    /// Bind every entry into the graph. Running statistics always enter as
    /// constants; trainable weights become grad leaves unless frozen.
    pub fn bind(&self, g: &mut Graph<f32>, binding: Binding) -> Result<Bound, NnError> {
        let mut vars = Vec::with_capacity(self.entries.len());
        for e in &self.entries {
            let var = if e.trainable && binding == Binding::Trainable {
                g.param(e.value.clone())?
            } else {
                g.input(e.value.clone())?
            };
            vars.push(var);
        }
        Ok(Bound {
            vars,
            stat_updates: Vec::new(),
        })
    }

    /// Collect gradients for every entry after `Graph::grad`.
    pub fn extract_grads(
        &self,
        g: &Graph<f32>,
        grad_vars: &[Option<Var>],
    ) -> Vec<Option<Tensor<f32>>> {
        grad_vars
            .iter()
            .map(|ov| ov.map(|v| g.value(v).clone()))
            .collect()
    }

    /// Apply running-statistic updates gathered during a train-mode forward.
    pub fn apply_stat_updates(&mut self, bound: &Bound) {
        for (idx, value) in &bound.stat_updates {
            self.entries[*idx].value = value.clone();
        }
    }

    pub fn save_into(&self, arch: &mut TensorArchive) -> Result<(), NnError> {
        for e in &self.entries {
            arch.insert(e.name.clone(), e.value.clone())?;
        }
        Ok(())
    }

    pub fn load_from(&mut self, arch: &TensorArchive) -> Result<(), NnError> {
        for e in &mut self.entries {
            let t = arch
                .get(&e.name)
                .ok_or_else(|| NnError::MissingParam(e.name.clone()))?;
            if t.shape() != e.value.shape() {
                return Err(NnError::Shape(format!(
                    "{}: checkpoint shape {:?} vs expected {:?}",
                    e.name,
                    t.shape(),
                    e.value.shape()
                )));
            }
            e.value = t.clone();
        }
        Ok(())
    }

    /// Bitwise fingerprint, used by the frozen-parameter tests.
    pub fn bits(&self) -> Vec<(String, Vec<u32>)> {
        self.entries
            .iter()
            .map(|e| {
                (
                    e.name.clone(),
                    e.value.data().iter().map(|v| v.to_bits()).collect(),
                )
            })
            .collect()
    }
}

/// Graph-bound view of a `ParamSet` for one forward/backward pass.
pub struct Bound {
    vars: Vec<Var>,
    stat_updates: Vec<(usize, Tensor<f32>)>,
}

impl Bound {
    pub fn var(&self, idx: usize) -> Var {
        self.vars[idx]
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }
}

// ---- initializers ----

pub fn init_weight(rng: &mut Rng, shape: Vec<usize>) -> Tensor<f32> {
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| rng.truncated_normal(WEIGHT_SIGMA) as f32)
        .collect();
    Tensor::new(shape, data).expect("init shape")
}

// ---- generic forward builders ----

/// y = x W + b with x: [n, in], W: [in, out], b: [out].
pub fn fc_forward<T: Scalar>(
    g: &mut Graph<T>,
    x: Var,
    w: Var,
    b: Var,
) -> Result<Var, NnError> {
    let y = g.matmul(x, w)?;
    let out = g.shape(b)[0];
    let b_row = g.reshape(b, &[1, out])?;
    g.add(y, b_row)
}

/// Normalize over `axes` with batch statistics; returns the output together
/// with the batch mean/var tensors so the caller can fold them into running
/// statistics.
#[allow(clippy::type_complexity)]
pub fn batch_stats_normalize<T: Scalar>(
    g: &mut Graph<T>,
    x: Var,
    axes: &[usize],
) -> Result<(Var, Tensor<T>, Tensor<T>), NnError> {
    let mu = g.mean_axes(x, axes)?;
    let xc = g.sub(x, mu)?;
    let sq = g.mul(xc, xc)?;
    let var = g.mean_axes(sq, axes)?;
    let veps = g.add_scalar(var, BN_EPS)?;
    let std = g.sqrt(veps)?;
    let inv = g.recip(std)?;
    let xn = g.mul(xc, inv)?;
    Ok((xn, g.value(mu).clone(), g.value(var).clone()))
}

/// Normalize against fixed (running) statistics.
pub fn fixed_stats_normalize<T: Scalar>(
    g: &mut Graph<T>,
    x: Var,
    mean: Var,
    var: Var,
) -> Result<Var, NnError> {
    let xc = g.sub(x, mean)?;
    let veps = g.add_scalar(var, BN_EPS)?;
    let std = g.sqrt(veps)?;
    let inv = g.recip(std)?;
    g.mul(xc, inv)
}

/// Affine y = xn * gamma + beta with per-feature gamma/beta of shape [c]
/// reshaped to the broadcast shape `affine_shape`.
pub fn affine<T: Scalar>(
    g: &mut Graph<T>,
    xn: Var,
    gamma: Var,
    beta: Var,
    affine_shape: &[usize],
) -> Result<Var, NnError> {
    let ga = g.reshape(gamma, affine_shape)?;
    let be = g.reshape(beta, affine_shape)?;
    let scaled = g.mul(xn, ga)?;
    g.add(scaled, be)
}

/// Full batch-norm composite. In train mode returns the batch statistics
/// (already reshaped to the running-stat layout) for the caller to blend.
#[allow(clippy::type_complexity)]
pub fn batch_norm_forward<T: Scalar>(
    g: &mut Graph<T>,
    x: Var,
    gamma: Var,
    beta: Var,
    running_mean: Var,
    running_var: Var,
    mode: Mode,
) -> Result<(Var, Option<(Tensor<T>, Tensor<T>)>), NnError> {
    let nd = g.shape(x).len();
    let (axes, affine_shape): (Vec<usize>, Vec<usize>) = match nd {
        2 => (vec![0], vec![1, g.shape(x)[1]]),
        4 => (vec![0, 2, 3], vec![1, g.shape(x)[1], 1, 1]),
        _ => {
            return Err(NnError::Shape(format!(
                "batch norm wants 2-d or 4-d input, got {:?}",
                g.shape(x)
            )))
        }
    };
    match mode {
        Mode::Train => {
            let (xn, mu, var) = batch_stats_normalize(g, x, &axes)?;
            let y = affine(g, xn, gamma, beta, &affine_shape)?;
            Ok((y, Some((mu, var))))
        }
        Mode::Infer => {
            let xn = fixed_stats_normalize(g, x, running_mean, running_var)?;
            let y = affine(g, xn, gamma, beta, &affine_shape)?;
            Ok((y, None))
        }
    }
}

/// Layer norm over (c,h,w) per sample, per-channel affine.
pub fn layer_norm_forward<T: Scalar>(
    g: &mut Graph<T>,
    x: Var,
    gamma: Var,
    beta: Var,
) -> Result<Var, NnError> {
    let nd = g.shape(x).len();
    if nd != 4 {
        return Err(NnError::Shape(format!(
            "layer norm wants 4-d input, got {:?}",
            g.shape(x)
        )));
    }
    let c = g.shape(x)[1];
    let (xn, _, _) = batch_stats_normalize(g, x, &[1, 2, 3])?;
    affine(g, xn, gamma, beta, &[1, c, 1, 1])
}

// ---- layer structs (f32 networks) ----

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Act {
    Relu,
    LeakyRelu(f64),
    Tanh,
    None,
}

pub fn apply_act<T: Scalar>(g: &mut Graph<T>, x: Var, act: Act) -> Result<Var, NnError> {
    match act {
        Act::Relu => g.relu(x),
        Act::LeakyRelu(s) => g.leaky_relu(x, s),
        Act::Tanh => g.tanh(x),
        Act::None => Ok(x),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NormKind {
    Batch,
    Layer,
    None,
}

#[derive(Debug)]
pub struct NormParams {
    pub kind: NormKind,
    gamma: usize,
    beta: usize,
    rmean: usize,
    rvar: usize,
}

impl NormParams {
    pub fn new(ps: &mut ParamSet, prefix: &str, kind: NormKind, features: usize, nd: usize) -> Self {
        let stat_shape = if nd == 2 {
            vec![1, features]
        } else {
            vec![1, features, 1, 1]
        };
        let gamma = ps.add(
            format!("{prefix}.gamma"),
            Tensor::filled(vec![features], 1.0),
            true,
        );
        let beta = ps.add(format!("{prefix}.beta"), Tensor::zeros(vec![features]), true);
        // Running stats exist (and are persisted) only for batch norm.
        let (rmean, rvar) = if kind == NormKind::Batch {
            (
                ps.add(format!("{prefix}.rmean"), Tensor::zeros(stat_shape.clone()), false),
                ps.add(format!("{prefix}.rvar"), Tensor::filled(stat_shape, 1.0), false),
            )
        } else {
            (usize::MAX, usize::MAX)
        };
        NormParams {
            kind,
            gamma,
            beta,
            rmean,
            rvar,
        }
    }

    pub fn forward(
        &self,
        g: &mut Graph<f32>,
        bound: &mut Bound,
        x: Var,
        mode: Mode,
    ) -> Result<Var, NnError> {
        match self.kind {
            NormKind::None => Ok(x),
            NormKind::Layer => layer_norm_forward(g, x, bound.var(self.gamma), bound.var(self.beta)),
            NormKind::Batch => {
                let (y, stats) = batch_norm_forward(
                    g,
                    x,
                    bound.var(self.gamma),
                    bound.var(self.beta),
                    bound.var(self.rmean),
                    bound.var(self.rvar),
                    mode,
                )?;
                if let Some((mu, var)) = stats {
                    // Blend against the bound snapshot so a pass sees one
                    // consistent set of statistics.
                    let old_mean = g.value(bound.var(self.rmean)).clone();
                    let old_var = g.value(bound.var(self.rvar)).clone();
                    bound.stat_updates.push((self.rmean, blend_stats(&old_mean, &mu)));
                    bound.stat_updates.push((self.rvar, blend_stats(&old_var, &var)));
                }
                Ok(y)
            }
        }
    }
}

fn blend_stats(old: &Tensor<f32>, batch: &Tensor<f32>) -> Tensor<f32> {
    let data = old
        .data()
        .iter()
        .zip(batch.data())
        .map(|(&r, &b)| BN_MOMENTUM * r + (1.0 - BN_MOMENTUM) * b)
        .collect();
    Tensor::new(old.shape().to_vec(), data).expect("running stat shapes match")
}

#[derive(Debug)]
pub struct FcLayer {
    w: usize,
    b: usize,
    pub norm: Option<NormParams>,
    pub act: Act,
    pub in_f: usize,
    pub out_f: usize,
}

impl FcLayer {
    pub fn new(
        ps: &mut ParamSet,
        rng: &mut Rng,
        prefix: &str,
        in_f: usize,
        out_f: usize,
        norm: NormKind,
        act: Act,
    ) -> Self {
        let w = ps.add(format!("{prefix}.w"), init_weight(rng, vec![in_f, out_f]), true);
        let b = ps.add(format!("{prefix}.b"), Tensor::zeros(vec![out_f]), true);
        let norm = match norm {
            NormKind::None => None,
            kind => Some(NormParams::new(ps, prefix, kind, out_f, 2)),
        };
        FcLayer {
            w,
            b,
            norm,
            act,
            in_f,
            out_f,
        }
    }

    pub fn forward(
        &self,
        g: &mut Graph<f32>,
        bound: &mut Bound,
        x: Var,
        mode: Mode,
    ) -> Result<Var, NnError> {
        let mut y = fc_forward(g, x, bound.var(self.w), bound.var(self.b))?;
        if let Some(norm) = &self.norm {
            y = norm.forward(g, bound, y, mode)?;
        }
        apply_act(g, y, self.act)
    }
}

#[derive(Debug)]
pub struct ConvLayer {
    w: usize,
    b: usize,
    pub stride: usize,
    pub norm: Option<NormParams>,
    pub act: Act,
    pub in_c: usize,
    pub out_c: usize,
}

impl ConvLayer {
    pub fn new(
        ps: &mut ParamSet,
        rng: &mut Rng,
        prefix: &str,
        in_c: usize,
        out_c: usize,
        k: usize,
        stride: usize,
        norm: NormKind,
        act: Act,
    ) -> Self {
        let w = ps.add(
            format!("{prefix}.w"),
            init_weight(rng, vec![out_c, in_c, k, k]),
            true,
        );
        let b = ps.add(format!("{prefix}.b"), Tensor::zeros(vec![out_c]), true);
        let norm = match norm {
            NormKind::None => None,
            kind => Some(NormParams::new(ps, prefix, kind, out_c, 4)),
        };
        ConvLayer {
            w,
            b,
            stride,
            norm,
            act,
            in_c,
            out_c,
        }
    }

    pub fn forward(
        &self,
        g: &mut Graph<f32>,
        bound: &mut Bound,
        x: Var,
        mode: Mode,
    ) -> Result<Var, NnError> {
        let mut y = g.conv2d(x, bound.var(self.w), self.stride)?;
        let out_c = self.out_c;
        let b_chan = g.reshape(bound.var(self.b), &[1, out_c, 1, 1])?;
        y = g.add(y, b_chan)?;
        if let Some(norm) = &self.norm {
            y = norm.forward(g, bound, y, mode)?;
        }
        apply_act(g, y, self.act)
    }
}

#[derive(Debug)]
pub struct DeconvLayer {
    w: usize,
    b: usize,
    pub stride: usize,
    pub norm: Option<NormParams>,
    pub act: Act,
    pub in_c: usize,
    pub out_c: usize,
}

impl DeconvLayer {
    pub fn new(
        ps: &mut ParamSet,
        rng: &mut Rng,
        prefix: &str,
        in_c: usize,
        out_c: usize,
        k: usize,
        stride: usize,
        norm: NormKind,
        act: Act,
    ) -> Self {
        // Deconv weight layout [in_c, out_c, k, k]: the adjoint-conv kernel.
        let w = ps.add(
            format!("{prefix}.w"),
            init_weight(rng, vec![in_c, out_c, k, k]),
            true,
        );
        let b = ps.add(format!("{prefix}.b"), Tensor::zeros(vec![out_c]), true);
        let norm = match norm {
            NormKind::None => None,
            kind => Some(NormParams::new(ps, prefix, kind, out_c, 4)),
        };
        DeconvLayer {
            w,
            b,
            stride,
            norm,
            act,
            in_c,
            out_c,
        }
    }

    pub fn forward(
        &self,
        g: &mut Graph<f32>,
        bound: &mut Bound,
        x: Var,
        mode: Mode,
    ) -> Result<Var, NnError> {
        let (h, w_sp) = (g.shape(x)[2], g.shape(x)[3]);
        let out_hw = (h * self.stride, w_sp * self.stride);
        let mut y = g.deconv2d(x, bound.var(self.w), self.stride, out_hw)?;
        let out_c = self.out_c;
        let b_chan = g.reshape(bound.var(self.b), &[1, out_c, 1, 1])?;
        y = g.add(y, b_chan)?;
        if let Some(norm) = &self.norm {
            y = norm.forward(g, bound, y, mode)?;
        }
        apply_act(g, y, self.act)
    }
}
