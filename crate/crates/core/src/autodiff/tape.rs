use ndarray::{concatenate, Array2, ArrayD, ArrayView3, Axis, Ix2, Ix3, IxDyn, Slice};

use super::kernels;
use super::store::{GradStore, ParamStore, Tensor};
use crate::error::{Result, SsrError};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

/// Primitive kinds. The set is closed; each one has a dedicated gradient test.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Primitive {
    Param,
    Const,
    MatMul,
    Add,
    Mul,
    Scale,
    Sigmoid,
    Softmax,
    LeakyRelu,
    SquaredNorm,
    LogSumExp,
    Gather,
    Contract,
    Sum,
    Concat,
    Reshape,
    L2Normalize,
}

/// Band-axis contraction patterns.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ContractSpec {
    /// `x[n,b,f]`, `w[b,j]` → `y[n,j,f]`; with `transpose_w` the weight is stored `[j,b]`.
    ModeProduct { transpose_w: bool },
    /// `v[i,e,f]`, `q[n,i,f]` → `y[n,i,e]`.
    CoreApply,
}

#[derive(Debug, Clone)]
enum Op {
    Param(String),
    Const,
    MatMul(Var, Var),
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Sigmoid(Var),
    Softmax(Var),
    LeakyRelu(Var, f64),
    SquaredNorm(Var),
    LogSumExp(Var),
    Gather(Var, Vec<usize>),
    Contract(Var, Var, ContractSpec),
    Sum(Var, Option<usize>),
    Concat(Vec<Var>, usize),
    Reshape(Var),
    L2Normalize(Var),
}

impl Op {
    fn primitive(&self) -> Primitive {
        match self {
            Op::Param(_) => Primitive::Param,
            Op::Const => Primitive::Const,
            Op::MatMul(..) => Primitive::MatMul,
            Op::Add(..) => Primitive::Add,
            Op::Mul(..) => Primitive::Mul,
            Op::Scale(..) => Primitive::Scale,
            Op::Sigmoid(_) => Primitive::Sigmoid,
            Op::Softmax(_) => Primitive::Softmax,
            Op::LeakyRelu(..) => Primitive::LeakyRelu,
            Op::SquaredNorm(_) => Primitive::SquaredNorm,
            Op::LogSumExp(_) => Primitive::LogSumExp,
            Op::Gather(..) => Primitive::Gather,
            Op::Contract(..) => Primitive::Contract,
            Op::Sum(..) => Primitive::Sum,
            Op::Concat(..) => Primitive::Concat,
            Op::Reshape(_) => Primitive::Reshape,
            Op::L2Normalize(_) => Primitive::L2Normalize,
        }
    }
}

struct Node {
    value: Tensor,
    op: Op,
}

/// Computation record for reverse-mode differentiation.
///
/// Nodes are appended in evaluation order, so the record is topologically
/// sorted by construction. A tape built with [`Tape::inference`] computes the
/// same values with the same kernels but keeps no operation history.
pub struct Tape {
    nodes: Vec<Node>,
    recording: bool,
    faults: Vec<(Primitive, f64)>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

fn shape_str(s: &[usize]) -> String {
    format!("{s:?}")
}

fn broadcast_shape(a: &[usize], b: &[usize], context: &str) -> Result<Vec<usize>> {
    let n = a.len().max(b.len());
    let mut out = vec![0; n];
    for i in 0..n {
        let da = if i + a.len() >= n { a[i + a.len() - n] } else { 1 };
        let db = if i + b.len() >= n { b[i + b.len() - n] } else { 1 };
        out[i] = if da == db || db == 1 {
            da
        } else if da == 1 {
            db
        } else {
            return Err(SsrError::shape(context, shape_str(a), shape_str(b)));
        };
    }
    Ok(out)
}

/// Sums a broadcast gradient back down to `shape`.
fn sum_to_shape(mut g: Tensor, shape: &[usize]) -> Tensor {
    while g.ndim() > shape.len() {
        g = g.sum_axis(Axis(0));
    }
    for (ax, &d) in shape.iter().enumerate() {
        if d == 1 && g.shape()[ax] != 1 {
            g = g.sum_axis(Axis(ax)).insert_axis(Axis(ax));
        }
    }
    g
}

fn last_axis(t: &Tensor, context: &str) -> Result<Axis> {
    if t.ndim() == 0 {
        return Err(SsrError::shape(context, "rank >= 1", "scalar"));
    }
    Ok(Axis(t.ndim() - 1))
}

fn as2(t: &Tensor) -> ndarray::ArrayView2<'_, f64> {
    t.view().into_dimensionality::<Ix2>().expect("rank checked")
}

fn as3(t: &Tensor) -> ArrayView3<'_, f64> {
    t.view().into_dimensionality::<Ix3>().expect("rank checked")
}

fn reshape(t: &Tensor, shape: &[usize]) -> Tensor {
    t.as_standard_layout()
        .into_owned()
        .into_shape_with_order(IxDyn(shape))
        .expect("element count checked")
}

fn softmax_last(x: &Tensor) -> Tensor {
    let ax = Axis(x.ndim() - 1);
    let mut y = x.clone();
    for mut lane in y.lanes_mut(ax) {
        let max = lane.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        lane.mapv_inplace(|v| (v - max).exp());
        let s = lane.sum();
        lane.mapv_inplace(|v| v / s);
    }
    y
}

fn logsumexp_last(x: &Tensor) -> Tensor {
    let ax = Axis(x.ndim() - 1);
    x.map_axis(ax, |lane| {
        let max = lane.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        if max == f64::NEG_INFINITY {
            return max;
        }
        max + lane.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
    })
}

fn norms_last(x: &Tensor) -> Tensor {
    let ax = Axis(x.ndim() - 1);
    x.map_axis(ax, |lane| lane.dot(&lane).sqrt())
}

pub fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            recording: true,
            faults: Vec::new(),
        }
    }

    /// A tape that evaluates without keeping a differentiable record.
    pub fn inference() -> Self {
        Tape {
            recording: false,
            ..Tape::new()
        }
    }

    pub fn is_recording(&self) -> bool {
        self.recording
    }

    /// Scales the backward rule of one primitive. Used by tests to confirm
    /// that a wrong derivative is caught by the gradient checker.
    #[doc(hidden)]
    pub fn inject_backward_fault(&mut self, primitive: Primitive, factor: f64) {
        self.faults.push((primitive, factor));
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        let op = match op {
            Op::Param(_) | Op::Const => op,
            _ if !self.recording => Op::Const,
            _ => op,
        };
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Primitive kinds of the non-leaf nodes, in evaluation order.
    pub fn operations(&self) -> Vec<Primitive> {
        self.nodes
            .iter()
            .map(|n| n.op.primitive())
            .filter(|p| !matches!(p, Primitive::Param | Primitive::Const))
            .collect()
    }

    pub fn param(&mut self, name: &str, value: &Tensor) -> Var {
        let v = value.as_standard_layout().into_owned();
        self.push(v, Op::Param(name.to_string()))
    }

    /// Registers a parameter from a store.
    pub fn param_from(&mut self, params: &ParamStore, name: &str) -> Result<Var> {
        let v = params.get(name)?;
        Ok(self.param(name, v))
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Const)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(SsrError::shape("matmul", shape_str(&sa), shape_str(&sb)));
        }
        let y = as2(self.value(a)).dot(&as2(self.value(b))).into_dyn();
        Ok(self.push(y, Op::MatMul(a, b)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        broadcast_shape(self.shape(a), self.shape(b), "add")?;
        let y = self.value(a) + self.value(b);
        Ok(self.push(y, Op::Add(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        broadcast_shape(self.shape(a), self.shape(b), "mul")?;
        let y = self.value(a) * self.value(b);
        Ok(self.push(y, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let y = self.value(a) * c;
        self.push(y, Op::Scale(a, c))
    }

    /// `a − b` via add and scale.
    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let nb = self.scale(b, -1.0);
        self.add(a, nb)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let y = self.value(a).mapv(sigmoid);
        self.push(y, Op::Sigmoid(a))
    }

    /// Softmax along the last axis.
    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        last_axis(self.value(a), "softmax")?;
        let y = softmax_last(self.value(a));
        Ok(self.push(y, Op::Softmax(a)))
    }

    /// `x` for `x ≥ 0`, `slope · x` otherwise.
    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        let y = self.value(a).mapv(|v| if v >= 0.0 { v } else { slope * v });
        self.push(y, Op::LeakyRelu(a, slope))
    }

    /// Squared 2-norm along the last axis (drops that axis).
    pub fn squared_norm(&mut self, a: Var) -> Result<Var> {
        let ax = last_axis(self.value(a), "squared_norm")?;
        let y = self.value(a).map_axis(ax, |l| l.dot(&l));
        Ok(self.push(y, Op::SquaredNorm(a)))
    }

    /// Log-sum-exp along the last axis (drops that axis).
    pub fn logsumexp(&mut self, a: Var) -> Result<Var> {
        last_axis(self.value(a), "logsumexp")?;
        let y = logsumexp_last(self.value(a));
        Ok(self.push(y, Op::LogSumExp(a)))
    }

    /// Selects entries along axis 0.
    pub fn gather(&mut self, a: Var, indices: &[usize]) -> Result<Var> {
        let len = *self.shape(a).first().ok_or_else(|| SsrError::shape("gather", "rank >= 1", "scalar"))?;
        if let Some(&bad) = indices.iter().find(|&&i| i >= len) {
            return Err(SsrError::OutOfRange {
                context: "gather".into(),
                index: bad,
                len,
            });
        }
        let y = self.value(a).select(Axis(0), indices);
        Ok(self.push(y, Op::Gather(a, indices.to_vec())))
    }

    pub fn contract(&mut self, a: Var, b: Var, spec: ContractSpec) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        let bad = || SsrError::shape(format!("contract {spec:?}"), shape_str(&sa), shape_str(&sb));
        let y = match spec {
            ContractSpec::ModeProduct { transpose_w } => {
                if sa.len() != 3 || sb.len() != 2 {
                    return Err(bad());
                }
                let w = as2(self.value(b));
                let w = if transpose_w { w.reversed_axes() } else { w };
                if w.nrows() != sa[1] {
                    return Err(bad());
                }
                kernels::mode_product(as3(self.value(a)), w)
            }
            ContractSpec::CoreApply => {
                if sa.len() != 3 || sb.len() != 3 || sa[0] != sb[1] || sa[2] != sb[2] {
                    return Err(bad());
                }
                kernels::core_apply(as3(self.value(a)), as3(self.value(b)))
            }
        };
        Ok(self.push(y.into_dyn(), Op::Contract(a, b, spec)))
    }

    /// Sum over one axis, or over everything to a scalar when `axis` is `None`.
    pub fn sum(&mut self, a: Var, axis: Option<usize>) -> Result<Var> {
        let y = match axis {
            None => ArrayD::from_elem(IxDyn(&[]), self.value(a).sum()),
            Some(ax) => {
                if ax >= self.shape(a).len() {
                    return Err(SsrError::shape("sum axis", self.shape(a).len(), ax));
                }
                self.value(a).sum_axis(Axis(ax))
            }
        };
        Ok(self.push(y, Op::Sum(a, axis)))
    }

    /// Mean of every entry.
    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let n = self.value(a).len().max(1) as f64;
        let s = self.sum(a, None)?;
        Ok(self.scale(s, 1.0 / n))
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let y = concatenate(Axis(axis), &views).map_err(|e| {
            SsrError::shape(
                "concat",
                format!("matching shapes on axis {axis}"),
                e.to_string(),
            )
        })?;
        Ok(self.push(y, Op::Concat(parts.to_vec(), axis)))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let len: usize = shape.iter().product();
        if len != self.value(a).len() {
            return Err(SsrError::shape("reshape", shape_str(self.shape(a)), shape_str(shape)));
        }
        let y = reshape(self.value(a), shape);
        Ok(self.push(y, Op::Reshape(a)))
    }

    /// Scales every lane along the last axis to unit norm; zero lanes stay zero.
    pub fn l2_normalize(&mut self, a: Var) -> Result<Var> {
        let ax = last_axis(self.value(a), "l2_normalize")?;
        let x = self.value(a);
        let norms = norms_last(x).insert_axis(ax);
        let y = ndarray::Zip::from(x)
            .and_broadcast(&norms)
            .map_collect(|&v, &n| if n > 0.0 { v / n } else { 0.0 });
        Ok(self.push(y, Op::L2Normalize(a)))
    }

    /// Reverse sweep from `output` seeded with `seed`. Returns gradients for
    /// every parameter leaf reached; leaves registered more than once under
    /// the same name are summed.
    pub fn backward(&self, output: Var, seed: Tensor) -> Result<GradStore> {
        if !self.recording {
            return Err(SsrError::InvalidArgument(
                "backward on an inference tape".into(),
            ));
        }
        if seed.shape() != self.shape(output) {
            return Err(SsrError::shape(
                "backward seed",
                shape_str(self.shape(output)),
                shape_str(seed.shape()),
            ));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; output.0 + 1];
        grads[output.0] = Some(seed);
        let mut out = GradStore::new();
        for idx in (0..=output.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            let factor = self
                .faults
                .iter()
                .filter(|(p, _)| *p == node.op.primitive())
                .map(|(_, f)| f)
                .product::<f64>();
            let mut contribs: Vec<(Var, Tensor)> = Vec::with_capacity(2);
            match &node.op {
                Op::Param(name) => {
                    match out.get_mut(name) {
                        Some(acc) => *acc += &g,
                        None => out.insert(name.clone(), g.as_standard_layout().into_owned()),
                    }
                    continue;
                }
                Op::Const => continue,
                Op::MatMul(a, b) => {
                    let g2 = as2(&g);
                    contribs.push((*a, g2.dot(&as2(self.value(*b)).t()).into_dyn()));
                    contribs.push((*b, as2(self.value(*a)).t().dot(&g2).into_dyn()));
                }
                Op::Add(a, b) => {
                    contribs.push((*a, sum_to_shape(g.clone(), self.shape(*a))));
                    contribs.push((*b, sum_to_shape(g, self.shape(*b))));
                }
                Op::Mul(a, b) => {
                    let ga = &g * self.value(*b);
                    let gb = &g * self.value(*a);
                    contribs.push((*a, sum_to_shape(ga, self.shape(*a))));
                    contribs.push((*b, sum_to_shape(gb, self.shape(*b))));
                }
                Op::Scale(a, c) => contribs.push((*a, g * *c)),
                Op::Sigmoid(a) => {
                    let y = &node.value;
                    contribs.push((*a, ndarray::Zip::from(&g).and(y).map_collect(|&g, &y| g * y * (1.0 - y))));
                }
                Op::Softmax(a) => {
                    let y = &node.value;
                    let ax = Axis(y.ndim() - 1);
                    let dot = (&g * y).sum_axis(ax).insert_axis(ax);
                    contribs.push((*a, y * &(&g - &dot)));
                }
                Op::LeakyRelu(a, slope) => {
                    let x = self.value(*a);
                    contribs.push((
                        *a,
                        ndarray::Zip::from(&g)
                            .and(x)
                            .map_collect(|&g, &x| if x >= 0.0 { g } else { slope * g }),
                    ));
                }
                Op::SquaredNorm(a) => {
                    let x = self.value(*a);
                    let ax = Axis(x.ndim() - 1);
                    let gb = g.insert_axis(ax);
                    contribs.push((*a, x * &gb * 2.0));
                }
                Op::LogSumExp(a) => {
                    let x = self.value(*a);
                    let ax = Axis(x.ndim() - 1);
                    let p = softmax_last(x);
                    contribs.push((*a, p * &g.insert_axis(ax)));
                }
                Op::Gather(a, indices) => {
                    let mut ga = Tensor::zeros(self.value(*a).raw_dim());
                    for (row, &i) in indices.iter().enumerate() {
                        let mut dst = ga.index_axis_mut(Axis(0), i);
                        dst += &g.index_axis(Axis(0), row);
                    }
                    contribs.push((*a, ga));
                }
                Op::Contract(a, b, spec) => {
                    let g3 = as3(&g);
                    match spec {
                        ContractSpec::ModeProduct { transpose_w } => {
                            let w = as2(self.value(*b));
                            let w = if *transpose_w { w.reversed_axes() } else { w };
                            let (dx, dw) = kernels::mode_product_backward(as3(self.value(*a)), w, g3);
                            let dw: Array2<f64> = if *transpose_w { dw.reversed_axes() } else { dw };
                            contribs.push((*a, dx.into_dyn()));
                            contribs.push((*b, dw.into_dyn()));
                        }
                        ContractSpec::CoreApply => {
                            let (dv, dq) =
                                kernels::core_apply_backward(as3(self.value(*a)), as3(self.value(*b)), g3);
                            contribs.push((*a, dv.into_dyn()));
                            contribs.push((*b, dq.into_dyn()));
                        }
                    }
                }
                Op::Sum(a, axis) => {
                    let shape = self.shape(*a);
                    let gb = match axis {
                        None => g.broadcast(IxDyn(shape)).expect("scalar broadcasts").to_owned(),
                        Some(ax) => g
                            .insert_axis(Axis(*ax))
                            .broadcast(IxDyn(shape))
                            .expect("reduced axis broadcasts")
                            .to_owned(),
                    };
                    contribs.push((*a, gb));
                }
                Op::Concat(parts, axis) => {
                    let mut start = 0usize;
                    for &p in parts {
                        let len = self.shape(p)[*axis];
                        let piece = g
                            .slice_axis(Axis(*axis), Slice::from(start..start + len))
                            .to_owned();
                        contribs.push((p, piece));
                        start += len;
                    }
                }
                Op::Reshape(a) => contribs.push((*a, reshape(&g, self.shape(*a)))),
                Op::L2Normalize(a) => {
                    let x = self.value(*a);
                    let y = &node.value;
                    let ax = Axis(x.ndim() - 1);
                    let norms = norms_last(x).insert_axis(ax);
                    let proj = (&g * y).sum_axis(ax).insert_axis(ax);
                    let num = &g - &(y * &proj);
                    let ga = ndarray::Zip::from(&num)
                        .and_broadcast(&norms)
                        .map_collect(|&v, &n| if n > 0.0 { v / n } else { 0.0 });
                    contribs.push((*a, ga));
                }
            }
            for (v, mut c) in contribs {
                if factor != 1.0 {
                    c *= factor;
                }
                match &mut grads[v.0] {
                    Some(acc) => *acc += &c,
                    slot @ None => *slot = Some(c),
                }
            }
        }
        Ok(out)
    }

    /// Backward from a scalar output with seed 1.
    pub fn backward_scalar(&self, output: Var) -> Result<GradStore> {
        if !self.shape(output).is_empty() {
            return Err(SsrError::shape("scalar loss", "[]", shape_str(self.shape(output))));
        }
        self.backward(output, ArrayD::from_elem(IxDyn(&[]), 1.0))
    }
}

/// Evaluates `program` on a recording tape. Returns the output value, the
/// record, and the output handle.
pub fn forward_record<F>(params: &ParamStore, program: F) -> Result<(Tensor, Tape, Var)>
where
    F: FnOnce(&mut Tape, &ParamStore) -> Result<Var>,
{
    let mut tape = Tape::new();
    let out = program(&mut tape, params)?;
    Ok((tape.value(out).clone(), tape, out))
}

/// Evaluates `program` without keeping a differentiable record.
pub fn forward_plain<F>(params: &ParamStore, program: F) -> Result<Tensor>
where
    F: FnOnce(&mut Tape, &ParamStore) -> Result<Var>,
{
    let mut tape = Tape::inference();
    let out = program(&mut tape, params)?;
    Ok(tape.value(out).clone())
}
