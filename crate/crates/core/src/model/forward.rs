use std::collections::BTreeMap;

use ndarray::{Array2, Array3, ArrayD, ArrayView2, ArrayView3, Axis};

use super::inputs::SpectralInputs;
use super::mask::MaskSample;
use super::params::{GraphGateMode, HyperKernel, ModelParams, ModelShape};
use super::LEAKY_SLOPE;
use crate::autodiff::{kernels, sigmoid, ContractSpec, Tape, Var};
use crate::error::{Result, SsrError};
use crate::graph::BipartiteGraph;
use crate::spectral::Modality;

/// Tape leaves for every model parameter, registered once per tape so both
/// views of a batch share them.
#[derive(Debug, Clone)]
pub struct ParamVars {
    vars: BTreeMap<String, Var>,
}

impl ParamVars {
    pub fn register(tape: &mut Tape, params: &ModelParams) -> Self {
        let vars = params
            .store
            .iter()
            .map(|(name, t)| (name.clone(), tape.param(name, t)))
            .collect();
        ParamVars { vars }
    }

    pub fn get(&self, name: &str) -> Result<Var> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| SsrError::InvalidArgument(format!("unknown parameter {name}")))
    }
}

fn to_dyn(a: &Array2<f64>) -> ArrayD<f64> {
    a.clone().into_dyn()
}

/// Builds the `N × B × d` band stack from the current ID embeddings and
/// content projections.
pub fn band_stack_on_tape(
    tape: &mut Tape,
    pv: &ParamVars,
    shape: &ModelShape,
    inputs: &SpectralInputs,
) -> Result<Var> {
    let n = shape.n_nodes();
    let d = shape.dim;
    if inputs.n_nodes() != n || inputs.bands != shape.bands {
        return Err(SsrError::shape(
            "spectral inputs",
            format!("{n} nodes, {} bands", shape.bands),
            format!("{} nodes, {} bands", inputs.n_nodes(), inputs.bands),
        ));
    }
    let user = pv.get("user_emb")?;
    let item = pv.get("item_emb")?;
    let id = tape.concat(&[user, item], 0)?;

    let mut slices = Vec::with_capacity(shape.n_ext_bands());
    if inputs.is_spectral() {
        for (u, ut) in inputs.id_bases() {
            let ut = tape.constant(to_dyn(ut));
            let coef = tape.matmul(ut, id)?;
            let u = tape.constant(to_dyn(u));
            slices.push(tape.matmul(u, coef)?);
        }
        if inputs.id_residual() {
            // top band also carries what the retained modes miss
            let mut kept = slices[0];
            for &s in &slices[1..] {
                kept = tape.add(kept, s)?;
            }
            let rest = tape.sub(id, kept)?;
            let last = slices.len() - 1;
            slices[last] = tape.add(slices[last], rest)?;
        }
    } else {
        slices.push(id);
    }

    let content = inputs.content();
    if content.len() != shape.content.len() {
        return Err(SsrError::shape("content signals", shape.content.len(), content.len()));
    }
    for (c, bands) in content {
        let proj = pv.get(&format!("proj.{c}"))?;
        for f in bands {
            let f = tape.constant(to_dyn(f));
            slices.push(tape.matmul(f, proj)?);
        }
    }

    let cols: Vec<Var> = slices
        .into_iter()
        .map(|s| tape.reshape(s, &[n, 1, d]))
        .collect::<Result<_>>()?;
    tape.concat(&cols, 1)
}

/// Per-node share of signal energy held by each band, `[N, B]`.
fn energy_fractions_on_tape(tape: &mut Tape, stack: Var) -> Result<Var> {
    let dims = tape.shape(stack).to_vec();
    let (n, b, d) = (dims[0], dims[1], dims[2]);
    let flat = tape.reshape(stack, &[n, b * d])?;
    let unit = tape.l2_normalize(flat)?;
    let unit = tape.reshape(unit, &[n, b, d])?;
    tape.squared_norm(unit)
}

fn hsno_on_tape(tape: &mut Tape, pv: &ParamVars, x: Var) -> Result<Var> {
    let wk = pv.get("cp.wk")?;
    let wq = pv.get("cp.wq")?;
    let cores = pv.get("cp.v")?;
    let q = tape.contract(x, wk, ContractSpec::ModeProduct { transpose_w: false })?;
    let c = tape.contract(cores, q, ContractSpec::CoreApply)?;
    tape.contract(c, wq, ContractSpec::ModeProduct { transpose_w: true })
}

/// `φ(Z W) ⊙ g`; returns `(H, g)` with `g` shaped `[N, B]` (or `[1, B]` for
/// the constant gate).
fn gate_on_tape(
    tape: &mut Tape,
    pv: &ParamVars,
    z: Var,
    mode: GraphGateMode,
    log_degree: &ndarray::Array1<f64>,
) -> Result<(Var, Var)> {
    let dims = tape.shape(z).to_vec();
    let (n, b, d) = (dims[0], dims[1], dims[2]);
    let w = pv.get("out.w")?;
    let flat = tape.reshape(z, &[n * b, d])?;
    let proj = tape.matmul(flat, w)?;
    let act = tape.leaky_relu(proj, LEAKY_SLOPE);
    let act = tape.reshape(act, &[n, b, d])?;

    let bias = pv.get("graph_gate.b")?;
    let pre = match mode {
        GraphGateMode::Degree => {
            if log_degree.len() != n {
                return Err(SsrError::shape("degree feature", n, log_degree.len()));
            }
            let deg = tape.constant(log_degree.clone().into_shape_with_order((n, 1)).expect("column").into_dyn());
            let a = pv.get("graph_gate.a")?;
            let a = tape.reshape(a, &[1, b])?;
            let lin = tape.matmul(deg, a)?;
            tape.add(lin, bias)?
        }
        GraphGateMode::Constant => tape.reshape(bias, &[1, b])?,
    };
    let gate = tape.sigmoid(pre);
    let rows = tape.shape(gate)[0];
    let g3 = tape.reshape(gate, &[rows, b, 1])?;
    Ok((tape.mul(act, g3)?, gate))
}

/// Softmax band weights from `[id ++ stats]` and the weighted band sum.
fn fuse_on_tape(tape: &mut Tape, pv: &ParamVars, h: Var, id: Var, stats: Var) -> Result<(Var, Var)> {
    let dims = tape.shape(h).to_vec();
    let (n, b) = (dims[0], dims[1]);
    let input = tape.concat(&[id, stats], 1)?;
    let w1 = pv.get("gate.w1")?;
    let b1 = pv.get("gate.b1")?;
    let w2 = pv.get("gate.w2")?;
    let b2 = pv.get("gate.b2")?;
    let hidden = tape.matmul(input, w1)?;
    let hidden = tape.add(hidden, b1)?;
    let hidden = tape.leaky_relu(hidden, LEAKY_SLOPE);
    let logits = tape.matmul(hidden, w2)?;
    let logits = tape.add(logits, b2)?;
    let alpha = tape.softmax(logits)?;
    let a3 = tape.reshape(alpha, &[n, b, 1])?;
    let weighted = tape.mul(h, a3)?;
    Ok((tape.sum(weighted, Some(1))?, alpha))
}

/// Tape handles produced by one forward view.
#[derive(Debug, Clone, Copy)]
pub struct Embedded {
    /// Node embeddings `[N, d]`.
    pub z: Var,
    /// Fusion weights `[N, B]`.
    pub alpha: Var,
    /// Structural gate `[N, B]` or `[1, B]`.
    pub gate: Var,
}

/// Mask (optional), cross-band operator, gating and fusion on top of a band stack.
pub fn embed_on_tape(
    tape: &mut Tape,
    pv: &ParamVars,
    shape: &ModelShape,
    inputs: &SpectralInputs,
    stack: Var,
    mask: Option<&MaskSample>,
) -> Result<Embedded> {
    let x = match mask {
        Some(m) => {
            if m.n_bands() != shape.n_ext_bands() {
                return Err(SsrError::shape("mask bands", shape.n_ext_bands(), m.n_bands()));
            }
            let g = tape.constant(m.as_tensor());
            tape.mul(stack, g)?
        }
        None => stack,
    };
    let stats = energy_fractions_on_tape(tape, x)?;
    let z = hsno_on_tape(tape, pv, x)?;
    let (h, gate) = gate_on_tape(tape, pv, z, shape.graph_gate, &inputs.log_degree)?;
    let user = pv.get("user_emb")?;
    let item = pv.get("item_emb")?;
    let id = tape.concat(&[user, item], 0)?;
    let (z, alpha) = fuse_on_tape(tape, pv, h, id, stats)?;
    Ok(Embedded { z, alpha, gate })
}

fn check_pairs(n_users: usize, n_items: usize, pairs: &[(usize, usize)]) -> Result<()> {
    for &(u, v) in pairs {
        if u >= n_users {
            return Err(SsrError::OutOfRange {
                context: "pair user".into(),
                index: u,
                len: n_users,
            });
        }
        if v >= n_items {
            return Err(SsrError::OutOfRange {
                context: "pair item".into(),
                index: v,
                len: n_items,
            });
        }
    }
    Ok(())
}

/// `z_uᵀ z_v` for each `(user, item)` pair, shape `[P]`.
pub fn pair_logits_on_tape(
    tape: &mut Tape,
    z: Var,
    n_users: usize,
    pairs: &[(usize, usize)],
) -> Result<Var> {
    let n = tape.shape(z)[0];
    check_pairs(n_users, n.saturating_sub(n_users), pairs)?;
    let users: Vec<usize> = pairs.iter().map(|p| p.0).collect();
    let items: Vec<usize> = pairs.iter().map(|p| n_users + p.1).collect();
    let zu = tape.gather(z, &users)?;
    let zv = tape.gather(z, &items)?;
    let prod = tape.mul(zu, zv)?;
    tape.sum(prod, Some(1))
}

/// Projects content features into the shared width; the ID signal comes first.
pub fn project_modalities(
    params: &ModelParams,
    raw: &[(Modality, ArrayView2<f64>)],
) -> Result<Vec<(Modality, Array2<f64>)>> {
    let n = params.shape.n_nodes();
    let mut out = vec![(Modality::Id, params.id_signal()?)];
    for (c, x) in raw {
        let p = params.matrix(&format!("proj.{c}"))?;
        if x.nrows() != n || x.ncols() != p.nrows() {
            return Err(SsrError::shape(
                format!("{c} features"),
                format!("{n}x{}", p.nrows()),
                format!("{}x{}", x.nrows(), x.ncols()),
            ));
        }
        out.push((*c, x.dot(&p)));
    }
    Ok(out)
}

/// Cross-band operator in factored form:
/// `Z⁽ᵐ⁾ = Σ_i wq[m,i] · V⁽ⁱ⁾ (Σ_n wk[n,i] x⁽ⁿ⁾)`.
pub fn hsno_apply(x: ArrayView3<f64>, kernel: &HyperKernel) -> Result<Array3<f64>> {
    let (_, b, d) = x.dim();
    if b != kernel.n_bands() || d != kernel.dim() {
        return Err(SsrError::shape(
            "hsno input",
            format!("Nx{}x{}", kernel.n_bands(), kernel.dim()),
            format!("{:?}", x.dim()),
        ));
    }
    let q = kernels::mode_product(x, kernel.wk.view());
    let c = kernels::core_apply(kernel.cores.view(), q.view());
    Ok(kernels::mode_product(c.view(), kernel.wq.t()))
}

/// Structural gating of operator outputs on a plain tensor.
pub fn graph_gate(z: ArrayView3<f64>, graph: &BipartiteGraph, params: &ModelParams) -> Result<Array3<f64>> {
    if z.len_of(Axis(0)) != graph.n_nodes() {
        return Err(SsrError::shape("graph_gate nodes", graph.n_nodes(), z.len_of(Axis(0))));
    }
    let mut tape = Tape::inference();
    let pv = ParamVars::register(&mut tape, params);
    let zv = tape.constant(z.to_owned().into_dyn());
    let (h, _) = gate_on_tape(
        &mut tape,
        &pv,
        zv,
        params.shape.graph_gate,
        &graph.standardized_log_degree(),
    )?;
    Ok(tape.value(h).clone().into_dimensionality().expect("rank 3"))
}

/// Fusion of gated band outputs; returns `(z, α)`.
pub fn fuse_bands(
    h: ArrayView3<f64>,
    params: &ModelParams,
    id_emb: ArrayView2<f64>,
    stats: ArrayView2<f64>,
) -> Result<(Array2<f64>, Array2<f64>)> {
    let (n, b, _) = h.dim();
    if stats.dim() != (n, b) || id_emb.nrows() != n {
        return Err(SsrError::shape(
            "fuse_bands inputs",
            format!("{n} rows, {b} bands"),
            format!("stats {:?}, id {:?}", stats.dim(), id_emb.dim()),
        ));
    }
    let mut tape = Tape::inference();
    let pv = ParamVars::register(&mut tape, params);
    let hv = tape.constant(h.to_owned().into_dyn());
    let idv = tape.constant(id_emb.to_owned().into_dyn());
    let sv = tape.constant(stats.to_owned().into_dyn());
    let (z, alpha) = fuse_on_tape(&mut tape, &pv, hv, idv, sv)?;
    let z = tape.value(z).clone().into_dimensionality().expect("rank 2");
    let alpha = tape.value(alpha).clone().into_dimensionality().expect("rank 2");
    Ok((z, alpha))
}

/// Per-node share of energy in each band of a plain stack.
pub fn band_energy_fractions(stack: ArrayView3<f64>) -> Array2<f64> {
    let mut tape = Tape::inference();
    let x = tape.constant(stack.to_owned().into_dyn());
    let f = energy_fractions_on_tape(&mut tape, x).expect("rank 3");
    tape.value(f).clone().into_dimensionality().expect("rank 2")
}

/// Full forward outputs on plain arrays.
#[derive(Debug, Clone)]
pub struct NodeOutputs {
    pub z: Array2<f64>,
    pub alpha: Array2<f64>,
    /// Structural gate broadcast to `[N, B]`.
    pub gate: Array2<f64>,
    pub stack: Array3<f64>,
}

pub fn node_outputs(
    params: &ModelParams,
    inputs: &SpectralInputs,
    mask: Option<&MaskSample>,
) -> Result<NodeOutputs> {
    let mut tape = Tape::inference();
    let pv = ParamVars::register(&mut tape, params);
    let stack = band_stack_on_tape(&mut tape, &pv, &params.shape, inputs)?;
    let e = embed_on_tape(&mut tape, &pv, &params.shape, inputs, stack, mask)?;
    let n = params.shape.n_nodes();
    let gate: Array2<f64> = tape.value(e.gate).clone().into_dimensionality().expect("rank 2");
    let gate = gate
        .broadcast((n, params.shape.n_ext_bands()))
        .expect("gate rows are 1 or N")
        .to_owned();
    Ok(NodeOutputs {
        z: tape.value(e.z).clone().into_dimensionality().expect("rank 2"),
        alpha: tape.value(e.alpha).clone().into_dimensionality().expect("rank 2"),
        gate,
        stack: tape.value(stack).clone().into_dimensionality().expect("rank 3"),
    })
}

/// Node embeddings `[N, d]`. Deterministic for a given mask.
pub fn node_embedding(
    params: &ModelParams,
    inputs: &SpectralInputs,
    mask: Option<&MaskSample>,
) -> Result<Array2<f64>> {
    Ok(node_outputs(params, inputs, mask)?.z)
}

/// `σ(z_uᵀ z_v)` for `(user, item)` pairs; items are offset by `n_users` in `z`.
pub fn score_pairs(z: ArrayView2<f64>, n_users: usize, pairs: &[(usize, usize)]) -> Result<Vec<f64>> {
    check_pairs(n_users, z.nrows().saturating_sub(n_users), pairs)?;
    Ok(pairs
        .iter()
        .map(|&(u, v)| sigmoid(z.row(u).dot(&z.row(n_users + v))))
        .collect())
}
