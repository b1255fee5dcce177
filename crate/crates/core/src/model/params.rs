use ndarray::{Array2, Array3, ArrayD, Axis, IxDyn};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{ParamStore, Tensor};
use crate::error::{Result, SsrError};
use crate::spectral::{Modality, PartitionScope};

/// How the per-band structural gate depends on the node.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GraphGateMode {
    /// `sigmoid(a_b · d̃_v + b_b)` with standardized log-degree `d̃`.
    #[default]
    Degree,
    /// `sigmoid(b_b)`, identical for every node.
    Constant,
}

/// Architecture switches shared by training, evaluation and checkpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub dim: usize,
    pub bands: usize,
    pub rank: usize,
    pub gate_hidden: usize,
    pub graph_gate: GraphGateMode,
    pub partition_scope: PartitionScope,
    /// Include image and text signals; `false` keeps only ID embeddings.
    pub use_modalities: bool,
    /// Split signals into frequency bands; `false` treats each signal as one band.
    pub spectral: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            dim: 64,
            bands: 4,
            rank: 8,
            gate_hidden: 32,
            graph_gate: GraphGateMode::Degree,
            partition_scope: PartitionScope::PerModality,
            use_modalities: true,
            spectral: true,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("dim", self.dim),
            ("bands", self.bands),
            ("rank", self.rank),
            ("gate_hidden", self.gate_hidden),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(SsrError::Config(format!("{name} must be positive")));
            }
        }
        if self.spectral && self.bands < 2 {
            return Err(SsrError::Config(
                "bands must be at least 2 when spectral decomposition is on".into(),
            ));
        }
        Ok(())
    }

    /// Bands per modality actually used.
    pub fn bands_per_signal(&self) -> usize {
        if self.spectral {
            self.bands
        } else {
            1
        }
    }
}

/// Sizes of every parameter tensor plus the form of the structural gate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelShape {
    pub n_users: usize,
    pub n_items: usize,
    pub dim: usize,
    /// Raw widths of the content modalities, in band-axis order after ID.
    pub content: Vec<(Modality, usize)>,
    pub bands: usize,
    pub rank: usize,
    pub gate_hidden: usize,
    pub graph_gate: GraphGateMode,
}

impl ModelShape {
    pub fn new(
        cfg: &ModelConfig,
        n_users: usize,
        n_items: usize,
        content: Vec<(Modality, usize)>,
    ) -> Result<Self> {
        cfg.validate()?;
        if content.iter().any(|(c, _)| *c == Modality::Id) {
            return Err(SsrError::InvalidArgument(
                "ID is not a content modality".into(),
            ));
        }
        Ok(ModelShape {
            n_users,
            n_items,
            dim: cfg.dim,
            content: if cfg.use_modalities { content } else { Vec::new() },
            bands: cfg.bands_per_signal(),
            rank: cfg.rank,
            gate_hidden: cfg.gate_hidden,
            graph_gate: cfg.graph_gate,
        })
    }

    pub fn n_nodes(&self) -> usize {
        self.n_users + self.n_items
    }

    /// Signals in band-axis order.
    pub fn modalities(&self) -> Vec<Modality> {
        std::iter::once(Modality::Id)
            .chain(self.content.iter().map(|(c, _)| *c))
            .collect()
    }

    /// Length of the extended band axis.
    pub fn n_ext_bands(&self) -> usize {
        self.bands * (1 + self.content.len())
    }

    pub fn band_axis_map(&self) -> Vec<(Modality, usize)> {
        self.modalities()
            .into_iter()
            .flat_map(|c| (0..self.bands).map(move |m| (c, m)))
            .collect()
    }

    /// Declared shape of every named parameter.
    pub fn tensor_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let (d, b, r, h) = (self.dim, self.n_ext_bands(), self.rank, self.gate_hidden);
        let mut out = vec![
            ("user_emb".to_string(), vec![self.n_users, d]),
            ("item_emb".to_string(), vec![self.n_items, d]),
        ];
        for (c, dc) in &self.content {
            out.push((format!("proj.{c}"), vec![*dc, d]));
        }
        out.extend([
            ("gate.w1".to_string(), vec![d + b, h]),
            ("gate.b1".to_string(), vec![h]),
            ("gate.w2".to_string(), vec![h, b]),
            ("gate.b2".to_string(), vec![b]),
            ("cp.wq".to_string(), vec![b, r]),
            ("cp.wk".to_string(), vec![b, r]),
            ("cp.v".to_string(), vec![r, d, d]),
            ("out.w".to_string(), vec![d, d]),
            ("graph_gate.a".to_string(), vec![b]),
            ("graph_gate.b".to_string(), vec![b]),
        ]);
        out
    }
}

/// All trainable tensors together with their layout.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub shape: ModelShape,
    pub store: ParamStore,
}

fn uniform<R: Rng + ?Sized>(rng: &mut R, shape: &[usize], bound: f64) -> Tensor {
    ArrayD::from_shape_simple_fn(IxDyn(shape), || rng.random_range(-bound..bound))
}

impl ModelParams {
    /// Zero-mean uniform init with bound `1/√fan`; CP weights are further
    /// scaled by `1/√r` and the structural gate starts neutral.
    pub fn init<R: Rng + ?Sized>(shape: ModelShape, rng: &mut R) -> Self {
        let mut store = ParamStore::new();
        let inv_sqrt = |n: usize| 1.0 / (n as f64).sqrt();
        let d = shape.dim;
        let r = shape.rank;
        for (name, dims) in shape.tensor_shapes() {
            let value = match name.as_str() {
                "graph_gate.a" | "graph_gate.b" | "gate.b1" | "gate.b2" => Tensor::zeros(IxDyn(&dims)),
                "cp.wq" | "cp.wk" => uniform(rng, &dims, inv_sqrt(r)),
                "cp.v" => uniform(rng, &dims, inv_sqrt(d)),
                "gate.w1" | "gate.w2" => uniform(rng, &dims, inv_sqrt(dims[0])),
                _ => uniform(rng, &dims, inv_sqrt(d)),
            };
            store.insert(name, value);
        }
        ModelParams { shape, store }
    }

    /// Wraps an existing store after checking every name and shape.
    pub fn from_store(shape: ModelShape, store: ParamStore) -> Result<Self> {
        let expected = shape.tensor_shapes();
        if store.len() != expected.len() {
            return Err(SsrError::shape("parameter count", expected.len(), store.len()));
        }
        for (name, dims) in &expected {
            let t = store.get(name)?;
            if t.shape() != dims.as_slice() {
                return Err(SsrError::shape(
                    format!("parameter {name}"),
                    format!("{dims:?}"),
                    format!("{:?}", t.shape()),
                ));
            }
        }
        if !store.all_finite() {
            return Err(SsrError::NonFinite("parameters".into()));
        }
        Ok(ModelParams { shape, store })
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.store.get(name)
    }

    pub fn matrix(&self, name: &str) -> Result<Array2<f64>> {
        self.get(name)?
            .clone()
            .into_dimensionality()
            .map_err(|_| SsrError::shape(name.to_string(), "matrix", format!("{:?}", self.get(name).map(|t| t.shape().to_vec()))))
    }

    /// `[user_emb; item_emb]`, one row per node.
    pub fn id_signal(&self) -> Result<Array2<f64>> {
        let u = self.matrix("user_emb")?;
        let v = self.matrix("item_emb")?;
        Ok(ndarray::concatenate(Axis(0), &[u.view(), v.view()]).expect("same width"))
    }

    pub fn kernel(&self) -> Result<HyperKernel> {
        HyperKernel::new(
            self.matrix("cp.wq")?,
            self.matrix("cp.wk")?,
            self.get("cp.v")?.clone().into_dimensionality().map_err(|_| {
                SsrError::shape("cp.v", "rank-3", "other")
            })?,
        )
    }
}

/// Rank-`r` CP factors of the band-pair kernel family
/// `K_mn = Σ_i wq[m,i] · wk[n,i] · V⁽ⁱ⁾`.
#[derive(Debug, Clone, PartialEq)]
pub struct HyperKernel {
    pub wq: Array2<f64>,
    pub wk: Array2<f64>,
    pub cores: Array3<f64>,
}

impl HyperKernel {
    pub fn new(wq: Array2<f64>, wk: Array2<f64>, cores: Array3<f64>) -> Result<Self> {
        let r = wq.ncols();
        if r == 0 {
            return Err(SsrError::InvalidArgument("CP rank must be positive".into()));
        }
        if wk.dim() != wq.dim() {
            return Err(SsrError::shape(
                "cp key weights",
                format!("{:?}", wq.dim()),
                format!("{:?}", wk.dim()),
            ));
        }
        let (rc, d1, d2) = cores.dim();
        if rc != r || d1 != d2 {
            return Err(SsrError::shape(
                "cp cores",
                format!("{r}xdxd"),
                format!("{rc}x{d1}x{d2}"),
            ));
        }
        Ok(HyperKernel { wq, wk, cores })
    }

    pub fn n_bands(&self) -> usize {
        self.wq.nrows()
    }

    pub fn rank(&self) -> usize {
        self.wq.ncols()
    }

    pub fn dim(&self) -> usize {
        self.cores.len_of(Axis(1))
    }

    /// The `d × d` kernel mixing band `n` into band `m`.
    pub fn materialize(&self, m: usize, n: usize) -> Array2<f64> {
        let d = self.dim();
        let mut k = Array2::zeros((d, d));
        for i in 0..self.rank() {
            k.scaled_add(self.wq[[m, i]] * self.wk[[n, i]], &self.cores.index_axis(Axis(0), i));
        }
        k
    }
}
