use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{composite_on_tape, sample_scr_plan, BatchSpec, LossWeights};
use crate::autodiff::{grad_check, GradCheckConfig, GradCheckReport};
use crate::error::Result;
use crate::graph::{build_graph, normalized_laplacian, Interaction, InteractionTable};
use crate::model::{MaskSample, ModelConfig, ModelParams, ModelShape, SpectralInputs};
use crate::spectral::{eigendecompose, Modality, PartitionScope, SpectralMode};

/// A small model with its precomputed inputs.
#[derive(Debug, Clone)]
pub struct CheckFixture {
    pub params: ModelParams,
    pub inputs: SpectralInputs,
}

/// `dim 8, bands 2, rank 2`, the size used for gradient checks.
pub fn check_config() -> ModelConfig {
    ModelConfig { dim: 8, bands: 2, rank: 2, gate_hidden: 6, ..ModelConfig::default() }
}

/// Random 30-node graph (18 users, 12 items) with image (6) and text (5)
/// features. Gate biases are randomized so the gates are not at their
/// symmetric starting point.
pub fn check_fixture(seed: u64, cfg: &ModelConfig) -> Result<CheckFixture> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (n_users, n_items) = (18, 12);
    let mut records = Vec::new();
    for u in 0..n_users {
        records.push(Interaction { user: u, item: u % n_items, timestamp: 0 });
        for t in 0..3 {
            records.push(Interaction { user: u, item: rng.random_range(0..n_items), timestamp: t + 1 });
        }
    }
    let graph = build_graph(&InteractionTable::new(records), n_users, n_items)?;
    let img = Array2::from_shape_simple_fn((n_items, 6), || rng.random_range(-1.0..1.0));
    let txt = Array2::from_shape_simple_fn((n_items, 5), || rng.random_range(-1.0..1.0));
    let shape = ModelShape::new(cfg, n_users, n_items, vec![(Modality::Img, 6), (Modality::Txt, 5)])?;
    let mut params = ModelParams::init(shape, &mut rng);
    for name in ["graph_gate.a", "graph_gate.b", "gate.b1", "gate.b2"] {
        let t = params.store.get_mut(name).expect("gate tensors exist");
        t.mapv_inplace(|_| rng.random_range(-0.5..0.5));
    }
    let l = normalized_laplacian(&graph)?;
    let spectrum = if cfg.spectral { Some(eigendecompose(&l, SpectralMode::Full, 4096)?) } else { None };
    let id = params.id_signal()?;
    let feats = [(Modality::Img, img.view()), (Modality::Txt, txt.view())];
    let feats = if cfg.use_modalities { &feats[..] } else { &feats[..0] };
    let inputs = SpectralInputs::prepare(&graph, spectrum.as_ref(), &params.shape, PartitionScope::PerModality, feats, id.view())?;
    Ok(CheckFixture { params, inputs })
}

/// 24 random labeled pairs, one mask at `rate` and a contrastive plan over
/// every item with 8 negatives.
pub fn check_batch(f: &CheckFixture, seed: u64, rate: f64) -> Result<BatchSpec> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shape = &f.params.shape;
    let pairs: Vec<(usize, usize)> = (0..24)
        .map(|_| (rng.random_range(0..shape.n_users), rng.random_range(0..shape.n_items)))
        .collect();
    let labels = (0..24).map(|i| (i % 2) as f64).collect();
    let masks = vec![MaskSample::draw(shape.n_ext_bands(), rate, &mut rng)?];
    let items: Vec<usize> = (0..shape.n_items).collect();
    let content: Vec<Modality> = shape.content.iter().map(|(c, _)| *c).collect();
    let scr = if content.len() >= 2 {
        Some(sample_scr_plan(&items, shape.n_items, shape.bands, &content, 8, &mut rng)?)
    } else {
        None
    };
    Ok(BatchSpec { pairs, labels, masks, scr })
}

/// Finite-difference check of the full objective (unit auxiliary weights)
/// on the check fixture. Parameters are scaled by 3 first: at the
/// initialization scale many gradients are below difference roundoff.
pub fn composite_gradient_check(seed: u64, cfg: &GradCheckConfig) -> Result<GradCheckReport> {
    let mut f = check_fixture(seed, &check_config())?;
    for (_, t) in f.params.store.iter_mut() {
        t.mapv_inplace(|v| 3.0 * v);
    }
    let batch = check_batch(&f, seed.wrapping_add(1), 0.5)?;
    let weights = LossWeights { lambda: 1.0, eta: 1.0, tau: 0.2 };
    let shape = f.params.shape.clone();
    grad_check(
        &f.params.store,
        |tape, store| {
            let p = ModelParams { shape: shape.clone(), store: store.clone() };
            Ok(composite_on_tape(tape, &p, &f.inputs, &batch, weights)?.total)
        },
        cfg,
    )
}
