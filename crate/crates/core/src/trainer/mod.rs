//! Splitting, negative sampling, Adam updates and early stopping.

mod adam;
mod config;
mod sampling;
mod split;


use std::time::Instant;

use ndarray::{Array2, ArrayView2};
use rand::seq::index::sample;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use adam::Adam;
pub use config::{SpectrumGraph, TrainConfig, LR_GRID};
pub use sampling::{sample_negatives, LabeledPairs};
pub use split::{chronological_split, split_counts, SplitRatios, SplitSpec};

use crate::autodiff::Tape;
use crate::error::{Result, SsrError};
use crate::evaluator::evaluate_rankings;
use crate::graph::{build_graph, normalized_laplacian_lenient, BipartiteGraph, InteractionTable};
use crate::model::{node_embedding, MaskSample, ModelParams, ModelShape, SpectralInputs};
use crate::objective::{composite_on_tape, sample_scr_plan, BatchSpec, LossBreakdown, LossWeights};
use crate::spectral::{eigendecompose, BandPartition, Modality, SpectralMode, Spectrum};

/// Recall cutoff monitored for early stopping.
pub const VALIDATION_K: usize = 20;

/// Raw inputs of a run: interactions plus per-item content features.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub n_users: usize,
    pub n_items: usize,
    pub interactions: InteractionTable,
    /// `n_items × d_c` per content modality.
    pub content: Vec<(Modality, Array2<f64>)>,
}

/// Split, graph and spectrum for one dataset and configuration. Deterministic,
/// so evaluation can rebuild it from the same inputs.
#[derive(Debug, Clone)]
pub struct TrainingData {
    pub n_users: usize,
    pub n_items: usize,
    /// Deduplicated interactions; split indices point here.
    pub table: InteractionTable,
    pub split: SplitSpec,
    pub train_items: Vec<Vec<usize>>,
    pub val_items: Vec<Vec<usize>>,
    pub test_items: Vec<Vec<usize>>,
    pub train_pairs: Vec<(usize, usize)>,
    /// Graph behind the Laplacian, feature propagation and degree gate.
    pub graph: BipartiteGraph,
    pub spectrum: Option<Spectrum>,
    pub content: Vec<(Modality, Array2<f64>)>,
    pub shape: ModelShape,
}

impl TrainingData {
    pub fn build(dataset: &Dataset, cfg: &TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let (n_users, n_items) = (dataset.n_users, dataset.n_items);
        if dataset.interactions.is_empty() {
            return Err(SsrError::EmptyTable);
        }
        dataset.interactions.validate(n_users, n_items)?;
        for (c, x) in &dataset.content {
            if x.nrows() != n_items {
                return Err(SsrError::shape(format!("{c} feature rows"), n_items, x.nrows()));
            }
            if x.iter().any(|v| !v.is_finite()) {
                return Err(SsrError::NonFinite(format!("{c} features")));
            }
        }
        let table = dataset.interactions.deduplicated();
        let split = chronological_split(&table, n_users, SplitRatios::default())?;
        let train_table = SplitSpec::subtable(&table, &split.train);
        let graph = match cfg.spectrum_graph {
            SpectrumGraph::Train => build_graph(&train_table, n_users, n_items)?,
            SpectrumGraph::Full => build_graph(&table, n_users, n_items)?,
        };
        let content: Vec<(Modality, Array2<f64>)> = if cfg.use_modalities { dataset.content.clone() } else { Vec::new() };
        let widths = content.iter().map(|(c, x)| (*c, x.ncols())).collect();
        let shape = ModelShape::new(&cfg.model_config(), n_users, n_items, widths)?;
        let spectrum = if cfg.spectral {
            let l = normalized_laplacian_lenient(&graph)?;
            let n = graph.n_nodes();
            let mode = if n <= cfg.dense_limit { SpectralMode::Full } else { SpectralMode::Truncated(cfg.k_trunc.min(n)) };
            Some(eigendecompose(&l, mode, cfg.dense_limit)?)
        } else {
            None
        };
        Ok(TrainingData {
            n_users,
            n_items,
            train_items: SplitSpec::user_items(&table, &split.train, n_users),
            val_items: SplitSpec::user_items(&table, &split.val, n_users),
            test_items: SplitSpec::user_items(&table, &split.test, n_users),
            train_pairs: train_table.records.iter().map(|r| (r.user, r.item)).collect(),
            table,
            split,
            graph,
            spectrum,
            content,
            shape,
        })
    }

    pub fn feature_views(&self) -> Vec<(Modality, ArrayView2<'_, f64>)> {
        self.content.iter().map(|(c, x)| (*c, x.view())).collect()
    }

    /// Training interactions per user.
    pub fn train_counts(&self) -> Vec<usize> {
        self.train_items.iter().map(Vec::len).collect()
    }

    pub fn plan_partitions(&self, cfg: &TrainConfig, id_signal: ArrayView2<f64>) -> Result<Vec<(Modality, BandPartition)>> {
        SpectralInputs::plan(&self.graph, self.spectrum.as_ref(), &self.shape, cfg.partition_scope, &self.feature_views(), id_signal)
    }

    pub fn inputs(&self, partitions: Vec<(Modality, BandPartition)>) -> Result<SpectralInputs> {
        SpectralInputs::assemble(&self.graph, self.spectrum.as_ref(), &self.shape, &self.feature_views(), partitions)
    }
}

/// Model parameters and optimizer state.
#[derive(Debug, Clone)]
pub struct TrainState {
    pub params: ModelParams,
    pub adam: Adam,
    pub epoch: usize,
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub bce: f64,
    pub sbm: f64,
    pub scr: f64,
    pub total: f64,
    pub wall_ms: u64,
    pub val_recall_at_20: f64,
}

fn shuffled_batches<R: Rng + ?Sized>(pairs: &[(usize, usize)], batch_size: usize, rng: &mut R) -> Vec<Vec<(usize, usize)>> {
    let mut order = pairs.to_vec();
    order.shuffle(rng);
    order.chunks(batch_size).map(<[_]>::to_vec).collect()
}

/// Negatives, masks and the contrastive plan for one batch of positives.
pub fn batch_spec<R: Rng + ?Sized>(
    positives: &[(usize, usize)],
    data: &TrainingData,
    cfg: &TrainConfig,
    rng: &mut R,
) -> Result<BatchSpec> {
    let labeled = sample_negatives(&data.train_items, data.n_items, positives, cfg.negatives_per_positive, rng)?;
    let weights = cfg.loss_weights();
    let shape = &data.shape;
    let masks = if weights.lambda > 0.0 {
        (0..cfg.sbm_samples)
            .map(|_| MaskSample::draw(shape.n_ext_bands(), cfg.mask_rate, rng))
            .collect::<Result<Vec<_>>>()?
    } else {
        Vec::new()
    };
    let content: Vec<Modality> = shape.content.iter().map(|(c, _)| *c).collect();
    let mut items: Vec<usize> = labeled.pairs.iter().map(|&(_, v)| v).collect();
    items.sort_unstable();
    items.dedup();
    let scr = if weights.eta > 0.0 && content.len() >= 2 && items.len() >= 2 {
        if items.len() > cfg.scr_items {
            let mut picked: Vec<usize> = sample(rng, items.len(), cfg.scr_items).into_iter().map(|i| items[i]).collect();
            picked.sort_unstable();
            items = picked;
        }
        Some(sample_scr_plan(&items, data.n_items, shape.bands, &content, cfg.scr_negatives, rng)?)
    } else {
        None
    };
    Ok(BatchSpec { pairs: labeled.pairs, labels: labeled.labels, masks, scr })
}

/// Records the objective for one batch, backpropagates and applies one
/// Adam update. Parameters are untouched if any loss term is non-finite.
pub fn train_step(
    state: &mut TrainState,
    inputs: &SpectralInputs,
    batch: &BatchSpec,
    weights: LossWeights,
) -> Result<LossBreakdown> {
    let mut tape = Tape::new();
    let vars = composite_on_tape(&mut tape, &state.params, inputs, batch, weights)?;
    let b = vars.breakdown(&tape, weights)?;
    if ![b.bce, b.sbm, b.scr, b.total].iter().all(|v| v.is_finite()) {
        return Err(SsrError::NonFinite(format!(
            "bce {} sbm {} scr {} total {}",
            b.bce, b.sbm, b.scr, b.total
        )));
    }
    let grads = tape.backward_scalar(vars.total)?;
    state.adam.update(&mut state.params.store, &grads)?;
    Ok(b)
}

/// One pass over the shuffled training interactions. Returns the mean of
/// the per-batch loss terms.
pub fn train_epoch<R: Rng + ?Sized>(
    state: &mut TrainState,
    data: &TrainingData,
    inputs: &SpectralInputs,
    cfg: &TrainConfig,
    rng: &mut R,
) -> Result<LossBreakdown> {
    let weights = cfg.loss_weights();
    let batches = shuffled_batches(&data.train_pairs, cfg.batch_size, rng);
    let mut sums = [0.0; 4];
    let mut counted = 0usize;
    for (index, positives) in batches.iter().enumerate() {
        let batch = batch_spec(positives, data, cfg, rng)?;
        if batch.pairs.is_empty() {
            continue;
        }
        let b = train_step(state, inputs, &batch, weights).map_err(|e| match e {
            SsrError::NonFinite(msg) => SsrError::NonFinite(format!("epoch {} batch {index}: {msg}", state.epoch + 1)),
            other => other,
        })?;
        for (s, v) in sums.iter_mut().zip([b.bce, b.sbm, b.scr, b.total]) {
            *s += v;
        }
        counted += 1;
    }
    if counted == 0 {
        return Err(SsrError::InvalidArgument("no trainable interactions".into()));
    }
    state.epoch += 1;
    let n = counted as f64;
    Ok(LossBreakdown {
        bce: sums[0] / n,
        sbm: sums[1] / n,
        scr: sums[2] / n,
        total: sums[3] / n,
        lambda: weights.lambda,
        eta: weights.eta,
        tau: weights.tau,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EarlyStop {
    Continue,
    /// Stop and restore the parameters of this 1-based epoch.
    Stop { best_epoch: usize },
}

/// Stops once the best validation score is `patience` or more entries old.
/// Only strict improvements reset the count.
pub fn early_stop_check(history: &[f64], patience: usize) -> EarlyStop {
    let Some(first) = history.first() else {
        return EarlyStop::Continue;
    };
    let mut best = (0, *first);
    for (i, &v) in history.iter().enumerate().skip(1) {
        if v > best.1 {
            best = (i, v);
        }
    }
    if history.len() - 1 - best.0 >= patience {
        EarlyStop::Stop { best_epoch: best.0 + 1 }
    } else {
        EarlyStop::Continue
    }
}

/// Mean validation Recall@20 over users with validation interactions.
pub fn validation_recall(params: &ModelParams, inputs: &SpectralInputs, data: &TrainingData) -> Result<f64> {
    let z = node_embedding(params, inputs, None)?;
    let m = evaluate_rankings(z.view(), data.n_users, &data.train_items, &data.val_items, None, &[VALIDATION_K])?;
    Ok(m.recall_at(VALIDATION_K))
}

/// A run in progress: fixed inputs, model state and the training RNG stream.
#[derive(Debug, Clone)]
pub struct Session {
    pub state: TrainState,
    pub inputs: SpectralInputs,
    rng: ChaCha8Rng,
}

impl Session {
    /// Initializes parameters from `seed`, then fixes band partitions from the
    /// initial ID embeddings and content features.
    pub fn new(data: &TrainingData, cfg: &TrainConfig) -> Result<Self> {
        let mut init_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let params = ModelParams::init(data.shape.clone(), &mut init_rng);
        let partitions = data.plan_partitions(cfg, params.id_signal()?.view())?;
        let inputs = data.inputs(partitions)?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(1);
        let adam = Adam::new(&params.store, cfg.lr);
        Ok(Session { state: TrainState { params, adam, epoch: 0 }, inputs, rng })
    }

    pub fn epoch(&mut self, data: &TrainingData, cfg: &TrainConfig) -> Result<LossBreakdown> {
        train_epoch(&mut self.state, data, &self.inputs, cfg, &mut self.rng)
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters from the epoch with the best validation recall.
    pub params: ModelParams,
    pub inputs: SpectralInputs,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub stopped_early: bool,
}

/// Trains until early stopping or `max_epochs`, validating after every epoch.
pub fn fit(data: &TrainingData, cfg: &TrainConfig, mut on_epoch: impl FnMut(&EpochRecord)) -> Result<TrainOutcome> {
    let mut session = Session::new(data, cfg)?;
    let mut history = Vec::new();
    let mut recalls = Vec::new();
    let mut best: Option<(usize, f64, ModelParams)> = None;
    let mut stopped_early = false;
    for _ in 0..cfg.max_epochs {
        let start = Instant::now();
        let loss = session.epoch(data, cfg)?;
        let recall = validation_recall(&session.state.params, &session.inputs, data)?;
        let epoch = session.state.epoch;
        if best.as_ref().is_none_or(|(_, r, _)| recall > *r) {
            best = Some((epoch, recall, session.state.params.clone()));
        }
        let record = EpochRecord {
            epoch,
            bce: loss.bce,
            sbm: loss.sbm,
            scr: loss.scr,
            total: loss.total,
            wall_ms: start.elapsed().as_millis() as u64,
            val_recall_at_20: recall,
        };
        on_epoch(&record);
        history.push(record);
        recalls.push(recall);
        if let EarlyStop::Stop { .. } = early_stop_check(&recalls, cfg.patience) {
            stopped_early = true;
            break;
        }
    }
    let (best_epoch, _, params) = best.expect("at least one epoch");
    Ok(TrainOutcome { params, inputs: session.inputs, history, best_epoch, stopped_early })
}
