//! End-to-end runs: train, store, reload and score.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SsrError};
use crate::evaluator::{
    cold_start_filter, evaluate_rankings, evaluable_users, gate_distribution_export, modality_center_distances,
    CenterDistances, DistanceMetric, GateRow, RankingMetrics,
};
use crate::io::Checkpoint;
use crate::model::{node_outputs, ModelParams, SpectralInputs};
use crate::spectral::{band_report, BandPartition, BandReportRow, BandStack, Modality};
use crate::trainer::{fit, Dataset, EpochRecord, TrainConfig, TrainOutcome, TrainingData};

/// Cutoffs reported by default.
pub const REPORT_KS: [usize; 2] = [10, 20];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EvalSplit {
    Val,
    Test,
}

/// Final scores of a run. Contains nothing that depends on wall time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub config_hash: String,
    pub best_epoch: usize,
    pub epochs_run: usize,
    pub stopped_early: bool,
    pub val: RankingMetrics,
    pub test: RankingMetrics,
    pub test_cold_start: RankingMetrics,
}

#[derive(Debug, Clone)]
pub struct Run {
    pub data: TrainingData,
    pub outcome: TrainOutcome,
    /// Best parameters rounded to storage precision.
    pub checkpoint: Checkpoint,
    pub report: RunReport,
}

/// Scores `ckpt` on one split, optionally restricted to cold-start users.
pub fn score_split(
    data: &TrainingData,
    inputs: &SpectralInputs,
    ckpt: &Checkpoint,
    split: EvalSplit,
    cold_only: bool,
    ks: &[usize],
) -> Result<RankingMetrics> {
    let out = node_outputs(&ckpt.params, inputs, None)?;
    let target = match split {
        EvalSplit::Val => &data.val_items,
        EvalSplit::Test => &data.test_items,
    };
    let cold = cold_only.then(|| cold_start_filter(&data.train_counts()));
    evaluate_rankings(out.z.view(), data.n_users, &data.train_items, target, cold.as_deref(), ks)
}

/// Trains with early stopping, keeps the best epoch and scores it on the
/// validation and test splits as it would be after a save and reload.
pub fn train_and_evaluate(dataset: &Dataset, cfg: &TrainConfig, on_epoch: impl FnMut(&EpochRecord)) -> Result<Run> {
    let data = TrainingData::build(dataset, cfg)?;
    let outcome = fit(&data, cfg, on_epoch)?;
    let checkpoint = Checkpoint {
        config: cfg.clone(),
        partitions: outcome.inputs.partitions.clone(),
        best_epoch: outcome.best_epoch,
        params: outcome.params.clone(),
    }
    .quantized();
    let inputs = &outcome.inputs;
    let report = RunReport {
        config_hash: cfg.hash(),
        best_epoch: outcome.best_epoch,
        epochs_run: outcome.history.len(),
        stopped_early: outcome.stopped_early,
        val: score_split(&data, inputs, &checkpoint, EvalSplit::Val, false, &REPORT_KS)?,
        test: score_split(&data, inputs, &checkpoint, EvalSplit::Test, false, &REPORT_KS)?,
        test_cold_start: score_split(&data, inputs, &checkpoint, EvalSplit::Test, true, &REPORT_KS)?,
    };
    Ok(Run { data, outcome, checkpoint, report })
}

/// Rebuilds the split, spectrum and band inputs a checkpoint was trained with.
pub fn restore(dataset: &Dataset, ckpt: &Checkpoint) -> Result<(TrainingData, SpectralInputs)> {
    let data = TrainingData::build(dataset, &ckpt.config)?;
    if data.shape != ckpt.params.shape {
        return Err(SsrError::shape(
            "checkpoint model",
            format!("{:?}", ckpt.params.shape),
            format!("{:?}", data.shape),
        ));
    }
    let inputs = data.inputs(ckpt.partitions.clone())?;
    Ok((data, inputs))
}

/// Band energies, fused gate weights and modality center distances.
#[derive(Debug, Clone)]
pub struct Diagnostics {
    pub band_energy: Vec<BandReportRow>,
    pub gates: Vec<GateRow>,
    pub distances: Vec<CenterDistances>,
}

/// Gate rows cover every user with a test interaction.
pub fn diagnose(
    data: &TrainingData,
    inputs: &SpectralInputs,
    ckpt: &Checkpoint,
    metric: DistanceMetric,
) -> Result<Diagnostics> {
    let out = node_outputs(&ckpt.params, inputs, None)?;
    let band_energy = match &data.spectrum {
        Some(sp) => band_report(sp, &ckpt.partitions),
        None => Vec::new(),
    };
    let users = evaluable_users(&data.test_items, None);
    let map = ckpt.params.shape.band_axis_map();
    let gates = gate_distribution_export(out.alpha.view(), &map, &users, &data.train_counts())?;
    let stack = BandStack { data: out.stack, band_axis_map: map };
    let distances = modality_center_distances(&stack, data.n_users, metric)?;
    Ok(Diagnostics { band_energy, gates, distances })
}

/// Band partitions a fresh run with `cfg` would fix at initialization.
pub fn initial_partitions(data: &TrainingData, cfg: &TrainConfig) -> Result<Vec<(Modality, BandPartition)>> {
    let params = ModelParams::init(data.shape.clone(), &mut ChaCha8Rng::seed_from_u64(cfg.seed));
    data.plan_partitions(cfg, params.id_signal()?.view())
}
