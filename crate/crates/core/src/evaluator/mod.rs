//! Full-ranking metrics, cold-start slicing and spectral diagnostics.


use std::collections::BTreeMap;

use ndarray::{Array2, ArrayView1, ArrayView2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SsrError};
use crate::spectral::{BandStack, Modality};

/// Users with at most this many training interactions count as cold.
pub const COLD_START_MAX_TRAIN: usize = 5;

/// All items not in `exclude`, best first; equal scores keep ascending index order.
pub fn full_rank_scores(z: ArrayView2<f64>, n_users: usize, user: usize, exclude: &[usize]) -> Vec<usize> {
    let zu = z.row(user);
    let items = z.slice(ndarray::s![n_users.., ..]);
    let scores: Vec<f64> = items.outer_iter().map(|zv| zu.dot(&zv)).collect();
    rank_items(&scores, exclude)
}

/// Ranks item indices by descending score, skipping `exclude`. NaN ranks last.
pub fn rank_items(scores: &[f64], exclude: &[usize]) -> Vec<usize> {
    let mut skip = vec![false; scores.len()];
    for &v in exclude {
        if v < skip.len() {
            skip[v] = true;
        }
    }
    let mut order: Vec<usize> = (0..scores.len()).filter(|&v| !skip[v]).collect();
    let key = |v: usize| if scores[v].is_nan() { f64::NEG_INFINITY } else { scores[v] };
    // stable sort keeps index order among ties
    order.sort_by(|&a, &b| key(b).total_cmp(&key(a)));
    order
}

fn check_k(k: usize, relevant: &[usize]) -> Result<()> {
    if k == 0 {
        return Err(SsrError::InvalidArgument("K must be at least 1".into()));
    }
    if relevant.is_empty() {
        return Err(SsrError::InvalidArgument("empty relevant set".into()));
    }
    Ok(())
}

/// `|top-K ∩ relevant| / |relevant|`.
pub fn recall_at_k(ranking: &[usize], relevant: &[usize], k: usize) -> Result<f64> {
    check_k(k, relevant)?;
    let hits = ranking.iter().take(k).filter(|v| relevant.contains(v)).count();
    Ok(hits as f64 / relevant.len() as f64)
}

/// Binary-relevance NDCG with the `1 / log2(rank + 1)` discount.
pub fn ndcg_at_k(ranking: &[usize], relevant: &[usize], k: usize) -> Result<f64> {
    check_k(k, relevant)?;
    let dcg: f64 = ranking
        .iter()
        .take(k)
        .enumerate()
        .filter(|(_, v)| relevant.contains(v))
        .map(|(i, _)| 1.0 / ((i + 2) as f64).log2())
        .sum();
    let ideal: f64 = (0..k.min(relevant.len()))
        .map(|i| 1.0 / ((i + 2) as f64).log2())
        .sum();
    Ok(dcg / ideal)
}

/// Mean Recall@K and NDCG@K over evaluated users.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankingMetrics {
    pub recall: BTreeMap<usize, f64>,
    pub ndcg: BTreeMap<usize, f64>,
    pub n_users: usize,
}

impl RankingMetrics {
    pub fn recall_at(&self, k: usize) -> f64 {
        self.recall.get(&k).copied().unwrap_or(0.0)
    }

    pub fn ndcg_at(&self, k: usize) -> f64 {
        self.ndcg.get(&k).copied().unwrap_or(0.0)
    }
}

/// Users (from `candidates`, or all) that have at least one target item.
pub fn evaluable_users(target: &[Vec<usize>], candidates: Option<&[usize]>) -> Vec<usize> {
    match candidates {
        Some(c) => c.iter().copied().filter(|&u| !target[u].is_empty()).collect(),
        None => (0..target.len()).filter(|&u| !target[u].is_empty()).collect(),
    }
}

/// Full-ranking evaluation: every non-train item is a candidate for every
/// user with at least one target item. `train[u]` and `target[u]` hold item
/// indices.
pub fn evaluate_rankings(
    z: ArrayView2<f64>,
    n_users: usize,
    train: &[Vec<usize>],
    target: &[Vec<usize>],
    users: Option<&[usize]>,
    ks: &[usize],
) -> Result<RankingMetrics> {
    if train.len() != n_users || target.len() != n_users {
        return Err(SsrError::shape("per-user item lists", n_users, train.len().min(target.len())));
    }
    if z.nrows() <= n_users {
        return Err(SsrError::shape("embedding rows", format!("> {n_users}"), z.nrows()));
    }
    if ks.iter().any(|&k| k == 0) {
        return Err(SsrError::InvalidArgument("K must be at least 1".into()));
    }
    if let Some(&u) = users.and_then(|us| us.iter().find(|&&u| u >= n_users)) {
        return Err(SsrError::OutOfRange { context: "evaluation user".into(), index: u, len: n_users });
    }
    let evaluated = evaluable_users(target, users);
    let max_k = ks.iter().copied().max().unwrap_or(0);
    let per_user: Vec<Vec<(f64, f64)>> = evaluated
        .par_iter()
        .map(|&u| {
            let mut ranking = full_rank_scores(z, n_users, u, &train[u]);
            ranking.truncate(max_k);
            ks.iter()
                .map(|&k| {
                    Ok((
                        recall_at_k(&ranking, &target[u], k)?,
                        ndcg_at_k(&ranking, &target[u], k)?,
                    ))
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;
    let n = evaluated.len();
    let mut recall = BTreeMap::new();
    let mut ndcg = BTreeMap::new();
    for (i, &k) in ks.iter().enumerate() {
        // sequential sum keeps results independent of thread count
        let (r, g) = per_user
            .iter()
            .fold((0.0, 0.0), |(r, g), row| (r + row[i].0, g + row[i].1));
        let denom = n.max(1) as f64;
        recall.insert(k, r / denom);
        ndcg.insert(k, g / denom);
    }
    Ok(RankingMetrics { recall, ndcg, n_users: n })
}

/// Users whose training interaction count is at most [`COLD_START_MAX_TRAIN`].
pub fn cold_start_filter(train_counts: &[usize]) -> Vec<usize> {
    train_counts
        .iter()
        .enumerate()
        .filter(|(_, &c)| c <= COLD_START_MAX_TRAIN)
        .map(|(u, _)| u)
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DistanceMetric {
    #[default]
    Euclidean,
    /// `1 − cos`; zero-norm centers are at distance 1 from everything else.
    Cosine,
}

fn distance(a: ArrayView1<f64>, b: ArrayView1<f64>, metric: DistanceMetric) -> f64 {
    match metric {
        DistanceMetric::Euclidean => (&a - &b).mapv(|v| v * v).sum().sqrt(),
        DistanceMetric::Cosine => {
            let (na, nb) = (a.dot(&a).sqrt(), b.dot(&b).sqrt());
            if na == 0.0 && nb == 0.0 {
                0.0
            } else if na == 0.0 || nb == 0.0 {
                1.0
            } else {
                1.0 - a.dot(&b) / (na * nb)
            }
        }
    }
}

/// Pairwise distances between modality centers in one band.
#[derive(Debug, Clone, PartialEq)]
pub struct CenterDistances {
    pub band: usize,
    pub modalities: Vec<Modality>,
    pub centers: Array2<f64>,
    pub distances: Array2<f64>,
}

/// For every band, the mean item row of each modality's component and the
/// distances between those centers.
pub fn modality_center_distances(
    stack: &BandStack,
    n_users: usize,
    metric: DistanceMetric,
) -> Result<Vec<CenterDistances>> {
    if stack.n_nodes() <= n_users {
        return Err(SsrError::shape("band stack rows", format!("> {n_users}"), stack.n_nodes()));
    }
    let modalities = stack.modalities();
    let bands = stack.band_axis_map.iter().map(|&(_, m)| m + 1).max().unwrap_or(0);
    let items = stack.data.slice(ndarray::s![n_users.., .., ..]);
    let mut out = Vec::with_capacity(bands);
    for m in 0..bands {
        let mut centers = Array2::zeros((modalities.len(), stack.dim()));
        for (ci, &c) in modalities.iter().enumerate() {
            let b = stack
                .position(c, m)
                .ok_or_else(|| SsrError::InvalidArgument(format!("{c} has no band {m}")))?;
            let mean = items.index_axis(Axis(1), b).mean_axis(Axis(0)).expect("items present");
            centers.row_mut(ci).assign(&mean);
        }
        let k = modalities.len();
        let mut distances = Array2::zeros((k, k));
        for i in 0..k {
            for j in (i + 1)..k {
                let d = distance(centers.row(i), centers.row(j), metric);
                distances[[i, j]] = d;
                distances[[j, i]] = d;
            }
        }
        out.push(CenterDistances { band: m, modalities: modalities.clone(), centers, distances });
    }
    Ok(out)
}

/// One fused-gate weight for the gate distribution export.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GateRow {
    pub user: usize,
    /// Position on the extended band axis.
    pub band: usize,
    pub modality: Modality,
    pub modality_band: usize,
    pub alpha: f64,
    pub cold: bool,
}

/// One row per `(user, band)` for every listed user.
pub fn gate_distribution_export(
    alpha: ArrayView2<f64>,
    band_axis_map: &[(Modality, usize)],
    users: &[usize],
    train_counts: &[usize],
) -> Result<Vec<GateRow>> {
    if alpha.ncols() != band_axis_map.len() {
        return Err(SsrError::shape("gate columns", band_axis_map.len(), alpha.ncols()));
    }
    let mut rows = Vec::with_capacity(users.len() * band_axis_map.len());
    for &u in users {
        if u >= alpha.nrows() || u >= train_counts.len() {
            return Err(SsrError::OutOfRange { context: "gate user".into(), index: u, len: alpha.nrows().min(train_counts.len()) });
        }
        let cold = train_counts[u] <= COLD_START_MAX_TRAIN;
        for (b, &(modality, m)) in band_axis_map.iter().enumerate() {
            rows.push(GateRow { user: u, band: b, modality, modality_band: m, alpha: alpha[[u, b]], cold });
        }
    }
    Ok(rows)
}
