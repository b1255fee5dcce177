use ndarray::Axis;
use rand::seq::IndexedRandom;
use rand::Rng;

use crate::autodiff::{Tape, Var};
use crate::error::{Result, SsrError};
use crate::model::ModelShape;
use crate::spectral::{BandStack, Modality};

/// One negative component: item, modality and band.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ScrNegative {
    pub item: usize,
    pub modality: Modality,
    pub band: usize,
}

/// Positive pair `(item, band)` across the two content modalities, with its
/// sampled negatives.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScrAnchor {
    pub item: usize,
    pub band: usize,
    pub negatives: Vec<ScrNegative>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScrPlan {
    /// Modality on the anchor side and on the positive side.
    pub pair: (Modality, Modality),
    pub anchors: Vec<ScrAnchor>,
}

impl ScrPlan {
    pub fn n_negatives(&self) -> usize {
        self.anchors.first().map_or(0, |a| a.negatives.len())
    }
}

/// Every band of every listed item becomes an anchor. Of the `negatives`
/// per anchor, the first half (rounded up) comes from other items in the
/// same band and the rest from any item in another band; the modality of
/// each negative is drawn uniformly from `content`.
pub fn sample_scr_plan<R: Rng + ?Sized>(
    items: &[usize],
    n_items: usize,
    bands: usize,
    content: &[Modality],
    negatives: usize,
    rng: &mut R,
) -> Result<ScrPlan> {
    let mut distinct = items.to_vec();
    distinct.sort_unstable();
    distinct.dedup();
    if distinct.len() < 2 || n_items < 2 {
        return Err(SsrError::InvalidArgument(
            "contrastive batch needs at least two items".into(),
        ));
    }
    if let Some(&bad) = items.iter().find(|&&v| v >= n_items) {
        return Err(SsrError::OutOfRange {
            context: "contrastive item".into(),
            index: bad,
            len: n_items,
        });
    }
    if content.len() < 2 {
        return Err(SsrError::InvalidArgument(
            "contrastive pairs need two content modalities".into(),
        ));
    }
    if negatives == 0 || bands == 0 {
        return Err(SsrError::InvalidArgument(
            "contrastive term needs at least one band and one negative".into(),
        ));
    }
    let same_band = if bands == 1 { negatives } else { negatives.div_ceil(2) };
    let mut anchors = Vec::with_capacity(items.len() * bands);
    for &v in items {
        for m in 0..bands {
            let mut negs = Vec::with_capacity(negatives);
            for k in 0..negatives {
                let modality = *content.choose(rng).expect("non-empty");
                let neg = if k < same_band {
                    let mut other = rng.random_range(0..n_items - 1);
                    if other >= v {
                        other += 1;
                    }
                    ScrNegative { item: other, modality, band: m }
                } else {
                    let mut band = rng.random_range(0..bands - 1);
                    if band >= m {
                        band += 1;
                    }
                    ScrNegative { item: rng.random_range(0..n_items), modality, band }
                };
                negs.push(neg);
            }
            anchors.push(ScrAnchor { item: v, band: m, negatives: negs });
        }
    }
    Ok(ScrPlan { pair: (content[0], content[1]), anchors })
}

/// Cosine similarity; zero if either vector has zero norm.
pub fn cosine(a: ndarray::ArrayView1<f64>, b: ndarray::ArrayView1<f64>) -> f64 {
    let na = a.dot(&a).sqrt();
    let nb = b.dot(&b).sqrt();
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    a.dot(&b) / (na * nb)
}

/// `−log(e^{p/τ} / (e^{p/τ} + Σ_k e^{n_k/τ}))`.
pub fn info_nce(positive: f64, negatives: &[f64], tau: f64) -> Result<f64> {
    if !(tau > 0.0) {
        return Err(SsrError::InvalidArgument(format!("temperature {tau} must be positive")));
    }
    let p = positive / tau;
    let max = negatives.iter().map(|n| n / tau).fold(p, f64::max);
    let denom: f64 = (p - max).exp() + negatives.iter().map(|n| (n / tau - max).exp()).sum::<f64>();
    Ok(max + denom.ln() - p)
}

fn position(map: &[(Modality, usize)], modality: Modality, band: usize) -> Result<usize> {
    map.iter()
        .position(|&(c, m)| c == modality && m == band)
        .ok_or_else(|| SsrError::InvalidArgument(format!("no band {band} for {modality}")))
}

/// Mean contrastive loss over the plan's anchors on a plain band stack.
pub fn scr_loss(stack: &BandStack, n_users: usize, plan: &ScrPlan, tau: f64) -> Result<f64> {
    if plan.anchors.is_empty() {
        return Err(SsrError::InvalidArgument("empty contrastive plan".into()));
    }
    let map = &stack.band_axis_map;
    let row = |item: usize, modality: Modality, band: usize| -> Result<ndarray::ArrayView1<'_, f64>> {
        let node = n_users + item;
        if node >= stack.n_nodes() {
            return Err(SsrError::OutOfRange { context: "contrastive item".into(), index: item, len: stack.n_nodes() - n_users });
        }
        let b = position(map, modality, band)?;
        Ok(stack.data.index_axis(Axis(0), node).index_axis_move(Axis(0), b))
    };
    let mut total = 0.0;
    for a in &plan.anchors {
        let anchor = row(a.item, plan.pair.0, a.band)?;
        let pos = cosine(anchor, row(a.item, plan.pair.1, a.band)?);
        let negs = a
            .negatives
            .iter()
            .map(|n| Ok(cosine(anchor, row(n.item, n.modality, n.band)?)))
            .collect::<Result<Vec<_>>>()?;
        total += info_nce(pos, &negs, tau)?;
    }
    Ok(total / plan.anchors.len() as f64)
}

/// Same loss recorded on a tape over the stack variable `[N, B, d]`.
pub fn scr_on_tape(tape: &mut Tape, stack: Var, shape: &ModelShape, plan: &ScrPlan, tau: f64) -> Result<Var> {
    if !(tau > 0.0) {
        return Err(SsrError::InvalidArgument(format!("temperature {tau} must be positive")));
    }
    let a_len = plan.anchors.len();
    let k = plan.n_negatives();
    if a_len == 0 || k == 0 || plan.anchors.iter().any(|a| a.negatives.len() != k) {
        return Err(SsrError::InvalidArgument("contrastive plan needs a fixed negative count".into()));
    }
    let dims = tape.shape(stack).to_vec();
    let (n, b, d) = (dims[0], dims[1], dims[2]);
    let map = shape.band_axis_map();
    if map.len() != b {
        return Err(SsrError::shape("contrastive band axis", map.len(), b));
    }
    let row = |item: usize, modality: Modality, band: usize| -> Result<usize> {
        let node = shape.n_users + item;
        if node >= n {
            return Err(SsrError::OutOfRange { context: "contrastive item".into(), index: item, len: n - shape.n_users });
        }
        Ok(node * b + position(&map, modality, band)?)
    };
    let mut anchor_rows = Vec::with_capacity(a_len);
    let mut pos_rows = Vec::with_capacity(a_len);
    let mut rep_rows = Vec::with_capacity(a_len * k);
    let mut neg_rows = Vec::with_capacity(a_len * k);
    for a in &plan.anchors {
        let ar = row(a.item, plan.pair.0, a.band)?;
        anchor_rows.push(ar);
        pos_rows.push(row(a.item, plan.pair.1, a.band)?);
        for neg in &a.negatives {
            rep_rows.push(ar);
            neg_rows.push(row(neg.item, neg.modality, neg.band)?);
        }
    }
    let flat = tape.reshape(stack, &[n * b, d])?;
    let unit_rows = |tape: &mut Tape, rows: &[usize]| -> Result<Var> {
        let g = tape.gather(flat, rows)?;
        tape.l2_normalize(g)
    };
    let anchors = unit_rows(tape, &anchor_rows)?;
    let positives = unit_rows(tape, &pos_rows)?;
    let reps = unit_rows(tape, &rep_rows)?;
    let negs = unit_rows(tape, &neg_rows)?;
    let pos = tape.mul(anchors, positives)?;
    let pos = tape.sum(pos, Some(1))?;
    let neg = tape.mul(reps, negs)?;
    let neg = tape.sum(neg, Some(1))?;
    let neg = tape.reshape(neg, &[a_len, k])?;
    let pos_col = tape.reshape(pos, &[a_len, 1])?;
    let sims = tape.concat(&[pos_col, neg], 1)?;
    let logits = tape.scale(sims, 1.0 / tau);
    let lse = tape.logsumexp(logits)?;
    let pos_scaled = tape.scale(pos, 1.0 / tau);
    let per = tape.sub(lse, pos_scaled)?;
    tape.mean(per)
}
