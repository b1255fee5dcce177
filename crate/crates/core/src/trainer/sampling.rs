use rand::Rng;

use crate::error::{Result, SsrError};

/// Labeled `(user, item)` pairs for one batch.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LabeledPairs {
    pub pairs: Vec<(usize, usize)>,
    pub labels: Vec<f64>,
    /// Users dropped because they have interacted with every item.
    pub skipped_users: Vec<usize>,
}

/// Draws `per_positive` uniform negatives for every positive by rejection
/// against `train_items[user]` (sorted). Output keeps each positive followed
/// by its negatives.
pub fn sample_negatives<R: Rng + ?Sized>(
    train_items: &[Vec<usize>],
    n_items: usize,
    positives: &[(usize, usize)],
    per_positive: usize,
    rng: &mut R,
) -> Result<LabeledPairs> {
    if n_items == 0 {
        return Err(SsrError::InvalidArgument("no items to sample from".into()));
    }
    let mut out = LabeledPairs {
        pairs: Vec::with_capacity(positives.len() * (1 + per_positive)),
        labels: Vec::with_capacity(positives.len() * (1 + per_positive)),
        skipped_users: Vec::new(),
    };
    for &(u, v) in positives {
        let seen = train_items.get(u).ok_or_else(|| SsrError::OutOfRange {
            context: "negative sampling user".into(),
            index: u,
            len: train_items.len(),
        })?;
        if v >= n_items {
            return Err(SsrError::OutOfRange { context: "positive item".into(), index: v, len: n_items });
        }
        if seen.len() >= n_items {
            if !out.skipped_users.contains(&u) {
                out.skipped_users.push(u);
            }
            continue;
        }
        out.pairs.push((u, v));
        out.labels.push(1.0);
        for _ in 0..per_positive {
            let neg = loop {
                let j = rng.random_range(0..n_items);
                if seen.binary_search(&j).is_err() {
                    break j;
                }
            };
            out.pairs.push((u, neg));
            out.labels.push(0.0);
        }
    }
    Ok(out)
}
