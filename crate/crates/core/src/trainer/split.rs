use serde::{Deserialize, Serialize};

use crate::error::{Result, SsrError};
use crate::graph::InteractionTable;

/// Fractions of each user's history for train, validation and test.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitRatios {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        SplitRatios { train: 0.8, val: 0.1, test: 0.1 }
    }
}

/// Record indices into the interaction table, ascending within each part.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct SplitSpec {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// Per-user validation and test counts: `round(n · ratio)` each, train takes
/// the rest. If that leaves train empty the last two go to validation and
/// test; users with fewer than three interactions keep everything in train.
pub fn split_counts(n: usize, ratios: SplitRatios) -> (usize, usize, usize) {
    if n < 3 {
        return (n, 0, 0);
    }
    let val = (n as f64 * ratios.val).round() as usize;
    let test = (n as f64 * ratios.test).round() as usize;
    if val + test >= n {
        return (n - 2, 1, 1);
    }
    (n - val - test, val, test)
}

/// Splits each user's interactions in time order. Equal timestamps keep
/// table order.
pub fn chronological_split(table: &InteractionTable, n_users: usize, ratios: SplitRatios) -> Result<SplitSpec> {
    let parts = [ratios.train, ratios.val, ratios.test];
    if parts.iter().any(|r| !(0.0..=1.0).contains(r)) || (parts.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(SsrError::InvalidArgument(format!(
            "split ratios {parts:?} must lie in [0, 1] and sum to 1"
        )));
    }
    if table.is_empty() {
        return Err(SsrError::EmptyTable);
    }
    let mut per_user: Vec<Vec<usize>> = vec![Vec::new(); n_users];
    for (i, r) in table.records.iter().enumerate() {
        if r.user >= n_users {
            return Err(SsrError::InvalidRecord { index: i, reason: format!("user id {} outside [0, {n_users})", r.user) });
        }
        per_user[r.user].push(i);
    }
    let mut spec = SplitSpec::default();
    for mut history in per_user {
        history.sort_by_key(|&i| table.records[i].timestamp);
        let (n_train, n_val, _) = split_counts(history.len(), ratios);
        spec.train.extend_from_slice(&history[..n_train]);
        spec.val.extend_from_slice(&history[n_train..n_train + n_val]);
        spec.test.extend_from_slice(&history[n_train + n_val..]);
    }
    spec.train.sort_unstable();
    spec.val.sort_unstable();
    spec.test.sort_unstable();
    Ok(spec)
}

impl SplitSpec {
    pub fn subtable(table: &InteractionTable, indices: &[usize]) -> InteractionTable {
        InteractionTable::new(indices.iter().map(|&i| table.records[i]).collect())
    }

    /// Sorted, distinct item ids per user for one part of the split.
    pub fn user_items(table: &InteractionTable, indices: &[usize], n_users: usize) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); n_users];
        for &i in indices {
            let r = table.records[i];
            out[r.user].push(r.item);
        }
        for items in &mut out {
            items.sort_unstable();
            items.dedup();
        }
        out
    }
}
