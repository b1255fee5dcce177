//! User–item bipartite graph construction and its normalized Laplacian.
//!
//! Node layout is fixed for every downstream tensor: users occupy indices
//! `[0, n_users)` and items occupy `[n_users, n_users + n_items)`.

use std::collections::HashMap;

use ndarray::{Array1, Array2, ArrayView2};

use crate::error::{Result, SsrError};
use crate::sparse::SparseSymmetricMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Interaction {
    pub user: usize,
    pub item: usize,
    pub timestamp: i64,
}

/// Implicit-feedback interaction log with dense user and item indices.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct InteractionTable {
    pub records: Vec<Interaction>,
}

impl InteractionTable {
    pub fn new(records: Vec<Interaction>) -> Self {
        InteractionTable { records }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Checks id ranges and timestamp sign; the first offending record is reported.
    pub fn validate(&self, n_users: usize, n_items: usize) -> Result<()> {
        for (index, r) in self.records.iter().enumerate() {
            if r.user >= n_users {
                return Err(SsrError::InvalidRecord {
                    index,
                    reason: format!("user id {} outside [0, {n_users})", r.user),
                });
            }
            if r.item >= n_items {
                return Err(SsrError::InvalidRecord {
                    index,
                    reason: format!("item id {} outside [0, {n_items})", r.item),
                });
            }
            if r.timestamp < 0 {
                return Err(SsrError::InvalidRecord {
                    index,
                    reason: format!("negative timestamp {}", r.timestamp),
                });
            }
        }
        Ok(())
    }

    /// Collapses repeated `(user, item)` pairs onto the earliest timestamp.
    /// Surviving records stay in input order; among equal timestamps the first
    /// occurrence wins.
    pub fn deduplicated(&self) -> InteractionTable {
        let mut best: HashMap<(usize, usize), usize> = HashMap::new();
        for (i, r) in self.records.iter().enumerate() {
            best.entry((r.user, r.item))
                .and_modify(|j| {
                    if r.timestamp < self.records[*j].timestamp {
                        *j = i;
                    }
                })
                .or_insert(i);
        }
        let mut keep: Vec<usize> = best.into_values().collect();
        keep.sort_unstable();
        InteractionTable {
            records: keep.into_iter().map(|i| self.records[i]).collect(),
        }
    }

    /// Interaction count per user.
    pub fn user_counts(&self, n_users: usize) -> Vec<usize> {
        let mut c = vec![0; n_users];
        for r in &self.records {
            c[r.user] += 1;
        }
        c
    }
}

#[derive(Debug, Clone)]
pub struct BipartiteGraph {
    pub n_users: usize,
    pub n_items: usize,
    pub adjacency: SparseSymmetricMatrix,
    pub degrees: Vec<f64>,
}

impl BipartiteGraph {
    pub fn n_nodes(&self) -> usize {
        self.n_users + self.n_items
    }

    pub fn item_node(&self, item: usize) -> usize {
        self.n_users + item
    }

    /// Item indices (not node indices) adjacent to `user`.
    pub fn user_items(&self, user: usize) -> impl Iterator<Item = usize> + '_ {
        let n_users = self.n_users;
        self.adjacency.row(user).0.iter().map(move |&j| j - n_users)
    }

    /// `log(1 + degree)` standardized to zero mean and unit variance over nodes.
    /// A constant-degree graph maps every node to zero.
    pub fn standardized_log_degree(&self) -> Array1<f64> {
        let x: Array1<f64> = self.degrees.iter().map(|d| d.ln_1p()).collect();
        let n = x.len() as f64;
        let mean = x.sum() / n;
        let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        if var <= 1e-24 {
            return Array1::zeros(x.len());
        }
        let sd = var.sqrt();
        x.mapv(|v| (v - mean) / sd)
    }
}

/// Builds the unweighted bipartite graph with one undirected edge per distinct
/// `(user, item)` pair.
pub fn build_graph(
    table: &InteractionTable,
    n_users: usize,
    n_items: usize,
) -> Result<BipartiteGraph> {
    if table.is_empty() {
        return Err(SsrError::EmptyTable);
    }
    table.validate(n_users, n_items)?;
    let n = n_users + n_items;
    let mut pairs: Vec<(usize, usize)> = table.records.iter().map(|r| (r.user, r.item)).collect();
    pairs.sort_unstable();
    pairs.dedup();
    let mut entries = Vec::with_capacity(2 * pairs.len());
    for (u, v) in pairs {
        entries.push((u, n_users + v, 1.0));
        entries.push((n_users + v, u, 1.0));
    }
    let adjacency = SparseSymmetricMatrix::from_triplets(n, entries)?;
    let degrees = adjacency.row_sums();
    Ok(BipartiteGraph {
        n_users,
        n_items,
        adjacency,
        degrees,
    })
}

/// `L = I − D^{-1/2} A D^{-1/2}`. Every node must have at least one edge.
pub fn normalized_laplacian(g: &BipartiteGraph) -> Result<SparseSymmetricMatrix> {
    let isolated = isolated_nodes(g);
    if !isolated.is_empty() {
        return Err(SsrError::IsolatedNodes(isolated));
    }
    laplacian_entries(g)
}

/// Node ids with no edges.
pub fn isolated_nodes(g: &BipartiteGraph) -> Vec<usize> {
    g.degrees
        .iter()
        .enumerate()
        .filter(|(_, &d)| d <= 0.0)
        .map(|(i, _)| i)
        .collect()
}

/// Like [`normalized_laplacian`] but an isolated node keeps a unit diagonal
/// and no off-diagonal entries, so it becomes its own eigenvector with
/// eigenvalue 1. Used when a training split leaves some items without edges.
pub fn normalized_laplacian_lenient(g: &BipartiteGraph) -> Result<SparseSymmetricMatrix> {
    laplacian_entries(g)
}

fn laplacian_entries(g: &BipartiteGraph) -> Result<SparseSymmetricMatrix> {
    let inv_sqrt: Vec<f64> = g
        .degrees
        .iter()
        .map(|&d| if d > 0.0 { 1.0 / d.sqrt() } else { 0.0 })
        .collect();
    let n = g.n_nodes();
    let mut entries = Vec::with_capacity(g.adjacency.nnz() + n);
    for i in 0..n {
        entries.push((i, i, 1.0));
        let (cols, vals) = g.adjacency.row(i);
        for (&j, &a) in cols.iter().zip(vals) {
            entries.push((i, j, -a * inv_sqrt[i] * inv_sqrt[j]));
        }
    }
    SparseSymmetricMatrix::from_triplets(n, entries)
}

/// Lifts item-only features to all nodes. Item rows are copied; each user row
/// is the mean of the features of the items that user is adjacent to.
pub fn propagate_features(g: &BipartiteGraph, item_features: ArrayView2<f64>) -> Result<Array2<f64>> {
    if item_features.nrows() != g.n_items {
        return Err(SsrError::shape(
            "propagate_features rows",
            g.n_items,
            item_features.nrows(),
        ));
    }
    let d = item_features.ncols();
    let mut out = Array2::zeros((g.n_nodes(), d));
    for u in 0..g.n_users {
        let mut row = out.row_mut(u);
        let mut count = 0usize;
        for v in g.user_items(u) {
            row += &item_features.row(v);
            count += 1;
        }
        if count > 0 {
            row /= count as f64;
        }
    }
    out.slice_mut(ndarray::s![g.n_users.., ..]).assign(&item_features);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn table(pairs: &[(usize, usize)]) -> InteractionTable {
        InteractionTable::new(
            pairs
                .iter()
                .enumerate()
                .map(|(t, &(user, item))| Interaction {
                    user,
                    item,
                    timestamp: t as i64,
                })
                .collect(),
        )
    }

    #[test]
    fn smallest_graph() {
        let g = build_graph(&table(&[(0, 0)]), 1, 1).unwrap();
        assert_eq!(g.n_nodes(), 2);
        assert_eq!(g.adjacency.get(0, 1), 1.0);
        assert_eq!(g.adjacency.get(1, 0), 1.0);
        assert_eq!(g.degrees, vec![1.0, 1.0]);
    }

    #[test]
    fn duplicate_records_collapse() {
        let g = build_graph(&table(&[(0, 0), (0, 0), (0, 1)]), 1, 2).unwrap();
        assert_eq!(g.degrees, vec![2.0, 1.0, 1.0]);
    }

    #[test]
    fn dedup_keeps_earliest_timestamp() {
        let t = InteractionTable::new(vec![
            Interaction { user: 0, item: 0, timestamp: 9 },
            Interaction { user: 0, item: 1, timestamp: 5 },
            Interaction { user: 0, item: 0, timestamp: 3 },
        ]);
        let d = t.deduplicated();
        assert_eq!(d.records.len(), 2);
        assert_eq!(d.records[0].item, 1);
        assert_eq!(d.records[1].timestamp, 3);
    }

    #[test]
    fn rejects_out_of_range_and_empty() {
        match build_graph(&table(&[(0, 0), (0, 3)]), 1, 2) {
            Err(SsrError::InvalidRecord { index, .. }) => assert_eq!(index, 1),
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(
            build_graph(&InteractionTable::default(), 1, 1),
            Err(SsrError::EmptyTable)
        ));
    }

    #[test]
    fn laplacian_of_single_edge() {
        let g = build_graph(&table(&[(0, 0)]), 1, 1).unwrap();
        let l = normalized_laplacian(&g).unwrap().to_dense();
        assert_eq!(l, array![[1.0, -1.0], [-1.0, 1.0]]);
    }

    #[test]
    fn laplacian_of_star() {
        // one item shared by two users
        let g = build_graph(&table(&[(0, 0), (1, 0)]), 2, 1).unwrap();
        let l = normalized_laplacian(&g).unwrap();
        let off = -1.0 / 2f64.sqrt();
        assert!((l.get(0, 2) - off).abs() < 1e-15);
        assert!((l.get(1, 2) - off).abs() < 1e-15);
        assert_eq!(l.get(0, 1), 0.0);
        for i in 0..3 {
            assert_eq!(l.get(i, i), 1.0);
        }
    }

    #[test]
    fn laplacian_rejects_isolated() {
        let g = build_graph(&table(&[(0, 0)]), 2, 2).unwrap();
        match normalized_laplacian(&g) {
            Err(SsrError::IsolatedNodes(ids)) => assert_eq!(ids, vec![1, 3]),
            other => panic!("unexpected {other:?}"),
        }
    }

    fn random_graph(rng: &mut ChaCha8Rng, n_users: usize, n_items: usize) -> BipartiteGraph {
        let mut pairs = Vec::new();
        for u in 0..n_users {
            pairs.push((u, u % n_items));
        }
        for v in 0..n_items {
            pairs.push((v % n_users, v));
        }
        for _ in 0..(n_users * n_items / 3) {
            pairs.push((rng.random_range(0..n_users), rng.random_range(0..n_items)));
        }
        build_graph(&table(&pairs), n_users, n_items).unwrap()
    }

    #[test]
    fn laplacian_is_psd_with_known_kernel() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..5 {
            let g = random_graph(&mut rng, 6, 9);
            let l = normalized_laplacian(&g).unwrap();
            for _ in 0..100 {
                let x: Array1<f64> = (0..g.n_nodes()).map(|_| rng.random_range(-1.0..1.0)).collect();
                assert!(x.dot(&l.matvec(x.view())) >= -1e-9);
            }
            let s: Array1<f64> = g.degrees.iter().map(|d| d.sqrt()).collect();
            let r = l.matvec(s.view());
            assert!(r.dot(&r).sqrt() <= 1e-9 * s.dot(&s).sqrt());
        }
    }

    #[test]
    fn relabeling_users_permutes_laplacian() {
        let pairs = [(0, 0), (1, 0), (1, 1), (2, 1), (2, 0)];
        let g = build_graph(&table(&pairs), 3, 2).unwrap();
        let perm = [2usize, 0, 1];
        let relabeled: Vec<_> = pairs.iter().map(|&(u, v)| (perm[u], v)).collect();
        let h = build_graph(&table(&relabeled), 3, 2).unwrap();
        let (lg, lh) = (
            normalized_laplacian(&g).unwrap(),
            normalized_laplacian(&h).unwrap(),
        );
        let node = |i: usize| if i < 3 { perm[i] } else { i };
        for i in 0..5 {
            for j in 0..5 {
                assert!((lg.get(i, j) - lh.get(node(i), node(j))).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn propagation_averages_neighbours() {
        let g = build_graph(&table(&[(0, 0), (0, 1), (1, 1)]), 2, 2).unwrap();
        let f = array![[1.0, 0.0], [0.0, 1.0]];
        let out = propagate_features(&g, f.view()).unwrap();
        assert_eq!(out.row(0), array![0.5, 0.5]);
        assert_eq!(out.row(1), array![0.0, 1.0]);
        assert_eq!(out.slice(ndarray::s![2.., ..]), f);
        let zeros = propagate_features(&g, Array2::zeros((2, 3)).view()).unwrap();
        assert!(zeros.iter().all(|&v| v == 0.0));
        assert!(propagate_features(&g, Array2::zeros((3, 2)).view()).is_err());
    }

    #[test]
    fn standardized_log_degree_is_centered() {
        let g = build_graph(&table(&[(0, 0), (0, 1), (1, 1)]), 2, 2).unwrap();
        let d = g.standardized_log_degree();
        assert!(d.sum().abs() < 1e-12);
        assert!((d.mapv(|v| v * v).sum() / 4.0 - 1.0).abs() < 1e-12);
    }
}
