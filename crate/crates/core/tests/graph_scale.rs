use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use ssr_core::graph::{build_graph, isolated_nodes, normalized_laplacian, Interaction, InteractionTable};
use ssr_core::io::{load_interactions, save_interactions};

const USERS: usize = 19_445;
const ITEMS: usize = 7_050;
const INTERACTIONS: usize = 139_110;

/// Distinct pairs covering every user and item.
fn baby_sized_table() -> InteractionTable {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut pairs = BTreeSet::new();
    for u in 0..USERS {
        pairs.insert((u, u % ITEMS));
    }
    while pairs.len() < INTERACTIONS {
        pairs.insert((rng.random_range(0..USERS), rng.random_range(0..ITEMS)));
    }
    let records = pairs
        .into_iter()
        .enumerate()
        .map(|(t, (user, item))| Interaction { user, item, timestamp: t as i64 })
        .collect();
    InteractionTable::new(records)
}

#[test]
fn baby_sized_log_loads_to_expected_node_count() {
    let table = baby_sized_table();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("baby.tsv");
    save_interactions(&path, &table).unwrap();
    let loaded = load_interactions(&path).unwrap();
    assert_eq!((loaded.n_users, loaded.n_items), (USERS, ITEMS));
    assert_eq!(loaded.table.len(), INTERACTIONS);

    let g = build_graph(&loaded.table, loaded.n_users, loaded.n_items).unwrap();
    assert_eq!(g.n_nodes(), 26_495);
    assert_eq!(g.degrees.iter().sum::<f64>(), 2.0 * INTERACTIONS as f64);
    assert!(isolated_nodes(&g).is_empty());

    let l = normalized_laplacian(&g).unwrap();
    assert_eq!(l.n(), 26_495);
    for i in 0..l.n() {
        let (cols, vals) = l.row(i);
        let d = cols.iter().position(|&j| j == i).expect("diagonal stored");
        assert_eq!(vals[d], 1.0);
    }
}
