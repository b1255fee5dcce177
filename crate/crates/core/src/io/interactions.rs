use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crate::error::{Result, SsrError};
use crate::graph::{Interaction, InteractionTable};

/// An interaction log with dense indices. When the file used non-numeric
/// ids, `user_ids[i]` / `item_ids[j]` hold the raw id of index `i` / `j`.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadedInteractions {
    pub table: InteractionTable,
    pub n_users: usize,
    pub n_items: usize,
    pub user_ids: Option<Vec<String>>,
    pub item_ids: Option<Vec<String>>,
}

fn split_fields(line: &str) -> Vec<&str> {
    if line.contains('\t') {
        line.split('\t').map(str::trim).collect()
    } else if line.contains(',') {
        line.split(',').map(str::trim).collect()
    } else {
        line.split_whitespace().collect()
    }
}

/// Index per raw id: integers map to themselves, anything else to its rank
/// among the sorted distinct ids.
fn index_ids(raw: &[&str]) -> (Vec<usize>, usize, Option<Vec<String>>) {
    let numeric: Option<Vec<usize>> = raw.iter().map(|s| s.parse::<usize>().ok()).collect();
    match numeric {
        Some(ids) => {
            let n = ids.iter().max().map_or(0, |m| m + 1);
            (ids, n, None)
        }
        None => {
            let sorted: BTreeMap<&str, usize> = raw.iter().map(|&s| (s, 0)).collect();
            let names: Vec<String> = sorted.keys().map(|s| s.to_string()).collect();
            let index: BTreeMap<&str, usize> = sorted.keys().enumerate().map(|(i, &s)| (s, i)).collect();
            (raw.iter().map(|s| index[s]).collect(), names.len(), Some(names))
        }
    }
}

/// Parses `user item timestamp` rows separated by tabs, commas or spaces.
/// A first line whose timestamp field is not an integer is a header. Blank
/// lines and lines starting with `#` are skipped.
pub fn parse_interactions(text: &str, path: &Path) -> Result<LoadedInteractions> {
    let mut users = Vec::new();
    let mut items = Vec::new();
    let mut stamps = Vec::new();
    let mut offset = 0usize;
    let mut first = true;
    for line in text.split_inclusive('\n') {
        let start = offset;
        offset += line.len();
        let body = line.trim();
        if body.is_empty() || body.starts_with('#') {
            continue;
        }
        let fields = split_fields(body);
        if fields.len() != 3 {
            return Err(SsrError::Format {
                path: path.display().to_string(),
                offset: start as u64,
                reason: format!("expected 3 fields, found {}", fields.len()),
            });
        }
        let ts = fields[2].parse::<i64>();
        if first {
            first = false;
            if ts.is_err() {
                continue;
            }
        }
        let ts = ts.map_err(|_| SsrError::Format {
            path: path.display().to_string(),
            offset: start as u64,
            reason: format!("timestamp {:?} is not an integer", fields[2]),
        })?;
        if ts < 0 {
            return Err(SsrError::InvalidRecord { index: stamps.len(), reason: format!("negative timestamp {ts}") });
        }
        users.push(fields[0]);
        items.push(fields[1]);
        stamps.push(ts);
    }
    if stamps.is_empty() {
        return Err(SsrError::EmptyTable);
    }
    let (u_idx, n_users, user_ids) = index_ids(&users);
    let (i_idx, n_items, item_ids) = index_ids(&items);
    let records = u_idx
        .into_iter()
        .zip(i_idx)
        .zip(stamps)
        .map(|((user, item), timestamp)| Interaction { user, item, timestamp })
        .collect();
    Ok(LoadedInteractions { table: InteractionTable::new(records), n_users, n_items, user_ids, item_ids })
}

pub fn load_interactions(path: &Path) -> Result<LoadedInteractions> {
    let text = fs::read_to_string(path).map_err(|e| SsrError::io(path, e))?;
    parse_interactions(&text, path)
}

/// Tab-separated with a `user\titem\ttimestamp` header.
pub fn save_interactions(path: &Path, table: &InteractionTable) -> Result<()> {
    let mut out = String::from("user\titem\ttimestamp\n");
    for r in &table.records {
        out.push_str(&format!("{}\t{}\t{}\n", r.user, r.item, r.timestamp));
    }
    fs::write(path, out).map_err(|e| SsrError::io(path, e))
}

/// One raw id per line, in index order.
pub fn save_id_map(path: &Path, ids: &[String]) -> Result<()> {
    let mut out = String::from("index\tid\n");
    for (i, id) in ids.iter().enumerate() {
        out.push_str(&format!("{i}\t{id}\n"));
    }
    fs::write(path, out).map_err(|e| SsrError::io(path, e))
}
