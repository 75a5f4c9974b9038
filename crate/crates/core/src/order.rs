//! Per-interaction aspect orders.
//!
//! The user-tree path and the item-tree path are merged by averaging each
//! aspect's 1-based index in both paths (an aspect missing from a path takes
//! index `len + 1`), sorted ascending with ties to the lower aspect id,
//! truncated to `e` and padded to exactly `e` with seeded random aspects.

use std::collections::{BTreeSet, HashMap};
use std::fmt::Write as _;

use rand::Rng;

use crate::corpus::{AspectId, Corpus, ItemId, UserId};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Provenance {
    Tree,
    Pad,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AspectOrder {
    pub ids: Vec<AspectId>,
    pub provenance: Vec<Provenance>,
}

impl AspectOrder {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// `a3>a1>a7*` with pad positions starred.
    pub fn explanation(&self, aspect_names: Option<&[String]>) -> String {
        let mut out = String::new();
        for (t, (&k, p)) in self.ids.iter().zip(&self.provenance).enumerate() {
            if t > 0 {
                out.push('>');
            }
            match aspect_names.and_then(|n| n.get(k)) {
                Some(name) => out.push_str(name),
                None => {
                    let _ = write!(out, "a{k}");
                }
            }
            if *p == Provenance::Pad {
                out.push('*');
            }
        }
        out
    }
}

/// Merged order of two tree paths, with each aspect's averaged index.
pub fn combine_orders_ranked(user_path: &[AspectId], item_path: &[AspectId]) -> Vec<(AspectId, f64)> {
    let index_in = |path: &[AspectId]| -> HashMap<AspectId, usize> {
        let mut idx = HashMap::new();
        for (pos, &k) in path.iter().enumerate() {
            idx.entry(k).or_insert(pos + 1);
        }
        idx
    };
    let (up, ip) = (index_in(user_path), index_in(item_path));
    let union: BTreeSet<AspectId> = user_path.iter().chain(item_path).copied().collect();
    let mut ranked: Vec<(AspectId, f64)> = union
        .into_iter()
        .map(|k| {
            let u = up.get(&k).copied().unwrap_or(user_path.len() + 1);
            let i = ip.get(&k).copied().unwrap_or(item_path.len() + 1);
            (k, (u + i) as f64 / 2.0)
        })
        .collect();
    ranked.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    ranked
}

pub fn combine_orders(user_path: &[AspectId], item_path: &[AspectId]) -> Vec<AspectId> {
    combine_orders_ranked(user_path, item_path)
        .into_iter()
        .map(|(k, _)| k)
        .collect()
}

/// Truncates `tp` to `len` and fills the remaining slots with random aspects
/// drawn without replacement from those not yet present, then uniformly from
/// all `aspects` once that pool is exhausted.
pub fn pad_order(tp: &[AspectId], len: usize, aspects: usize, seed_value: u64) -> AspectOrder {
    let mut ids: Vec<AspectId> = tp.iter().copied().take(len).collect();
    let mut provenance = vec![Provenance::Tree; ids.len()];
    if ids.len() < len && aspects > 0 {
        let mut rng = seed::rng(seed_value);
        let present: BTreeSet<AspectId> = ids.iter().copied().collect();
        let mut pool: Vec<AspectId> = (0..aspects).filter(|k| !present.contains(k)).collect();
        while ids.len() < len {
            let k = if pool.is_empty() {
                rng.random_range(0..aspects)
            } else {
                pool.swap_remove(rng.random_range(0..pool.len()))
            };
            ids.push(k);
            provenance.push(Provenance::Pad);
        }
    }
    AspectOrder { ids, provenance }
}

/// Per-interaction padding seed.
pub fn interaction_seed(global: u64, user: UserId, item: ItemId) -> u64 {
    seed::derive(global, &[user as u64, item as u64])
}

/// `values[t] = row[order.ids[t]]`.
pub fn importance_sequence(order: &AspectOrder, row: &[f64]) -> Vec<f64> {
    order.ids.iter().map(|&k| row[k]).collect()
}

/// A fully random order of length `len`, used when tree orders are ablated.
pub fn random_order(len: usize, aspects: usize, seed_value: u64) -> AspectOrder {
    let mut order = pad_order(&[], len, aspects, seed_value);
    order.provenance.fill(Provenance::Pad);
    order
}

/// `user \t item \t a3>a1>a7*` lines.
pub fn explanation_lines<'a>(
    corpus: &Corpus,
    orders: impl IntoIterator<Item = (UserId, ItemId, &'a AspectOrder)>,
) -> String {
    let mut out = String::new();
    for (u, i, order) in orders {
        let _ = writeln!(out, "{}\t{}\t{}", corpus.users[u], corpus.items[i], order.explanation(None));
    }
    out
}
