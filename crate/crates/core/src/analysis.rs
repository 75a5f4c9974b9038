//! Order-consistency analysis of review aspect orders.
//!
//! Two distinct-aspect orders are compared with a graded NDCG: taking `A` as
//! the ideal ranking, the aspect at A-position `j` (1-based) has relevance
//! `|A| - j + 1` and aspects outside `A` have relevance 0; `B` is scored as a
//! ranking under those relevances and normalized by the DCG of `A`. The score
//! is averaged over both directions.
//!
//! For each entity, intra-consistency averages sampled pairs of its own
//! reviews and inter-consistency averages sampled pairs of one of its reviews
//! with a review of another entity; `dis = intra - inter`.

use std::collections::HashMap;
use std::fmt::Write as _;

use rand::Rng;

use crate::aspect_stats::Side;
use crate::corpus::{AspectId, Corpus};
use crate::error::{Error, Result};
use crate::eval::dcg_at_k;
use crate::par::Exec;
use crate::seed;

fn directed(ideal: &[AspectId], ranked: &[AspectId]) -> f64 {
    let rel: HashMap<AspectId, f64> = ideal
        .iter()
        .enumerate()
        .map(|(j, &k)| (k, (ideal.len() - j) as f64))
        .collect();
    let gains: Vec<f64> = ranked.iter().map(|k| rel.get(k).copied().unwrap_or(0.0)).collect();
    let best: Vec<f64> = (1..=ideal.len()).rev().map(|r| r as f64).collect();
    dcg_at_k(&gains, usize::MAX) / dcg_at_k(&best, usize::MAX)
}

/// Symmetric order consistency in `[0, 1]`; `None` if either order is empty.
pub fn pair_consistency(a: &[AspectId], b: &[AspectId]) -> Option<f64> {
    if a.is_empty() || b.is_empty() {
        return None;
    }
    Some((directed(a, b) + directed(b, a)) / 2.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConsistencyRecord {
    pub entity: usize,
    pub intra: f64,
    pub inter: f64,
    pub dis: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConsistencyReport {
    pub side: Side,
    pub records: Vec<ConsistencyRecord>,
    pub intra_pairs: usize,
    pub inter_pairs: usize,
}

/// Thresholds of the CDF table: -1.00, -0.95, ..., 1.00.
pub fn cdf_grid() -> Vec<f64> {
    (0..=40).map(|i| -1.0 + i as f64 * 0.05).collect()
}

impl ConsistencyReport {
    pub fn positive_fraction(&self) -> f64 {
        if self.records.is_empty() {
            return 0.0;
        }
        self.records.iter().filter(|r| r.dis > 0.0).count() as f64 / self.records.len() as f64
    }

    pub fn mean_dis(&self) -> f64 {
        if self.records.is_empty() {
            return 0.0;
        }
        self.records.iter().map(|r| r.dis).sum::<f64>() / self.records.len() as f64
    }

    /// Fraction of records with `dis <= threshold`, on [`cdf_grid`].
    pub fn cdf(&self) -> Vec<(f64, f64)> {
        let mut dis: Vec<f64> = self.records.iter().map(|r| r.dis).collect();
        dis.sort_by(f64::total_cmp);
        let n = dis.len().max(1) as f64;
        cdf_grid()
            .into_iter()
            .map(|t| {
                let below = dis.partition_point(|&d| d <= t + 1e-12);
                (t, below as f64 / n)
            })
            .collect()
    }

    pub fn cdf_csv(&self) -> String {
        let mut out = String::from("dis_threshold,cumulative_fraction\n");
        for (t, f) in self.cdf() {
            let _ = writeln!(out, "{t:.2},{f}");
        }
        out
    }

    pub fn records_csv(&self, corpus: &Corpus) -> String {
        let names = match self.side {
            Side::User => &corpus.users,
            Side::Item => &corpus.items,
        };
        let mut out = format!("{}_id,intra_cons,inter_cons,consistency_dis\n", self.side.name());
        for r in &self.records {
            let _ = writeln!(out, "{},{},{},{}", names[r.entity], r.intra, r.inter, r.dis);
        }
        out
    }
}

/// Samples `n_pairs` intra-entity and `n_pairs` inter-entity review pairs.
///
/// Intra pairs pick an entity with probability proportional to `C(r, 2)`
/// (`r` = its reviews with aspects) and then two of its reviews uniformly.
/// Inter pairs pick two reviews uniformly from different entities; the score
/// counts towards both. Entities with both kinds of samples get a record.
pub fn consistency_distribution(
    corpus: &Corpus,
    side: Side,
    n_pairs: usize,
    seed_value: u64,
    exec: Exec,
) -> Result<ConsistencyReport> {
    if n_pairs == 0 {
        return Err(Error::invalid("n_pairs must be positive"));
    }
    let entity_of = |r: &crate::corpus::Review| match side {
        Side::User => r.user,
        Side::Item => r.item,
    };
    let entities = match side {
        Side::User => corpus.num_users(),
        Side::Item => corpus.num_items(),
    };
    let mut orders: Vec<Vec<AspectId>> = Vec::new();
    let mut owner: Vec<usize> = Vec::new();
    let mut by_entity: Vec<Vec<usize>> = vec![Vec::new(); entities];
    for r in &corpus.reviews {
        let o = r.distinct_order();
        if o.is_empty() {
            continue;
        }
        by_entity[entity_of(r)].push(orders.len());
        owner.push(entity_of(r));
        orders.push(o);
    }
    let eligible: Vec<usize> = (0..entities).filter(|&e| by_entity[e].len() >= 2).collect();
    let active = by_entity.iter().filter(|v| !v.is_empty()).count();
    if eligible.is_empty() || active < 2 {
        return Err(Error::invalid(format!(
            "need an entity with two reviews and two active entities (have {} and {active}, {} reviews)",
            eligible.len(),
            orders.len()
        )));
    }

    let mut cumulative = Vec::with_capacity(eligible.len());
    let mut total = 0.0;
    for &e in &eligible {
        let r = by_entity[e].len() as f64;
        total += r * (r - 1.0) / 2.0;
        cumulative.push(total);
    }

    let mut rng = seed::rng(seed::stage(seed_value, "consistency"));
    let mut intra_pairs = Vec::with_capacity(n_pairs);
    for _ in 0..n_pairs {
        let draw = rng.random::<f64>() * total;
        let e = eligible[cumulative.partition_point(|&c| c <= draw).min(eligible.len() - 1)];
        let reviews = &by_entity[e];
        let a = rng.random_range(0..reviews.len());
        let mut b = rng.random_range(0..reviews.len() - 1);
        if b >= a {
            b += 1;
        }
        intra_pairs.push((reviews[a], reviews[b]));
    }
    let mut inter_pairs = Vec::with_capacity(n_pairs);
    while inter_pairs.len() < n_pairs {
        let a = rng.random_range(0..orders.len());
        let b = rng.random_range(0..orders.len());
        if owner[a] != owner[b] {
            inter_pairs.push((a, b));
        }
    }

    let score = |&(a, b): &(usize, usize)| pair_consistency(&orders[a], &orders[b]).unwrap_or(0.0);
    let intra_scores = exec.map(&intra_pairs, score);
    let inter_scores = exec.map(&inter_pairs, score);

    let mut intra = vec![(0.0, 0usize); entities];
    let mut inter = vec![(0.0, 0usize); entities];
    for (&(a, _), s) in intra_pairs.iter().zip(&intra_scores) {
        let acc = &mut intra[owner[a]];
        acc.0 += s;
        acc.1 += 1;
    }
    for (&(a, b), s) in inter_pairs.iter().zip(&inter_scores) {
        for e in [owner[a], owner[b]] {
            inter[e].0 += s;
            inter[e].1 += 1;
        }
    }
    let records = (0..entities)
        .filter(|&e| intra[e].1 > 0 && inter[e].1 > 0)
        .map(|e| {
            let i = intra[e].0 / intra[e].1 as f64;
            let o = inter[e].0 / inter[e].1 as f64;
            ConsistencyRecord {
                entity: e,
                intra: i,
                inter: o,
                dis: i - o,
            }
        })
        .collect();
    Ok(ConsistencyReport {
        side,
        records,
        intra_pairs: n_pairs,
        inter_pairs: n_pairs,
    })
}
