//! Rating, ranking and explanation metrics, sensitive-user identification
//! and the order-perturbation ablations.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::corpus::{AspectId, Corpus, ItemId, UserId};
use crate::error::{Error, Result};
use crate::model::{mse_loss, Ablation, Interaction, Predictor};
use crate::order::{AspectOrder, Provenance};
use crate::par::Exec;
use crate::pipeline::Encoder;
use crate::seed;

/// Default cutoff for every `@K` metric.
pub const DEFAULT_K: usize = 5;

pub fn mse_eval(model: &Predictor, data: &[Interaction], exec: Exec) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::invalid("cannot evaluate an empty split"));
    }
    let preds = model.predict_all(data, exec)?;
    let truths: Vec<f64> = data.iter().map(|x| x.rating).collect();
    mse_loss(&preds, &truths)
}

/// `sum_{j<K} (2^rel_j - 1) / log2(j + 2)` over the list as given.
pub fn dcg_at_k(relevance: &[f64], k: usize) -> f64 {
    relevance
        .iter()
        .take(k)
        .enumerate()
        .map(|(j, &rel)| (2f64.powf(rel) - 1.0) / ((j + 2) as f64).log2())
        .sum()
}

/// DCG normalized by the DCG of the same relevances sorted descending; zero
/// when that ideal DCG is zero.
pub fn ndcg_at_k(relevance: &[f64], k: usize) -> f64 {
    let mut ideal = relevance.to_vec();
    ideal.sort_by(|a, b| b.total_cmp(a));
    let idcg = dcg_at_k(&ideal, k);
    if idcg == 0.0 {
        0.0
    } else {
        dcg_at_k(relevance, k) / idcg
    }
}

/// Mean per-user NDCG@K of the items in `data`, ranked by predicted rating
/// (ties to the lower item id) with the true rating as relevance. Users with
/// fewer than two interactions have no ranking and are skipped.
pub fn ranking_ndcg(model: &Predictor, data: &[Interaction], k: usize, exec: Exec) -> Result<f64> {
    let preds = model.predict_all(data, exec)?;
    let mut by_user: BTreeMap<UserId, Vec<(ItemId, f64, f64)>> = BTreeMap::new();
    for (x, p) in data.iter().zip(preds) {
        by_user.entry(x.user).or_default().push((x.item, p, x.rating));
    }
    let lists: Vec<Vec<(ItemId, f64, f64)>> = by_user.into_values().filter(|v| v.len() >= 2).collect();
    if lists.is_empty() {
        return Err(Error::invalid("no user has two or more interactions to rank"));
    }
    let scores = exec.map(&lists, |items| {
        let mut ranked = items.clone();
        ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        let rel: Vec<f64> = ranked.iter().map(|r| r.2).collect();
        ndcg_at_k(&rel, k)
    });
    Ok(scores.iter().sum::<f64>() / scores.len() as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExplainRow {
    pub user: UserId,
    pub item: ItemId,
    pub overlap: usize,
    pub review_aspects: usize,
    pub num_pct: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub ndcg: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExplainReport {
    pub k: usize,
    pub num_pct: f64,
    pub ndcg: f64,
    pub f1: f64,
    pub precision: f64,
    pub recall: f64,
    /// Reviews without aspects, excluded from the means.
    pub skipped: usize,
    pub rows: Vec<ExplainRow>,
}

/// Scores one predicted order against a review's distinct aspect order.
pub fn explain_row(review_order: &[AspectId], predicted: &[AspectId], k: usize) -> Option<(usize, f64, f64, f64, f64, f64)> {
    if review_order.is_empty() || k == 0 {
        return None;
    }
    let truth: HashSet<AspectId> = review_order.iter().copied().collect();
    let prefix = &predicted[..k.min(predicted.len())];
    let shown: HashSet<AspectId> = prefix.iter().copied().collect();
    let overlap = shown.intersection(&truth).count();
    let num_pct = overlap as f64 / truth.len() as f64 * 100.0;
    let precision = overlap as f64 / k as f64;
    let recall = overlap as f64 / k.min(truth.len()) as f64;
    let f1 = if overlap == 0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    let hits: Vec<f64> = prefix
        .iter()
        .enumerate()
        .map(|(j, a)| if review_order.get(j) == Some(a) { 1.0 } else { 0.0 })
        .collect();
    let ideal = vec![1.0; k.min(review_order.len())];
    let ndcg = dcg_at_k(&hits, k) / dcg_at_k(&ideal, k);
    Some((overlap, num_pct, precision, recall, f1, ndcg))
}

/// An interaction with its distinct review order: `(user, item, order)`.
pub type Observed = (UserId, ItemId, Vec<AspectId>);

/// Explanation quality of predicted orders against the reviews they explain.
/// Each entry pairs `(user, item, distinct review order)` with the predicted
/// order for that interaction.
pub fn explain_metrics(pairs: &[(Observed, AspectOrder)], k: usize) -> Result<ExplainReport> {
    let mut rows = Vec::new();
    let mut skipped = 0;
    for ((user, item, truth), predicted) in pairs {
        match explain_row(truth, &predicted.ids, k) {
            Some((overlap, num_pct, precision, recall, f1, ndcg)) => rows.push(ExplainRow {
                user: *user,
                item: *item,
                overlap,
                review_aspects: truth.iter().collect::<HashSet<_>>().len(),
                num_pct,
                precision,
                recall,
                f1,
                ndcg,
            }),
            None => skipped += 1,
        }
    }
    if rows.is_empty() {
        return Err(Error::invalid("no review with aspects to explain"));
    }
    let n = rows.len() as f64;
    let mean = |f: fn(&ExplainRow) -> f64| rows.iter().map(f).sum::<f64>() / n;
    Ok(ExplainReport {
        k,
        num_pct: mean(|r| r.num_pct),
        ndcg: mean(|r| r.ndcg),
        f1: mean(|r| r.f1),
        precision: mean(|r| r.precision),
        recall: mean(|r| r.recall),
        skipped,
        rows,
    })
}

impl ExplainReport {
    pub fn summary_csv(&self) -> String {
        format!(
            "k,reviews,skipped,num_pct,ndcg,f1,precision,recall\n{},{},{},{},{},{},{},{}\n",
            self.k,
            self.rows.len(),
            self.skipped,
            self.num_pct,
            self.ndcg,
            self.f1,
            self.precision,
            self.recall
        )
    }

    pub fn rows_csv(&self, corpus: &Corpus) -> String {
        let mut out = String::from("user_id,item_id,overlap,review_aspects,num_pct,precision,recall,f1,ndcg\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{}",
                corpus.users[r.user],
                corpus.items[r.item],
                r.overlap,
                r.review_aspects,
                r.num_pct,
                r.precision,
                r.recall,
                r.f1,
                r.ndcg
            );
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SensitiveUsers {
    pub strong: Vec<UserId>,
    pub non_strong: Vec<UserId>,
    /// Mean squared error over all training interactions.
    pub threshold: f64,
}

impl SensitiveUsers {
    pub fn strong_fraction(&self) -> f64 {
        let total = self.strong.len() + self.non_strong.len();
        if total == 0 {
            0.0
        } else {
            self.strong.len() as f64 / total as f64
        }
    }
}

/// A user is strongly sensitive when every one of their training
/// interactions has a squared error strictly below the training mean.
pub fn identify_sensitive_users(model: &Predictor, train: &[Interaction], exec: Exec) -> Result<SensitiveUsers> {
    if train.is_empty() {
        return Err(Error::invalid("empty training split"));
    }
    let preds = model.predict_all(train, exec)?;
    let errors: Vec<f64> = train.iter().zip(&preds).map(|(x, p)| (p - x.rating).powi(2)).collect();
    let threshold = errors.iter().sum::<f64>() / errors.len() as f64;
    let mut all_below: BTreeMap<UserId, bool> = BTreeMap::new();
    for (x, e) in train.iter().zip(&errors) {
        let below = all_below.entry(x.user).or_insert(true);
        *below &= *e < threshold;
    }
    let (strong, non_strong): (Vec<_>, Vec<_>) = all_below.into_iter().partition(|&(_, s)| s);
    Ok(SensitiveUsers {
        strong: strong.into_iter().map(|(u, _)| u).collect(),
        non_strong: non_strong.into_iter().map(|(u, _)| u).collect(),
        threshold,
    })
}

/// Seeded uniform permutation of every position; provenance travels with ids.
pub fn perturb_shuffle(order: &AspectOrder, seed_value: u64) -> AspectOrder {
    let mut idx: Vec<usize> = (0..order.len()).collect();
    idx.shuffle(&mut seed::rng(seed_value));
    AspectOrder {
        ids: idx.iter().map(|&i| order.ids[i]).collect(),
        provenance: idx.iter().map(|&i| order.provenance[i]).collect(),
    }
}

/// Positions replaced by [`perturb_top5`].
pub const TOP_PERTURBED: usize = 5;

/// Replaces the first five positions with random aspects outside the original
/// first five (drawn without replacement, then with repeats); with no such
/// aspect left it draws uniformly from all `aspects`.
pub fn perturb_top5(order: &AspectOrder, aspects: usize, seed_value: u64) -> Result<AspectOrder> {
    if order.len() < TOP_PERTURBED {
        return Err(Error::invalid(format!(
            "top-{TOP_PERTURBED} perturbation needs orders of length >= {TOP_PERTURBED}, got {}",
            order.len()
        )));
    }
    if aspects == 0 {
        return Err(Error::invalid("no aspects to draw from"));
    }
    let original: BTreeSet<AspectId> = order.ids[..TOP_PERTURBED].iter().copied().collect();
    let outside: Vec<AspectId> = (0..aspects).filter(|k| !original.contains(k)).collect();
    let mut rng = seed::rng(seed_value);
    let mut pool = outside.clone();
    let mut out = order.clone();
    for t in 0..TOP_PERTURBED {
        out.ids[t] = if !pool.is_empty() {
            pool.swap_remove(rng.random_range(0..pool.len()))
        } else if !outside.is_empty() {
            outside[rng.random_range(0..outside.len())]
        } else {
            rng.random_range(0..aspects)
        };
        out.provenance[t] = Provenance::Pad;
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PerturbMode {
    Basic,
    Shuffle,
    Top5,
}

impl PerturbMode {
    pub const ALL: [PerturbMode; 3] = [PerturbMode::Basic, PerturbMode::Shuffle, PerturbMode::Top5];

    pub fn name(self) -> &'static str {
        match self {
            PerturbMode::Basic => "basic",
            PerturbMode::Shuffle => "shuffle",
            PerturbMode::Top5 => "top5",
        }
    }
}

impl std::str::FromStr for PerturbMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        PerturbMode::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown perturbation `{s}`")))
    }
}

/// Interactions of `users` in `split`, encoded along their (possibly
/// perturbed) order with importance sequences recomputed from that order.
pub fn perturbed_interactions(
    encoder: &Encoder,
    split: &Corpus,
    ablation: Ablation,
    mode: PerturbMode,
    users: &[UserId],
    seed_value: u64,
) -> Result<Vec<Interaction>> {
    let keep: HashSet<UserId> = users.iter().copied().collect();
    let base = seed::stage(seed_value, mode.name());
    split
        .reviews
        .iter()
        .filter(|r| keep.contains(&r.user))
        .map(|r| {
            let order = encoder.order_for(r.user, r.item, ablation)?;
            let s = seed::derive(base, &[r.user as u64, r.item as u64]);
            let order = match mode {
                PerturbMode::Basic => order,
                PerturbMode::Shuffle => perturb_shuffle(&order, s),
                PerturbMode::Top5 => perturb_top5(&order, encoder.aspects(), s)?,
            };
            Ok(encoder.interaction_with_order(r.user, r.item, r.rating, &order))
        })
        .collect()
}

/// MSE on the interactions of `users` in `split` after perturbing orders.
#[allow(clippy::too_many_arguments)]
pub fn ablation_eval(
    model: &Predictor,
    encoder: &Encoder,
    split: &Corpus,
    ablation: Ablation,
    mode: PerturbMode,
    users: &[UserId],
    seed_value: u64,
    exec: Exec,
) -> Result<f64> {
    if users.is_empty() {
        return Err(Error::invalid("empty user set"));
    }
    let data = perturbed_interactions(encoder, split, ablation, mode, users, seed_value)?;
    if data.is_empty() {
        return Err(Error::invalid("selected users have no interactions in this split"));
    }
    mse_eval(model, &data, exec)
}

/// Two-sided paired sign-flip permutation test on `a - b`; returns the
/// p-value with the usual +1 correction.
pub fn permutation_test(a: &[f64], b: &[f64], rounds: usize, seed_value: u64) -> Result<f64> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::invalid("permutation test needs two equal-length, non-empty samples"));
    }
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let observed = diffs.iter().sum::<f64>().abs();
    let mut rng = seed::rng(seed_value);
    let extreme = (0..rounds)
        .filter(|_| {
            let s: f64 = diffs
                .iter()
                .map(|&d| if rng.random::<bool>() { d } else { -d })
                .sum();
            s.abs() >= observed - 1e-12
        })
        .count();
    Ok((extreme + 1) as f64 / (rounds + 1) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Dims, Group, Params, Variant};

    #[test]
    fn ndcg_examples() {
        assert!((ndcg_at_k(&[3.0, 2.0, 1.0], 3) - 1.0).abs() < 1e-15);
        assert_eq!(ndcg_at_k(&[0.0, 0.0], 2), 0.0);
        let v = ndcg_at_k(&[0.0, 1.0], 2);
        assert!((v - 1.0 / 3f64.log2()).abs() < 1e-12);
        assert!((v - 0.6309).abs() < 1e-4);
    }

    #[test]
    fn explain_examples() {
        let (overlap, num, p, r, f1, ndcg) = explain_row(&[1, 2], &[1, 9, 9, 9, 9], 5).unwrap();
        assert_eq!(overlap, 1);
        assert!((num - 50.0).abs() < 1e-12);
        assert!((p - 0.2).abs() < 1e-12 && (r - 0.5).abs() < 1e-12);
        assert!((f1 - 2.0 / 7.0).abs() < 1e-12);
        assert!((f1 - 0.2857).abs() < 1e-4);
        let ideal = 1.0 + 1.0 / 3f64.log2();
        assert!((ndcg - 1.0 / ideal).abs() < 1e-12);

        let perfect = explain_row(&[4, 3, 2, 1, 0], &[4, 3, 2, 1, 0, 7], 5).unwrap();
        assert_eq!((perfect.1, perfect.4, perfect.5), (100.0, 1.0, 1.0));
        let disjoint = explain_row(&[1, 2], &[3, 4, 5, 6, 7], 5).unwrap();
        assert_eq!((disjoint.1, disjoint.4, disjoint.5), (0.0, 0.0, 0.0));
        assert!(explain_row(&[], &[1, 2, 3, 4, 5], 5).is_none());
    }

    #[test]
    fn explain_report_skips_empty_reviews() {
        let order = AspectOrder {
            ids: vec![0, 1, 2, 3, 4],
            provenance: vec![Provenance::Tree; 5],
        };
        let pairs = vec![((0, 0, vec![0, 1]), order.clone()), ((0, 1, vec![]), order)];
        let report = explain_metrics(&pairs, 5).unwrap();
        assert_eq!((report.rows.len(), report.skipped), (1, 1));
        assert_eq!(report.num_pct, 100.0);
    }

    fn order(ids: Vec<usize>) -> AspectOrder {
        let n = ids.len();
        AspectOrder {
            ids,
            provenance: vec![Provenance::Tree; n],
        }
    }

    #[test]
    fn shuffle_is_a_permutation() {
        let o = order(vec![4, 1, 7, 7, 2, 9]);
        let s = perturb_shuffle(&o, 3);
        let (mut a, mut b) = (o.ids.clone(), s.ids.clone());
        a.sort_unstable();
        b.sort_unstable();
        assert_eq!(a, b);
        assert_eq!(s, perturb_shuffle(&o, 3));
        assert_eq!(perturb_shuffle(&order(vec![5]), 1), order(vec![5]));
    }

    #[test]
    fn top5_replaces_only_the_prefix() {
        let o = order(vec![0, 1, 2, 3, 4, 5, 6]);
        let p = perturb_top5(&o, 12, 8).unwrap();
        assert_eq!(p.ids[5..], o.ids[5..]);
        assert!(p.ids[..5].iter().all(|k| !o.ids[..5].contains(k)));
        let distinct: BTreeSet<_> = p.ids[..5].iter().collect();
        assert_eq!(distinct.len(), 5);
        assert!(p.provenance[..5].iter().all(|&v| v == Provenance::Pad));
        // Only five aspects exist: fall back to uniform draws over all of them.
        let tight = perturb_top5(&order(vec![0, 1, 2, 3, 4]), 5, 1).unwrap();
        assert!(tight.ids.iter().all(|&k| k < 5));
        assert!(perturb_top5(&order(vec![0, 1, 2, 3]), 9, 1).is_err());
    }

    fn bias_model(users: usize) -> Predictor {
        let dims = Dims {
            aspects: 2,
            seq_len: 1,
            latent: 2,
            users,
            items: 1,
        };
        let mut p = Params::zeros(dims);
        p.get_mut(Group::GlobalBias)[0] = 3.0;
        Predictor::new(p, Variant::default())
    }

    fn x(user: usize, rating: f64) -> Interaction {
        Interaction {
            user,
            item: 0,
            rating,
            ids: vec![0],
            useq: vec![1.0],
            iseq: vec![1.0],
        }
    }

    #[test]
    fn constant_predictor_mse_is_variance() {
        let data: Vec<Interaction> = [1.0, 2.5, 4.0, 5.0].iter().map(|&r| x(0, r)).collect();
        let mean = 3.125;
        let mut model = bias_model(1);
        model.params.get_mut(Group::GlobalBias)[0] = mean;
        let var = data.iter().map(|d| (d.rating - mean).powi(2)).sum::<f64>() / 4.0;
        assert!((mse_eval(&model, &data, Exec::Sequential).unwrap() - var).abs() < 1e-12);
        assert!(mse_eval(&model, &[], Exec::Sequential).is_err());
    }

    #[test]
    fn sensitivity_is_strict() {
        // Errors: user 0 -> 0, user 1 -> {0, 0, 4}; mean 1.
        let data = vec![x(0, 3.0), x(1, 3.0), x(1, 3.0), x(1, 5.0)];
        let s = identify_sensitive_users(&bias_model(2), &data, Exec::Sequential).unwrap();
        assert_eq!(s.strong, vec![0]);
        assert_eq!(s.non_strong, vec![1]);
        assert_eq!(s.strong_fraction(), 0.5);
    }

    #[test]
    fn permutation_test_detects_shift() {
        let a: Vec<f64> = (0..40).map(|i| 1.0 + (i % 3) as f64 * 0.01).collect();
        let b: Vec<f64> = a.iter().map(|v| v - 0.5).collect();
        assert!(permutation_test(&a, &b, 999, 1).unwrap() < 0.01);
        assert_eq!(permutation_test(&a, &a, 99, 1).unwrap(), 1.0);
    }
}
