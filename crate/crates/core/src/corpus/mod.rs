//! Review corpora: loading, validation, threshold filtering, splitting and
//! synthetic generation.
//!
//! Users, items and aspects are addressed by dense indices. The original
//! string ids are kept alongside so every artifact can be written back out
//! under its source names.

mod io;
pub mod synth;

use std::collections::{BTreeSet, HashMap};

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::seed;

pub use io::{
    apply_vocabulary, format_corpus, load_corpus, load_vocabulary, parse_corpus, parse_vocabulary, write_corpus,
    write_vocabulary,
};

pub type UserId = usize;
pub type ItemId = usize;
pub type AspectId = usize;

/// Rating scale used by every corpus in this crate unless stated otherwise.
pub const DEFAULT_RATING_SCALE: f64 = 5.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Mention {
    pub aspect: AspectId,
    pub sentiment: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Review {
    pub user: UserId,
    pub item: ItemId,
    pub rating: f64,
    /// Aspect mentions in textual order; repeats allowed.
    pub mentions: Vec<Mention>,
}

impl Review {
    /// Aspects in order of appearance, repeats included.
    pub fn raw_order(&self) -> Vec<AspectId> {
        self.mentions.iter().map(|m| m.aspect).collect()
    }

    /// Aspects in order of first appearance.
    pub fn distinct_order(&self) -> Vec<AspectId> {
        let mut seen = BTreeSet::new();
        self.mentions
            .iter()
            .filter(|m| seen.insert(m.aspect))
            .map(|m| m.aspect)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub reviews: Vec<Review>,
    pub users: Vec<String>,
    pub items: Vec<String>,
    pub aspects: Vec<String>,
    pub rating_scale: f64,
}

/// One row of the dataset statistics table.
#[derive(Debug, Clone, PartialEq)]
pub struct CorpusSummary {
    pub aspects: usize,
    pub users: usize,
    pub items: usize,
    pub reviews: usize,
    /// Mean number of distinct aspects mentioned per reviewing user.
    pub density: f64,
}

impl Corpus {
    pub fn num_users(&self) -> usize {
        self.users.len()
    }

    pub fn num_items(&self) -> usize {
        self.items.len()
    }

    pub fn num_aspects(&self) -> usize {
        self.aspects.len()
    }

    pub fn len(&self) -> usize {
        self.reviews.len()
    }

    pub fn is_empty(&self) -> bool {
        self.reviews.is_empty()
    }

    pub fn user_review_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_users()];
        for r in &self.reviews {
            counts[r.user] += 1;
        }
        counts
    }

    pub fn item_review_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_items()];
        for r in &self.reviews {
            counts[r.item] += 1;
        }
        counts
    }

    /// Total mentions per aspect, repeats within a review included.
    pub fn aspect_mention_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_aspects()];
        for m in self.reviews.iter().flat_map(|r| &r.mentions) {
            counts[m.aspect] += 1;
        }
        counts
    }

    pub fn mean_rating(&self) -> f64 {
        if self.reviews.is_empty() {
            return 0.0;
        }
        self.reviews.iter().map(|r| r.rating).sum::<f64>() / self.reviews.len() as f64
    }

    /// Keeps the id spaces of `self` but replaces the reviews.
    pub fn with_reviews(&self, reviews: Vec<Review>) -> Corpus {
        Corpus {
            reviews,
            users: self.users.clone(),
            items: self.items.clone(),
            aspects: self.aspects.clone(),
            rating_scale: self.rating_scale,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (m, n, l) = (self.num_users(), self.num_items(), self.num_aspects());
        for (idx, r) in self.reviews.iter().enumerate() {
            if r.user >= m || r.item >= n {
                return Err(Error::invalid(format!("review {idx} references an unknown user or item")));
            }
            if !(1.0..=self.rating_scale).contains(&r.rating) {
                return Err(Error::invalid(format!(
                    "review {idx}: rating {} outside [1, {}]",
                    r.rating, self.rating_scale
                )));
            }
            for mention in &r.mentions {
                if mention.aspect >= l {
                    return Err(Error::invalid(format!("review {idx}: aspect {} >= {l}", mention.aspect)));
                }
                if !(-1.0..=1.0).contains(&mention.sentiment) {
                    return Err(Error::invalid(format!(
                        "review {idx}: sentiment {} outside [-1, 1]",
                        mention.sentiment
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn summary(&self) -> CorpusSummary {
        let mut per_user: Vec<BTreeSet<AspectId>> = vec![BTreeSet::new(); self.num_users()];
        for r in &self.reviews {
            per_user[r.user].extend(r.mentions.iter().map(|m| m.aspect));
        }
        let active: Vec<usize> = self
            .user_review_counts()
            .iter()
            .zip(&per_user)
            .filter(|(c, _)| **c > 0)
            .map(|(_, s)| s.len())
            .collect();
        let density = if active.is_empty() {
            0.0
        } else {
            active.iter().sum::<usize>() as f64 / active.len() as f64
        };
        let used = |counts: Vec<usize>| counts.iter().filter(|&&c| c > 0).count();
        CorpusSummary {
            aspects: used(self.aspect_mention_counts()),
            users: used(self.user_review_counts()),
            items: used(self.item_review_counts()),
            reviews: self.reviews.len(),
            density,
        }
    }
}

/// Iteratively drops users with fewer than `min_user` reviews, items with
/// fewer than `min_item` reviews and aspects with fewer than `min_aspect`
/// mentions until nothing changes, then re-densifies all ids.
///
/// Reviews left without any aspect mention are dropped as well.
pub fn filter_corpus(corpus: &Corpus, min_user: usize, min_item: usize, min_aspect: usize) -> Result<Corpus> {
    let mut reviews = corpus.reviews.clone();
    let (m, n, l) = (corpus.num_users(), corpus.num_items(), corpus.num_aspects());
    let mut keep_aspect = vec![true; l];
    loop {
        let before = (reviews.len(), reviews.iter().map(|r| r.mentions.len()).sum::<usize>());

        let mut aspect_counts = vec![0usize; l];
        for mention in reviews.iter().flat_map(|r| &r.mentions) {
            aspect_counts[mention.aspect] += 1;
        }
        for (k, keep) in keep_aspect.iter_mut().enumerate() {
            *keep = *keep && aspect_counts[k] >= min_aspect;
        }
        for r in &mut reviews {
            r.mentions.retain(|mention| keep_aspect[mention.aspect]);
        }
        // An aspect-free review only survives when it arrived that way and
        // no aspect filtering is requested.
        if min_aspect > 0 {
            reviews.retain(|r| !r.mentions.is_empty());
        }

        let mut user_counts = vec![0usize; m];
        let mut item_counts = vec![0usize; n];
        for r in &reviews {
            user_counts[r.user] += 1;
            item_counts[r.item] += 1;
        }
        reviews.retain(|r| user_counts[r.user] >= min_user && item_counts[r.item] >= min_item);

        let after = (reviews.len(), reviews.iter().map(|r| r.mentions.len()).sum::<usize>());
        if after == before {
            break;
        }
    }
    if reviews.is_empty() {
        return Err(Error::invalid("filtering removed all data"));
    }
    Ok(densify(corpus, reviews, min_aspect > 0))
}

/// Re-indexes users, items (and, when `prune_aspects`, aspects) that still
/// occur in `reviews`, preserving their relative order.
fn densify(source: &Corpus, mut reviews: Vec<Review>, prune_aspects: bool) -> Corpus {
    fn remap(used: &[bool]) -> Vec<Option<usize>> {
        let mut next = 0;
        used.iter()
            .map(|&u| {
                u.then(|| {
                    next += 1;
                    next - 1
                })
            })
            .collect()
    }
    let mut used_users = vec![false; source.num_users()];
    let mut used_items = vec![false; source.num_items()];
    let mut used_aspects = vec![!prune_aspects; source.num_aspects()];
    for r in &reviews {
        used_users[r.user] = true;
        used_items[r.item] = true;
        for mention in &r.mentions {
            used_aspects[mention.aspect] = true;
        }
    }
    // Unused users and items carry no information once filtering has run.
    let (user_map, item_map, aspect_map) = (remap(&used_users), remap(&used_items), remap(&used_aspects));
    for r in &mut reviews {
        r.user = user_map[r.user].expect("user in use");
        r.item = item_map[r.item].expect("item in use");
        for mention in &mut r.mentions {
            mention.aspect = aspect_map[mention.aspect].expect("aspect in use");
        }
    }
    let pick = |names: &[String], map: &[Option<usize>]| -> Vec<String> {
        names
            .iter()
            .zip(map)
            .filter(|(_, m)| m.is_some())
            .map(|(s, _)| s.clone())
            .collect()
    };
    Corpus {
        reviews,
        users: pick(&source.users, &user_map),
        items: pick(&source.items, &item_map),
        aspects: pick(&source.aspects, &aspect_map),
        rating_scale: source.rating_scale,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitSpec {
    pub train: f64,
    pub val: f64,
    pub test: f64,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            train: 0.8,
            val: 0.1,
            test: 0.1,
            seed: 0,
        }
    }
}

/// Review indices of the seeded (train, validation, test) partition, each
/// part in ascending order.
pub fn split_indices(corpus: &Corpus, spec: SplitSpec) -> Result<[Vec<usize>; 3]> {
    let fractions = [spec.train, spec.val, spec.test];
    if fractions.iter().any(|f| !(0.0..=1.0).contains(f)) || (fractions.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::invalid(format!("split fractions {fractions:?} must be in [0, 1] and sum to 1")));
    }
    if corpus.is_empty() {
        return Err(Error::invalid("empty corpus"));
    }
    let total = corpus.len();
    let n_val = (spec.val * total as f64).round() as usize;
    let n_test = (spec.test * total as f64).round() as usize;
    let n_train = total.saturating_sub(n_val + n_test);
    if n_train == 0 || n_val == 0 || n_test == 0 {
        return Err(Error::invalid(format!(
            "split of {total} reviews yields an empty part ({n_train}/{n_val}/{n_test})"
        )));
    }
    let mut order: Vec<usize> = (0..total).collect();
    order.shuffle(&mut seed::rng(spec.seed));
    let sorted = |idx: &[usize]| {
        let mut idx = idx.to_vec();
        idx.sort_unstable();
        idx
    };
    Ok([
        sorted(&order[..n_train]),
        sorted(&order[n_train..n_train + n_val]),
        sorted(&order[n_train + n_val..]),
    ])
}

/// Sub-corpus holding the reviews at `indices`.
pub fn select_reviews(corpus: &Corpus, indices: &[usize]) -> Result<Corpus> {
    let reviews = indices
        .iter()
        .map(|&i| {
            corpus
                .reviews
                .get(i)
                .cloned()
                .ok_or_else(|| Error::invalid(format!("review index {i} out of range ({} reviews)", corpus.len())))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(corpus.with_reviews(reviews))
}

/// Disjoint seeded partition into (train, validation, test).
///
/// All three parts share the parent's user, item and aspect id spaces so
/// ids stay comparable across splits.
pub fn split_corpus(corpus: &Corpus, spec: SplitSpec) -> Result<(Corpus, Corpus, Corpus)> {
    let [train, val, test] = split_indices(corpus, spec)?;
    Ok((
        select_reviews(corpus, &train)?,
        select_reviews(corpus, &val)?,
        select_reviews(corpus, &test)?,
    ))
}

/// Index of reviews by (user, item).
pub fn pair_index(corpus: &Corpus) -> HashMap<(UserId, ItemId), usize> {
    corpus
        .reviews
        .iter()
        .enumerate()
        .map(|(i, r)| ((r.user, r.item), i))
        .collect()
}
