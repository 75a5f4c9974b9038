//! Planted-order synthetic corpora.
//!
//! Every user owns a template aspect order. Order-sensitive users rate items
//! by a position-discounted sum of the item's aspect qualities along their
//! template and write reviews whose mention order is a noisy copy of it. Insensitive users mention popular aspects in random order and
//! rate with an order-free mean plus heavier noise. Mention sentiments are
//! noisy readings of the item's latent aspect quality, so the item-side
//! importance matrix recovers item quality.

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::{AspectId, Corpus, Mention, Review};
use crate::error::{Error, Result};
use crate::seed;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub users: usize,
    pub items: usize,
    pub aspects: usize,
    /// Length of each user's planted aspect order.
    pub template_len: usize,
    /// Reviews per user are drawn uniformly from `min..=max`.
    pub min_reviews: usize,
    pub max_reviews: usize,
    /// Fraction of users that follow their template.
    pub sensitivity: f64,
    /// Order noise in [0, 1]: adjacent-swap probability and scale of tail
    /// truncation. Zero reproduces the template verbatim.
    pub noise: f64,
    /// Variety seeking of insensitive users in [0, 1]: an aspect they have
    /// already mentioned `c` times is drawn with weight scaled by
    /// `(1 - novelty)^c`, so their own reviews agree less than random pairs.
    pub novelty: f64,
    /// Distinct aspects per review of an insensitive user.
    pub insensitive_mentions: usize,
    /// Zipf exponent of aspect popularity.
    pub popularity_skew: f64,
    /// Position discount of the order-sensitive rating model.
    pub primacy: f64,
    /// Scale of the aspect-quality contribution to ratings.
    pub aspect_effect: f64,
    pub sentiment_noise: f64,
    pub sensitive_rating_noise: f64,
    pub insensitive_rating_noise: f64,
    pub bias_scale: f64,
    pub base_rating: f64,
    pub rating_scale: f64,
}

impl Default for SynthSpec {
    /// The bundled planted corpus used by the experiments.
    fn default() -> Self {
        SynthSpec {
            users: 1000,
            items: 300,
            aspects: 20,
            template_len: 8,
            min_reviews: 4,
            max_reviews: 10,
            sensitivity: 0.7,
            noise: 0.2,
            novelty: 0.7,
            insensitive_mentions: 3,
            popularity_skew: 1.2,
            primacy: 0.7,
            aspect_effect: 0.7,
            sentiment_noise: 0.2,
            sensitive_rating_noise: 0.25,
            insensitive_rating_noise: 1.0,
            bias_scale: 0.3,
            base_rating: 3.5,
            rating_scale: 5.0,
        }
    }
}

impl SynthSpec {
    /// A 200-review corpus for quick end-to-end runs.
    pub fn small() -> Self {
        SynthSpec {
            users: 40,
            items: 25,
            aspects: 10,
            template_len: 5,
            min_reviews: 5,
            max_reviews: 5,
            ..SynthSpec::default()
        }
    }

    fn validate(&self) -> Result<()> {
        if self.users == 0 || self.items == 0 || self.aspects == 0 {
            return Err(Error::invalid("users, items and aspects must be positive"));
        }
        if self.aspects < self.template_len {
            return Err(Error::invalid(format!(
                "aspect count {} is smaller than the template length {}",
                self.aspects, self.template_len
            )));
        }
        if self.template_len == 0 {
            return Err(Error::invalid("template length must be positive"));
        }
        if self.insensitive_mentions == 0 {
            return Err(Error::invalid("insensitive users must mention at least one aspect"));
        }
        if self.min_reviews == 0 || self.min_reviews > self.max_reviews || self.max_reviews > self.items {
            return Err(Error::invalid("reviews per user must satisfy 1 <= min <= max <= items"));
        }
        if [self.sensitivity, self.noise, self.novelty].iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::invalid("sensitivity, noise and novelty must lie in [0, 1]"));
        }
        Ok(())
    }
}

/// Ground truth behind a generated corpus.
#[derive(Debug, Clone, PartialEq)]
pub struct PlantedTruth {
    pub sensitive: Vec<bool>,
    pub templates: Vec<Vec<AspectId>>,
    /// Latent item quality per aspect, in [-1, 1].
    pub item_quality: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Synthetic {
    pub corpus: Corpus,
    pub truth: PlantedTruth,
}

fn round2(x: f64) -> f64 {
    (x * 100.0).round() / 100.0
}

/// Weighted sampling without replacement.
fn sample_weighted(rng: &mut seed::Rng, weights: &[f64], count: usize) -> Vec<AspectId> {
    let mut pool: Vec<(AspectId, f64)> = weights.iter().copied().enumerate().collect();
    let mut out = Vec::with_capacity(count);
    while out.len() < count && !pool.is_empty() {
        let total: f64 = pool.iter().map(|(_, w)| w).sum();
        let mut draw = rng.random::<f64>() * total;
        let mut pick = pool.len() - 1;
        for (idx, (_, w)) in pool.iter().enumerate() {
            if draw < *w {
                pick = idx;
                break;
            }
            draw -= w;
        }
        out.push(pool.swap_remove(pick).0);
    }
    out
}

pub fn generate_synthetic(spec: &SynthSpec, seed_value: u64) -> Result<Synthetic> {
    spec.validate()?;
    let mut rng = seed::rng(seed::stage(seed_value, "synthetic"));
    let (m, n, l) = (spec.users, spec.items, spec.aspects);

    let mut popularity: Vec<f64> = (0..l).map(|k| 1.0 / ((k + 1) as f64).powf(spec.popularity_skew)).collect();
    popularity.shuffle(&mut rng);

    let bias = Normal::new(0.0, spec.bias_scale.max(1e-12)).expect("finite scale");
    let sentiment_noise = Normal::new(0.0, spec.sentiment_noise.max(1e-12)).expect("finite scale");
    let sens_noise = Normal::new(0.0, spec.sensitive_rating_noise.max(1e-12)).expect("finite scale");
    let insens_noise = Normal::new(0.0, spec.insensitive_rating_noise.max(1e-12)).expect("finite scale");

    let item_quality: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..l).map(|_| rng.random_range(-1.0..=1.0)).collect())
        .collect();
    let item_bias: Vec<f64> = (0..n).map(|_| bias.sample(&mut rng)).collect();
    let user_bias: Vec<f64> = (0..m).map(|_| bias.sample(&mut rng)).collect();
    let sensitive: Vec<bool> = (0..m).map(|_| rng.random::<f64>() < spec.sensitivity).collect();
    let templates: Vec<Vec<AspectId>> = (0..m)
        .map(|_| sample_weighted(&mut rng, &popularity, spec.template_len))
        .collect();

    let all_items: Vec<usize> = (0..n).collect();
    let mut reviews = Vec::new();
    for u in 0..m {
        let count = rng.random_range(spec.min_reviews..=spec.max_reviews);
        let mut items: Vec<usize> = all_items.choose_multiple(&mut rng, count).copied().collect();
        items.sort_unstable();
        let mut used = vec![0i32; l];
        for item in items {
            let order = if sensitive[u] {
                noisy_template(&mut rng, &templates[u], spec.noise)
            } else {
                let len = spec.insensitive_mentions.min(l);
                let weights: Vec<f64> = popularity
                    .iter()
                    .zip(&used)
                    .map(|(w, &c)| w * (1.0 - spec.novelty).powi(c).max(1e-6))
                    .collect();
                let mut picked = sample_weighted(&mut rng, &weights, len.max(1));
                picked.shuffle(&mut rng);
                for &k in &picked {
                    used[k] += 1;
                }
                picked
            };
            let quality = &item_quality[item];
            let weights: Vec<f64> = (0..order.len()).map(|t| spec.primacy.powi(t as i32)).collect();
            let aspect_term = if sensitive[u] {
                templates[u]
                    .iter()
                    .enumerate()
                    .map(|(t, &k)| spec.primacy.powi(t as i32) * quality[k])
                    .sum::<f64>()
            } else {
                let mean = order.iter().map(|&k| quality[k]).sum::<f64>() / order.len() as f64;
                mean * weights.iter().sum::<f64>()
            };
            let noise = if sensitive[u] {
                sens_noise.sample(&mut rng)
            } else {
                insens_noise.sample(&mut rng)
            };
            let rating = spec.base_rating + user_bias[u] + item_bias[item] + spec.aspect_effect * aspect_term + noise;
            let mentions = order
                .iter()
                .map(|&aspect| Mention {
                    aspect,
                    sentiment: round2((quality[aspect] + sentiment_noise.sample(&mut rng)).clamp(-1.0, 1.0)),
                })
                .collect();
            reviews.push(Review {
                user: u,
                item,
                rating: round2(rating.clamp(1.0, spec.rating_scale)),
                mentions,
            });
        }
    }

    let corpus = Corpus {
        reviews,
        users: (0..m).map(|u| format!("u{u}")).collect(),
        items: (0..n).map(|i| format!("i{i}")).collect(),
        aspects: (0..l).map(|k| format!("aspect_{k}")).collect(),
        rating_scale: spec.rating_scale,
    };
    Ok(Synthetic {
        corpus,
        truth: PlantedTruth {
            sensitive,
            templates,
            item_quality,
        },
    })
}

/// Adjacent swaps with probability `noise`, then tail truncation whose drop
/// probability grows linearly with position. The first aspect always stays.
fn noisy_template(rng: &mut seed::Rng, template: &[AspectId], noise: f64) -> Vec<AspectId> {
    let mut order = template.to_vec();
    if noise <= 0.0 {
        return order;
    }
    for t in 0..order.len().saturating_sub(1) {
        if rng.random::<f64>() < noise {
            order.swap(t, t + 1);
        }
    }
    let len = order.len() as f64;
    let mut kept = Vec::with_capacity(order.len());
    for (t, &k) in order.iter().enumerate() {
        if t == 0 || rng.random::<f64>() >= noise * t as f64 / len {
            kept.push(k);
        }
    }
    kept
}
