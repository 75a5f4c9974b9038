//! Stage glue: fitting the aspect statistics and both trees on a training
//! split, and turning reviews into model inputs.

use crate::aspect_stats::{build_item_matrix, build_user_matrix, group_aspect, AspectMatrix, Side};
use crate::corpus::{Corpus, ItemId, Review, UserId};
use crate::error::{Error, Result};
use crate::model::{Ablation, Dims, Interaction};
use crate::order::{self, AspectOrder};
use crate::par::Exec;
use crate::seed;
use crate::train::{self, TrainConfig, TrainFailure, TrainOutcome};
use crate::tree::{build_tree, AoTree};

/// Everything derived from the training split that is needed to encode an
/// interaction: importance matrices, general vectors and the two trees.
#[derive(Debug, Clone, PartialEq)]
pub struct Encoder {
    pub user_matrix: AspectMatrix,
    pub item_matrix: AspectMatrix,
    pub user_general: Vec<f64>,
    pub item_general: Vec<f64>,
    pub user_tree: AoTree,
    pub item_tree: AoTree,
    /// Tree depth limit and padded order length.
    pub seq_len: usize,
    pub seed: u64,
}

impl Encoder {
    /// Builds the matrices from `train` and grows the user tree against the
    /// item general vector and the item tree against the user general vector.
    /// Only entities with training reviews become tree members.
    pub fn fit(train: &Corpus, seq_len: usize, seed_value: u64, exec: Exec) -> Result<Self> {
        let user_matrix = build_user_matrix(train)?;
        let item_matrix = build_item_matrix(train)?;
        let (user_counts, item_counts) = (train.user_review_counts(), train.item_review_counts());
        let user_general = group_aspect(&user_matrix, &user_counts)?;
        let item_general = group_aspect(&item_matrix, &item_counts)?;
        let active = |counts: &[usize]| -> Vec<usize> { (0..counts.len()).filter(|&i| counts[i] > 0).collect() };
        let user_tree = build_tree(&user_matrix, &active(&user_counts), &item_general, seq_len, Side::User, exec)?;
        let item_tree = build_tree(&item_matrix, &active(&item_counts), &user_general, seq_len, Side::Item, exec)?;
        Ok(Encoder {
            user_matrix,
            item_matrix,
            user_general,
            item_general,
            user_tree,
            item_tree,
            seq_len,
            seed: seed_value,
        })
    }

    /// Reassembles an encoder from stored parts, checking that they agree.
    #[allow(clippy::too_many_arguments)]
    pub fn from_parts(
        user_matrix: AspectMatrix,
        item_matrix: AspectMatrix,
        user_general: Vec<f64>,
        item_general: Vec<f64>,
        user_tree: AoTree,
        item_tree: AoTree,
        seed_value: u64,
    ) -> Result<Self> {
        let l = user_matrix.cols();
        if item_matrix.cols() != l || user_general.len() != l || item_general.len() != l {
            return Err(Error::invalid("matrices and general vectors disagree on the aspect count"));
        }
        if user_tree.aspects != l || item_tree.aspects != l {
            return Err(Error::invalid("trees were built for a different aspect count"));
        }
        if user_tree.side != Side::User || item_tree.side != Side::Item {
            return Err(Error::invalid("tree sides are swapped"));
        }
        if user_tree.max_depth != item_tree.max_depth {
            return Err(Error::invalid("user and item trees have different depth limits"));
        }
        let seq_len = user_tree.max_depth;
        Ok(Encoder {
            user_matrix,
            item_matrix,
            user_general,
            item_general,
            user_tree,
            item_tree,
            seq_len,
            seed: seed_value,
        })
    }

    pub fn aspects(&self) -> usize {
        self.user_matrix.cols()
    }

    pub fn dims(&self, latent: usize) -> Dims {
        Dims {
            aspects: self.aspects(),
            seq_len: self.seq_len,
            latent,
            users: self.user_matrix.rows(),
            items: self.item_matrix.rows(),
        }
    }

    fn check_ids(&self, user: UserId, item: ItemId) -> Result<()> {
        if user >= self.user_matrix.rows() {
            return Err(Error::invalid(format!("unknown user id {user}")));
        }
        if item >= self.item_matrix.rows() {
            return Err(Error::invalid(format!("unknown item id {item}")));
        }
        Ok(())
    }

    /// Merged, padded tree order of one interaction.
    pub fn order(&self, user: UserId, item: ItemId) -> Result<AspectOrder> {
        self.check_ids(user, item)?;
        let up = self.user_tree.path_for(user);
        let ip = self.item_tree.path_for(item);
        let tp = order::combine_orders(&up, &ip);
        let pad_seed = order::interaction_seed(seed::stage(self.seed, "pad"), user, item);
        Ok(order::pad_order(&tp, self.seq_len, self.aspects(), pad_seed))
    }

    /// Order used by `ablation`: the tree order, or a per-interaction random
    /// order when trees are ablated.
    pub fn order_for(&self, user: UserId, item: ItemId, ablation: Ablation) -> Result<AspectOrder> {
        if ablation.uses_tree() {
            self.order(user, item)
        } else {
            self.check_ids(user, item)?;
            let s = order::interaction_seed(seed::stage(self.seed, "random-order"), user, item);
            Ok(order::random_order(self.seq_len, self.aspects(), s))
        }
    }

    /// Model input for `(user, item, rating)` along an explicit order.
    pub fn interaction_with_order(&self, user: UserId, item: ItemId, rating: f64, order: &AspectOrder) -> Interaction {
        Interaction {
            user,
            item,
            rating,
            ids: order.ids.clone(),
            useq: order::importance_sequence(order, self.user_matrix.row(user)),
            iseq: order::importance_sequence(order, self.item_matrix.row(item)),
        }
    }

    pub fn interaction(&self, review: &Review, ablation: Ablation) -> Result<Interaction> {
        let order = self.order_for(review.user, review.item, ablation)?;
        Ok(self.interaction_with_order(review.user, review.item, review.rating, &order))
    }

    pub fn encode(&self, corpus: &Corpus, ablation: Ablation, exec: Exec) -> Result<Vec<Interaction>> {
        exec.map(&corpus.reviews, |r| self.interaction(r, ablation))
            .into_iter()
            .collect()
    }
}

/// A trained model together with the encoder it was trained against.
#[derive(Debug, Clone, PartialEq)]
pub struct Fitted {
    pub encoder: Encoder,
    pub outcome: TrainOutcome,
}

/// Fits the encoder on `train` (depth `config.max_depth`, seeded by
/// `config.seed`), encodes both splits for `config.ablation` and trains.
pub fn fit(train_split: &Corpus, val_split: &Corpus, config: &TrainConfig, exec: Exec) -> Result<Fitted, TrainFailure> {
    let early = |error: Error| TrainFailure {
        error,
        history: Default::default(),
    };
    config.validate().map_err(early)?;
    let encoder = Encoder::fit(train_split, config.max_depth, config.seed, exec).map_err(early)?;
    let train_set = encoder.encode(train_split, config.ablation, exec).map_err(early)?;
    let val_set = encoder.encode(val_split, config.ablation, exec).map_err(early)?;
    let dims = encoder.dims(config.latent_dim);
    let outcome = train::train(&train_set, &val_set, dims, train_split.mean_rating(), config, exec)?;
    Ok(Fitted { encoder, outcome })
}
