//! Attention-based rating predictor.
//!
//! For one interaction with padded aspect order `TP` (length `e`) and the
//! importance sequences `useq`, `iseq` gathered along it:
//!
//! ```text
//! N   = AspectEmbed[TP] + PosEmbed                      e x d
//! Att = softmax(mask(N Wq (N Wk)^T / sqrt(d))) N Wv      causal: t sees 0..=t
//! SF  = LayerNorm(N + Att)                               row-wise
//! r   = sum_t W1 . (useq_t SF_t (.) iseq_t SF_t) + W2 . (p_u (.) q_i) + b_u + b_i + mu
//! ```
//!
//! Gradients are derived by hand in [`network`] and checked against central
//! finite differences in the test suite.

mod checkpoint;
mod network;

use rand::Rng;

use crate::error::{Error, Result};
use crate::seed;

pub use checkpoint::{format_checkpoint, load_checkpoint, parse_checkpoint, write_checkpoint, CheckpointMeta};
pub use network::{
    embed_path, layer_norm, modulate, mse_loss, self_attention, sequence_feature, BatchGradient, Predictor, Trace,
    LAYER_NORM_EPSILON,
};

/// Parameter groups, in checkpoint order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Group {
    AspectEmbed,
    PosEmbed,
    Wq,
    Wk,
    Wv,
    LnGain,
    LnBias,
    W1,
    W2,
    UserEmbed,
    ItemEmbed,
    UserBias,
    ItemBias,
    GlobalBias,
}

impl Group {
    pub const ALL: [Group; 14] = [
        Group::AspectEmbed,
        Group::PosEmbed,
        Group::Wq,
        Group::Wk,
        Group::Wv,
        Group::LnGain,
        Group::LnBias,
        Group::W1,
        Group::W2,
        Group::UserEmbed,
        Group::ItemEmbed,
        Group::UserBias,
        Group::ItemBias,
        Group::GlobalBias,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Group::AspectEmbed => "aspect_embed",
            Group::PosEmbed => "pos_embed",
            Group::Wq => "w_query",
            Group::Wk => "w_key",
            Group::Wv => "w_value",
            Group::LnGain => "ln_gain",
            Group::LnBias => "ln_bias",
            Group::W1 => "w_sequence",
            Group::W2 => "w_interaction",
            Group::UserEmbed => "user_embed",
            Group::ItemEmbed => "item_embed",
            Group::UserBias => "user_bias",
            Group::ItemBias => "item_bias",
            Group::GlobalBias => "global_bias",
        }
    }

    pub fn from_name(name: &str) -> Option<Group> {
        Group::ALL.into_iter().find(|g| g.name() == name)
    }

    /// Rating biases and the layer-norm shift are exempt from L2.
    pub fn is_bias(self) -> bool {
        matches!(self, Group::UserBias | Group::ItemBias | Group::GlobalBias | Group::LnBias)
    }

    fn index(self) -> usize {
        Group::ALL.iter().position(|&g| g == self).expect("listed")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Dims {
    pub aspects: usize,
    pub seq_len: usize,
    pub latent: usize,
    pub users: usize,
    pub items: usize,
}

impl Dims {
    pub fn shape(&self, group: Group) -> (usize, usize) {
        let d = self.latent;
        match group {
            Group::AspectEmbed => (self.aspects, d),
            Group::PosEmbed => (self.seq_len, d),
            Group::Wq | Group::Wk | Group::Wv => (d, d),
            Group::LnGain | Group::LnBias | Group::W1 | Group::W2 => (1, d),
            Group::UserEmbed => (self.users, d),
            Group::ItemEmbed => (self.items, d),
            Group::UserBias => (1, self.users),
            Group::ItemBias => (1, self.items),
            Group::GlobalBias => (1, 1),
        }
    }
}

/// Which blocks of the predictor are active. Disabled blocks act as the
/// identity (attention contributes zero, layer norm passes its input through,
/// positions add nothing).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Variant {
    pub attention: bool,
    pub layer_norm: bool,
    pub position: bool,
}

impl Default for Variant {
    fn default() -> Self {
        Variant {
            attention: true,
            layer_norm: true,
            position: true,
        }
    }
}

/// Every tensor of the model, or a gradient with the same layout.
#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    pub dims: Dims,
    tensors: Vec<Vec<f64>>,
}

/// Uniform init half-width for embeddings and projections.
pub const INIT_SCALE: f64 = 0.05;

impl Params {
    pub fn zeros(dims: Dims) -> Self {
        let tensors = Group::ALL
            .iter()
            .map(|&g| {
                let (r, c) = dims.shape(g);
                vec![0.0; r * c]
            })
            .collect();
        Params { dims, tensors }
    }

    /// Seeded uniform(-0.05, 0.05) for weights, unit layer-norm gain, zero
    /// biases and `mean_rating` as the global bias.
    pub fn init(dims: Dims, mean_rating: f64, seed_value: u64) -> Self {
        let mut p = Params::zeros(dims);
        let mut rng = seed::rng(seed_value);
        for g in Group::ALL {
            match g {
                Group::LnGain => p.get_mut(g).fill(1.0),
                Group::GlobalBias => p.get_mut(g)[0] = mean_rating,
                _ if g.is_bias() => {}
                _ => {
                    for v in p.get_mut(g) {
                        *v = rng.random_range(-INIT_SCALE..INIT_SCALE);
                    }
                }
            }
        }
        p
    }

    pub fn zeros_like(&self) -> Self {
        Params::zeros(self.dims)
    }

    pub fn get(&self, group: Group) -> &[f64] {
        &self.tensors[group.index()]
    }

    pub fn get_mut(&mut self, group: Group) -> &mut [f64] {
        &mut self.tensors[group.index()]
    }

    pub fn iter(&self) -> impl Iterator<Item = (Group, &[f64])> {
        Group::ALL.into_iter().zip(self.tensors.iter().map(Vec::as_slice))
    }

    pub fn set(&mut self, group: Group, values: Vec<f64>) -> Result<()> {
        let (r, c) = self.dims.shape(group);
        if values.len() != r * c {
            return Err(Error::invalid(format!(
                "{}: expected {} values, got {}",
                group.name(),
                r * c,
                values.len()
            )));
        }
        self.tensors[group.index()] = values;
        Ok(())
    }

    /// `self += other * scale`.
    pub fn add_scaled(&mut self, other: &Params, scale: f64) {
        for (a, b) in self.tensors.iter_mut().zip(&other.tensors) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y * scale;
            }
        }
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.iter().flatten().all(|v| v.is_finite())
    }

    /// L2 norm over non-bias groups.
    pub fn weight_norm(&self) -> f64 {
        self.iter()
            .filter(|(g, _)| !g.is_bias())
            .flat_map(|(_, t)| t.iter())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }
}

/// Model input for one (user, item) interaction.
#[derive(Debug, Clone, PartialEq)]
pub struct Interaction {
    pub user: usize,
    pub item: usize,
    pub rating: f64,
    pub ids: Vec<usize>,
    pub useq: Vec<f64>,
    pub iseq: Vec<f64>,
}

/// Named model variants used by the ablation study.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum Ablation {
    #[default]
    Full,
    /// Tree orders replaced by random aspect orders.
    NoTree,
    NoPosition,
    NoAttention,
    NoLayerNorm,
}

impl Ablation {
    pub const ALL: [Ablation; 5] = [
        Ablation::Full,
        Ablation::NoTree,
        Ablation::NoPosition,
        Ablation::NoAttention,
        Ablation::NoLayerNorm,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Ablation::Full => "full",
            Ablation::NoTree => "no-tree",
            Ablation::NoPosition => "no-position",
            Ablation::NoAttention => "no-attention",
            Ablation::NoLayerNorm => "no-layer-norm",
        }
    }

    pub fn variant(self) -> Variant {
        let full = Variant::default();
        match self {
            Ablation::Full | Ablation::NoTree => full,
            Ablation::NoPosition => Variant { position: false, ..full },
            Ablation::NoAttention => Variant { attention: false, ..full },
            Ablation::NoLayerNorm => Variant { layer_norm: false, ..full },
        }
    }

    pub fn uses_tree(self) -> bool {
        self != Ablation::NoTree
    }
}

impl std::fmt::Display for Ablation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Ablation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ablation::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown variant `{s}`")))
    }
}
