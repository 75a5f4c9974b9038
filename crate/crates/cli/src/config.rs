//! Flat `key = value` run configuration.
//!
//! Every key has a default in [`KEYS`]; a config file and `--set` overrides
//! (applied in that order) may only name known keys. The canonical form lists
//! every key in sorted order and its SHA-256 is the run's config hash. The
//! output directory and the `parallel` switch do not affect results and are
//! left out, so identical runs share a hash wherever and however they ran.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use aotree::corpus::synth::SynthSpec;
use aotree::corpus::SplitSpec;
use aotree::model::Ablation;
use aotree::train::TrainConfig;
use aotree::{seed, Exec};
use sha2::{Digest, Sha256};

use crate::exit::CliError;

/// `(key, default, description)`.
pub const KEYS: &[(&str, &str, &str)] = &[
    ("seed", "42", "global seed; every stage derives its own seed from it"),
    ("parallel", "true", "use the rayon thread pool where available"),
    ("corpus", "", "review file to ingest (default: synthetic.reviews in the run directory)"),
    ("vocabulary", "", "optional `<aspect_id>\\t<name>` file for the corpus"),
    ("rating_scale", "5", "maximum rating N; ratings lie in [1, N]"),
    ("min_user_reviews", "0", "drop users with fewer reviews"),
    ("min_item_reviews", "0", "drop items with fewer reviews"),
    ("min_aspect_mentions", "0", "drop aspects with fewer mentions"),
    ("train_fraction", "0.8", "share of reviews used for training"),
    ("val_fraction", "0.1", "share of reviews used for validation"),
    ("test_fraction", "0.1", "share of reviews used for testing"),
    ("depth", "5", "tree depth limit and padded order length e"),
    ("latent_dim", "8", "embedding width d"),
    ("learning_rate", "0.005", "Adam step size"),
    ("l2", "0.01", "L2 penalty on non-bias parameters"),
    ("dropout", "0", "dropout rate on sequence features"),
    ("batch_size", "128", "mini-batch size"),
    ("max_epochs", "40", "epoch limit"),
    ("patience", "10", "early-stopping patience in epochs"),
    ("variant", "full", "model variant: full, no-tree, no-position, no-attention, no-layer-norm"),
    ("record_time", "false", "write wall-clock seconds into history.csv (breaks byte-identical reruns)"),
    ("top_k", "5", "cut-off K for ranking and explanation metrics"),
    ("consistency_pairs", "10000", "intra and inter review pairs sampled by analyze"),
    ("repeats", "3", "models trained per setting by ablate and sweep"),
    ("ablate.variants", "full,no-attention,no-layer-norm,no-position,no-tree", "variants compared by ablate"),
    ("sweep.learning_rate", "", "comma-separated grid; empty keeps the base value"),
    ("sweep.l2", "", "comma-separated grid"),
    ("sweep.dropout", "", "comma-separated grid"),
    ("sweep.batch_size", "", "comma-separated grid"),
    ("sweep.latent_dim", "", "comma-separated grid"),
    ("sweep.depth", "1,5,15", "comma-separated grid"),
    ("sweep.variant", "", "comma-separated grid"),
    ("synth.preset", "planted", "planted (about 1,000 users) or small (200 reviews)"),
    ("synth.users", "", "overrides of the preset; empty keeps the preset value"),
    ("synth.items", "", ""),
    ("synth.aspects", "", ""),
    ("synth.template_len", "", ""),
    ("synth.min_reviews", "", ""),
    ("synth.max_reviews", "", ""),
    ("synth.sensitivity", "", ""),
    ("synth.noise", "", ""),
    ("synth.novelty", "", ""),
    ("synth.insensitive_mentions", "", ""),
    ("synth.popularity_skew", "", ""),
    ("synth.primacy", "", ""),
    ("synth.aspect_effect", "", ""),
    ("synth.sentiment_noise", "", ""),
    ("synth.sensitive_rating_noise", "", ""),
    ("synth.insensitive_rating_noise", "", ""),
    ("synth.bias_scale", "", ""),
    ("synth.base_rating", "", ""),
];

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    values: BTreeMap<String, String>,
    pub out: PathBuf,
}

fn parse_line(line: &str) -> Option<Result<(String, String), String>> {
    let line = line.trim();
    if line.is_empty() || line.starts_with('#') {
        return None;
    }
    Some(match line.split_once('=') {
        Some((k, v)) => Ok((k.trim().to_string(), v.trim().to_string())),
        None => Err(format!("expected `key = value`, found `{line}`")),
    })
}

impl RunConfig {
    pub fn defaults(out: PathBuf) -> Self {
        RunConfig {
            values: KEYS.iter().map(|(k, v, _)| (k.to_string(), v.to_string())).collect(),
            out,
        }
    }

    /// Defaults, then `file` (if any), then each `key=value` override.
    pub fn load(out: PathBuf, file: Option<&Path>, overrides: &[String]) -> Result<Self, CliError> {
        let mut config = RunConfig::defaults(out);
        if let Some(path) = file {
            let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
            for (idx, line) in text.lines().enumerate() {
                match parse_line(line) {
                    None => {}
                    Some(Ok((k, v))) => config.set(&k, &v)?,
                    Some(Err(m)) => return Err(CliError::invalid(format!("{}:{}: {m}", path.display(), idx + 1))),
                }
            }
        }
        for o in overrides {
            match parse_line(o) {
                Some(Ok((k, v))) => config.set(&k, &v)?,
                _ => return Err(CliError::invalid(format!("--set expects key=value, got `{o}`"))),
            }
        }
        config.validate()?;
        Ok(config)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), CliError> {
        match self.values.get_mut(key) {
            Some(slot) => {
                *slot = value.to_string();
                Ok(())
            }
            None => Err(CliError::invalid(format!("unknown config key `{key}` (see `aotree keys`)"))),
        }
    }

    pub fn raw(&self, key: &str) -> &str {
        self.values.get(key).map(String::as_str).unwrap_or_default()
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<T, CliError> {
        let raw = self.raw(key);
        raw.parse()
            .map_err(|_| CliError::invalid(format!("config key `{key}`: cannot parse `{raw}`")))
    }

    fn optional<T: FromStr>(&self, key: &str) -> Result<Option<T>, CliError> {
        if self.raw(key).is_empty() {
            Ok(None)
        } else {
            self.get(key).map(Some)
        }
    }

    pub fn list<T: FromStr>(&self, key: &str) -> Result<Vec<T>, CliError> {
        self.raw(key)
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| {
                s.parse()
                    .map_err(|_| CliError::invalid(format!("config key `{key}`: cannot parse `{s}`")))
            })
            .collect()
    }

    /// Every result-affecting key in sorted order, one `key = value` per line.
    pub fn canonical(&self) -> String {
        self.values
            .iter()
            .filter(|(k, _)| k.as_str() != "parallel")
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }

    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.canonical().as_bytes()))
    }

    pub fn seed(&self) -> Result<u64, CliError> {
        self.get("seed")
    }

    pub fn exec(&self) -> Result<Exec, CliError> {
        Ok(if self.get::<bool>("parallel")? {
            Exec::Parallel
        } else {
            Exec::Sequential
        })
    }

    pub fn rating_scale(&self) -> Result<f64, CliError> {
        self.get("rating_scale")
    }

    pub fn top_k(&self) -> Result<usize, CliError> {
        let k: usize = self.get("top_k")?;
        if k == 0 {
            return Err(CliError::invalid("top_k must be positive"));
        }
        Ok(k)
    }

    pub fn split_spec(&self) -> Result<SplitSpec, CliError> {
        let spec = SplitSpec {
            train: self.get("train_fraction")?,
            val: self.get("val_fraction")?,
            test: self.get("test_fraction")?,
            seed: seed::stage(self.seed()?, "split"),
        };
        let fractions = [spec.train, spec.val, spec.test];
        if fractions.iter().any(|f| !(0.0..=1.0).contains(f)) || (fractions.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(CliError::invalid(format!("split fractions {fractions:?} must lie in [0, 1] and sum to 1")));
        }
        Ok(spec)
    }

    pub fn train_config(&self) -> Result<TrainConfig, CliError> {
        let config = TrainConfig {
            learning_rate: self.get("learning_rate")?,
            l2: self.get("l2")?,
            dropout: self.get("dropout")?,
            batch_size: self.get("batch_size")?,
            latent_dim: self.get("latent_dim")?,
            max_depth: self.get("depth")?,
            max_epochs: self.get("max_epochs")?,
            patience: self.get("patience")?,
            seed: self.seed()?,
            ablation: self.get::<Ablation>("variant")?,
            record_time: self.get("record_time")?,
        };
        config.validate()?;
        Ok(config)
    }

    /// Cartesian product of the `sweep.*` grids around the base config.
    pub fn sweep_configs(&self) -> Result<Vec<TrainConfig>, CliError> {
        let base = self.train_config()?;
        let mut configs = vec![base.clone()];
        fn expand<T: Clone>(configs: Vec<TrainConfig>, values: Vec<T>, apply: impl Fn(&mut TrainConfig, T)) -> Vec<TrainConfig> {
            if values.is_empty() {
                return configs;
            }
            configs
                .into_iter()
                .flat_map(|c| {
                    values.iter().cloned().map(|v| {
                        let mut c = c.clone();
                        apply(&mut c, v);
                        c
                    }).collect::<Vec<_>>()
                })
                .collect()
        }
        configs = expand(configs, self.list("sweep.learning_rate")?, |c, v| c.learning_rate = v);
        configs = expand(configs, self.list("sweep.l2")?, |c, v| c.l2 = v);
        configs = expand(configs, self.list("sweep.dropout")?, |c, v| c.dropout = v);
        configs = expand(configs, self.list("sweep.batch_size")?, |c, v| c.batch_size = v);
        configs = expand(configs, self.list("sweep.latent_dim")?, |c, v| c.latent_dim = v);
        configs = expand(configs, self.list("sweep.depth")?, |c, v| c.max_depth = v);
        configs = expand(configs, self.list::<Ablation>("sweep.variant")?, |c, v| c.ablation = v);
        for c in &configs {
            c.validate()?;
        }
        Ok(configs)
    }

    pub fn synth_spec(&self) -> Result<SynthSpec, CliError> {
        let mut spec = match self.raw("synth.preset") {
            "planted" => SynthSpec::default(),
            "small" => SynthSpec::small(),
            other => return Err(CliError::invalid(format!("unknown synth.preset `{other}` (planted or small)"))),
        };
        macro_rules! field {
            ($($name:ident),*) => {
                $(if let Some(v) = self.optional(concat!("synth.", stringify!($name)))? {
                    spec.$name = v;
                })*
            };
        }
        field!(
            users,
            items,
            aspects,
            template_len,
            min_reviews,
            max_reviews,
            sensitivity,
            noise,
            novelty,
            insensitive_mentions,
            popularity_skew,
            primacy,
            aspect_effect,
            sentiment_noise,
            sensitive_rating_noise,
            insensitive_rating_noise,
            bias_scale,
            base_rating
        );
        spec.rating_scale = self.rating_scale()?;
        Ok(spec)
    }

    /// Parses every typed key once so that bad values fail before any work.
    fn validate(&self) -> Result<(), CliError> {
        self.seed()?;
        self.exec()?;
        let scale = self.rating_scale()?;
        if !(scale > 1.0 && scale.is_finite()) {
            return Err(CliError::invalid("rating_scale must be a finite number above 1"));
        }
        for key in ["min_user_reviews", "min_item_reviews", "min_aspect_mentions", "consistency_pairs", "repeats"] {
            self.get::<usize>(key)?;
        }
        if self.get::<usize>("repeats")? == 0 {
            return Err(CliError::invalid("repeats must be at least 1"));
        }
        if self.get::<usize>("consistency_pairs")? == 0 {
            return Err(CliError::invalid("consistency_pairs must be positive"));
        }
        self.top_k()?;
        self.split_spec()?;
        self.train_config()?;
        self.list::<Ablation>("ablate.variants")?;
        self.sweep_configs()?;
        self.synth_spec()?;
        Ok(())
    }
}
