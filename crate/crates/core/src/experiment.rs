//! Repeated-seed experiment drivers shared by the command line and the
//! acceptance suite.
//!
//! Every driver trains `repeats` models on the same splits. Repeat 0 uses the
//! configured seed, so it reproduces a plain `train` run; later repeats use
//! seeds derived from it. Reported numbers are means over repeats.

use std::fmt::Write as _;

use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::eval::{ablation_eval, identify_sensitive_users, PerturbMode};
use crate::model::Ablation;
use crate::par::Exec;
use crate::pipeline::{fit, Fitted};
use crate::seed;
use crate::train::TrainConfig;

pub fn repeat_seed(base: u64, repeat: usize) -> u64 {
    if repeat == 0 {
        base
    } else {
        seed::derive(base, &[repeat as u64])
    }
}

fn check_repeats(repeats: usize) -> Result<()> {
    if repeats == 0 {
        return Err(Error::invalid("repeats must be at least 1"));
    }
    Ok(())
}

fn fit_repeat(train: &Corpus, val: &Corpus, config: &TrainConfig, repeat: usize, exec: Exec) -> Result<Fitted> {
    let config = TrainConfig {
        seed: repeat_seed(config.seed, repeat),
        ..config.clone()
    };
    Ok(fit(train, val, &config, exec)?)
}

fn best_val(fitted: &Fitted) -> Result<f64> {
    fitted
        .outcome
        .history
        .best_val_mse()
        .ok_or_else(|| Error::invalid("training ran no epochs"))
}

/// Best validation MSE of each repeat.
#[derive(Debug, Clone, PartialEq)]
pub struct RepeatedScore {
    pub runs: Vec<f64>,
}

impl RepeatedScore {
    pub fn mean(&self) -> f64 {
        self.runs.iter().sum::<f64>() / self.runs.len() as f64
    }

    pub fn min(&self) -> f64 {
        self.runs.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.runs.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

pub fn repeated_val_mse(train: &Corpus, val: &Corpus, config: &TrainConfig, repeats: usize, exec: Exec) -> Result<RepeatedScore> {
    check_repeats(repeats)?;
    let runs = exec
        .map_range(repeats, |r| fit_repeat(train, val, config, r, exec).and_then(|f| best_val(&f)))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    Ok(RepeatedScore { runs })
}

/// Mean test MSE of one user group under each perturbation.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct GroupPerturbation {
    /// Mean group size over repeats.
    pub users: f64,
    pub basic: f64,
    pub shuffle: f64,
    pub top5: f64,
}

impl GroupPerturbation {
    /// Relative MSE change of `mode` against the unperturbed order.
    pub fn change(&self, mode: PerturbMode) -> f64 {
        match mode {
            PerturbMode::Basic => 0.0,
            PerturbMode::Shuffle => self.shuffle / self.basic - 1.0,
            PerturbMode::Top5 => self.top5 / self.basic - 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PerturbationStudy {
    pub repeats: usize,
    /// Mean fraction of training users identified as strong sensitive.
    pub strong_fraction: f64,
    pub strong: GroupPerturbation,
    pub non_strong: GroupPerturbation,
}

impl PerturbationStudy {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("group,users,basic_mse,shuffle_mse,top5_mse,shuffle_change,top5_change\n");
        for (name, g) in [("strong", &self.strong), ("non_strong", &self.non_strong)] {
            let _ = writeln!(
                out,
                "{name},{},{},{},{},{},{}",
                g.users,
                g.basic,
                g.shuffle,
                g.top5,
                g.change(PerturbMode::Shuffle),
                g.change(PerturbMode::Top5)
            );
        }
        out
    }
}

/// Trains `repeats` models, splits training users into strong and non-strong
/// sensitive users per model, and measures each group's test MSE with the
/// basic, shuffled and top-5-replaced orders.
pub fn perturbation_study(
    train: &Corpus,
    val: &Corpus,
    test: &Corpus,
    config: &TrainConfig,
    repeats: usize,
    exec: Exec,
) -> Result<PerturbationStudy> {
    check_repeats(repeats)?;
    let mut strong = GroupPerturbation::default();
    let mut non_strong = GroupPerturbation::default();
    let mut strong_fraction = 0.0;
    for r in 0..repeats {
        let fitted = fit_repeat(train, val, config, r, exec)?;
        let (encoder, model) = (&fitted.encoder, &fitted.outcome.model);
        let train_set = encoder.encode(train, config.ablation, exec)?;
        let groups = identify_sensitive_users(model, &train_set, exec)?;
        strong_fraction += groups.strong_fraction();
        let eval_seed = seed::stage(repeat_seed(config.seed, r), "perturb");
        for (users, acc) in [(&groups.strong, &mut strong), (&groups.non_strong, &mut non_strong)] {
            let mse = |mode| ablation_eval(model, encoder, test, config.ablation, mode, users, eval_seed, exec);
            acc.users += users.len() as f64;
            acc.basic += mse(PerturbMode::Basic)?;
            acc.shuffle += mse(PerturbMode::Shuffle)?;
            acc.top5 += mse(PerturbMode::Top5)?;
        }
    }
    let n = repeats as f64;
    for g in [&mut strong, &mut non_strong] {
        g.users /= n;
        g.basic /= n;
        g.shuffle /= n;
        g.top5 /= n;
    }
    Ok(PerturbationStudy {
        repeats,
        strong_fraction: strong_fraction / n,
        strong,
        non_strong,
    })
}

/// Repeated validation MSE per model variant.
pub fn variant_study(
    train: &Corpus,
    val: &Corpus,
    config: &TrainConfig,
    variants: &[Ablation],
    repeats: usize,
    exec: Exec,
) -> Result<Vec<(Ablation, RepeatedScore)>> {
    variants
        .iter()
        .map(|&ablation| {
            let c = TrainConfig { ablation, ..config.clone() };
            Ok((ablation, repeated_val_mse(train, val, &c, repeats, exec)?))
        })
        .collect()
}

/// Repeated validation MSE per order length / tree depth.
pub fn depth_study(
    train: &Corpus,
    val: &Corpus,
    config: &TrainConfig,
    depths: &[usize],
    repeats: usize,
    exec: Exec,
) -> Result<Vec<(usize, RepeatedScore)>> {
    depths
        .iter()
        .map(|&max_depth| {
            let c = TrainConfig { max_depth, ..config.clone() };
            Ok((max_depth, repeated_val_mse(train, val, &c, repeats, exec)?))
        })
        .collect()
}

pub fn scores_csv<K: std::fmt::Display>(key: &str, rows: &[(K, RepeatedScore)]) -> String {
    let mut out = format!("{key},repeats,mean_val_mse,min_val_mse,max_val_mse\n");
    for (k, s) in rows {
        let _ = writeln!(out, "{k},{},{},{},{}", s.runs.len(), s.mean(), s.min(), s.max());
    }
    out
}
