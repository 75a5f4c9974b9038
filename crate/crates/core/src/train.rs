//! Mini-batch Adam with early stopping, and a config sweep driver.

use std::fmt::{self, Write as _};
use std::time::Instant;

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::eval::mse_eval;
use crate::model::{Ablation, Dims, Interaction, Params, Predictor};
use crate::par::Exec;
use crate::seed;

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const ADAM_EPSILON: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub l2: f64,
    pub dropout: f64,
    pub batch_size: usize,
    pub latent_dim: usize,
    /// Tree depth limit, which is also the aspect-order length.
    pub max_depth: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
    pub ablation: Ablation,
    /// Fill the `seconds` column of the history. Off by default so that runs
    /// are byte-reproducible.
    pub record_time: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.005,
            l2: 1e-2,
            dropout: 0.0,
            batch_size: 128,
            latent_dim: 8,
            max_depth: 5,
            max_epochs: 40,
            patience: 10,
            seed: 42,
            ablation: Ablation::Full,
            record_time: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = |v: f64| v.is_finite() && v > 0.0;
        if !positive(self.learning_rate) {
            return Err(Error::invalid("learning rate must be positive"));
        }
        if !(self.l2.is_finite() && self.l2 >= 0.0) {
            return Err(Error::invalid("l2 must be non-negative"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::invalid("dropout must lie in [0, 1)"));
        }
        if self.batch_size == 0 || self.latent_dim == 0 || self.max_depth == 0 {
            return Err(Error::invalid("batch size, latent dim and max depth must be positive"));
        }
        if self.patience == 0 {
            return Err(Error::invalid("patience must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Params,
    pub v: Params,
    pub step: u64,
}

impl AdamState {
    pub fn new(params: &Params) -> Self {
        AdamState {
            m: params.zeros_like(),
            v: params.zeros_like(),
            step: 0,
        }
    }
}

/// One bias-corrected Adam update. L2 is added to the gradient of every
/// non-bias group before the moments are updated.
pub fn adam_step(params: &mut Params, grads: &Params, state: &mut AdamState, lr: f64, l2: f64) -> Result<()> {
    if params.dims != grads.dims || params.dims != state.m.dims {
        return Err(Error::invalid("parameter, gradient and optimizer shapes differ"));
    }
    for (group, g) in grads.iter() {
        if g.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!("non-finite gradient in {}", group.name())));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let (c1, c2) = (1.0 - BETA1.powi(t), 1.0 - BETA2.powi(t));
    for (group, g) in grads.iter() {
        let decay = if group.is_bias() { 0.0 } else { l2 };
        let w = params.get_mut(group);
        let m = state.m.get_mut(group);
        let v = state.v.get_mut(group);
        for idx in 0..g.len() {
            let grad = g[idx] + decay * w[idx];
            m[idx] = BETA1 * m[idx] + (1.0 - BETA1) * grad;
            v[idx] = BETA2 * v[idx] + (1.0 - BETA2) * grad * grad;
            w[idx] -= lr * (m[idx] / c1) / ((v[idx] / c2).sqrt() + ADAM_EPSILON);
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_mse: f64,
    pub val_mse: f64,
    pub seconds: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct History {
    pub epochs: Vec<EpochRecord>,
    /// Epoch (1-based) of the returned parameters; 0 when none ran.
    pub best_epoch: usize,
    pub stopped_early: bool,
}

impl History {
    pub fn best_val_mse(&self) -> Option<f64> {
        self.epochs.iter().find(|r| r.epoch == self.best_epoch).map(|r| r.val_mse)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,train_mse,val_mse,seconds\n");
        for r in &self.epochs {
            let secs = r.seconds.map(|s| format!("{s:.3}")).unwrap_or_default();
            let _ = writeln!(out, "{},{},{},{secs}", r.epoch, r.train_mse, r.val_mse);
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub model: Predictor,
    pub history: History,
}

/// Training aborted; the history up to the failure is kept.
#[derive(Debug)]
pub struct TrainFailure {
    pub error: Error,
    pub history: History,
}

impl fmt::Display for TrainFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} (after {} epochs)", self.error, self.history.epochs.len())
    }
}

impl std::error::Error for TrainFailure {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.error)
    }
}

impl From<TrainFailure> for Error {
    fn from(f: TrainFailure) -> Self {
        f.error
    }
}

/// Trains a fresh model. Parameters are initialized from the config seed with
/// the global bias at `mean_rating`; the returned model is the one with the
/// lowest validation MSE.
pub fn train(
    train_set: &[Interaction],
    val_set: &[Interaction],
    dims: Dims,
    mean_rating: f64,
    config: &TrainConfig,
    exec: Exec,
) -> Result<TrainOutcome, TrainFailure> {
    let fail = |error: Error, history: &History| TrainFailure {
        error,
        history: history.clone(),
    };
    let mut history = History::default();
    config.validate().map_err(|e| fail(e, &history))?;
    if train_set.is_empty() || val_set.is_empty() {
        return Err(fail(Error::invalid("training and validation sets must be non-empty"), &history));
    }
    if dims.seq_len != config.max_depth || dims.latent != config.latent_dim {
        return Err(fail(Error::invalid("model dimensions disagree with the config"), &history));
    }

    let params = Params::init(dims, mean_rating, seed::stage(config.seed, "init"));
    let mut model = Predictor::new(params, config.ablation.variant());
    let mut best = model.clone();
    let mut best_val = f64::INFINITY;
    let mut state = AdamState::new(&model.params);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let (shuffle_seed, dropout_seed) = (seed::stage(config.seed, "shuffle"), seed::stage(config.seed, "dropout"));
    let mut since_best = 0;

    for epoch in 1..=config.max_epochs {
        let started = Instant::now();
        order.shuffle(&mut seed::rng(seed::derive(shuffle_seed, &[epoch as u64])));
        for (b, idx) in order.chunks(config.batch_size).enumerate() {
            let batch: Vec<&Interaction> = idx.iter().map(|&i| &train_set[i]).collect();
            let batch_seed = seed::derive(dropout_seed, &[epoch as u64, b as u64]);
            let grad = model
                .batch_gradient(&batch, config.dropout, batch_seed, exec)
                .map_err(|e| fail(e, &history))?;
            adam_step(&mut model.params, &grad.grads, &mut state, config.learning_rate, config.l2)
                .map_err(|e| fail(e, &history))?;
        }
        let train_mse = mse_eval(&model, train_set, exec).map_err(|e| fail(e, &history))?;
        let val_mse = mse_eval(&model, val_set, exec).map_err(|e| fail(e, &history))?;
        history.epochs.push(EpochRecord {
            epoch,
            train_mse,
            val_mse,
            seconds: config.record_time.then(|| started.elapsed().as_secs_f64()),
        });
        log::debug!("epoch {epoch}: train {train_mse:.5} val {val_mse:.5}");
        if !val_mse.is_finite() || !train_mse.is_finite() {
            return Err(fail(
                Error::Numeric(format!("training diverged at epoch {epoch}")),
                &history,
            ));
        }
        if val_mse < best_val {
            best_val = val_mse;
            best = model.clone();
            history.best_epoch = epoch;
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= config.patience {
                history.stopped_early = true;
                break;
            }
        }
    }
    Ok(TrainOutcome { model: best, history })
}

#[derive(Debug)]
pub struct SweepRow {
    pub config: TrainConfig,
    pub result: Result<f64>,
}

/// Runs `run` on every config (in parallel under [`Exec::Parallel`]) and
/// returns the rows sorted by validation MSE, failures last. A failing config
/// does not stop the others.
pub fn sweep<F>(configs: &[TrainConfig], exec: Exec, run: F) -> Result<Vec<SweepRow>>
where
    F: Fn(&TrainConfig) -> Result<f64> + Sync + Send,
{
    if configs.is_empty() {
        return Err(Error::invalid("sweep needs at least one config"));
    }
    let mut rows: Vec<SweepRow> = exec
        .map(configs, |c| SweepRow {
            config: c.clone(),
            result: run(c),
        });
    rows.sort_by(|a, b| match (&a.result, &b.result) {
        (Ok(x), Ok(y)) => x.total_cmp(y),
        (Ok(_), Err(_)) => std::cmp::Ordering::Less,
        (Err(_), Ok(_)) => std::cmp::Ordering::Greater,
        (Err(_), Err(_)) => std::cmp::Ordering::Equal,
    });
    Ok(rows)
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from(
        "learning_rate,l2,dropout,batch_size,latent_dim,max_depth,variant,max_epochs,patience,seed,val_mse,error\n",
    );
    for row in rows {
        let c = &row.config;
        let (mse, err) = match &row.result {
            Ok(v) => (v.to_string(), String::new()),
            Err(e) => (String::new(), e.to_string().replace([',', '\n'], ";")),
        };
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{mse},{err}",
            c.learning_rate,
            c.l2,
            c.dropout,
            c.batch_size,
            c.latent_dim,
            c.max_depth,
            c.ablation,
            c.max_epochs,
            c.patience,
            c.seed
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Group;

    fn dims() -> Dims {
        Dims {
            aspects: 6,
            seq_len: 3,
            latent: 4,
            users: 8,
            items: 6,
        }
    }

    /// Ratings driven by the first aspect's user importance and a user bias.
    fn data(n: usize, seed_value: u64) -> Vec<Interaction> {
        use rand::Rng;
        let mut rng = seed::rng(seed_value);
        (0..n)
            .map(|_| {
                let user = rng.random_range(0..8);
                let item = rng.random_range(0..6);
                let ids: Vec<usize> = (0..3).map(|_| rng.random_range(0..6)).collect();
                let useq: Vec<f64> = (0..3).map(|_| rng.random_range(0.0..1.0)).collect();
                let iseq: Vec<f64> = (0..3).map(|_| rng.random_range(0.0..1.0)).collect();
                let rating = 2.0 + 2.0 * useq[0] * iseq[0] + 0.1 * user as f64;
                Interaction {
                    user,
                    item,
                    rating,
                    ids,
                    useq,
                    iseq,
                }
            })
            .collect()
    }

    fn config() -> TrainConfig {
        TrainConfig {
            learning_rate: 0.01,
            batch_size: 16,
            latent_dim: 4,
            max_depth: 3,
            max_epochs: 5,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn adam_hand_step() {
        let d = Dims {
            aspects: 1,
            seq_len: 1,
            latent: 1,
            users: 1,
            items: 1,
        };
        let mut p = Params::zeros(d);
        let mut g = Params::zeros(d);
        g.get_mut(Group::W1)[0] = 1.0;
        let mut state = AdamState::new(&p);
        adam_step(&mut p, &g, &mut state, 0.1, 0.0).unwrap();
        assert!((p.get(Group::W1)[0] + 0.1).abs() < 1e-8);
        let before = p.clone();
        let zero = Params::zeros(d);
        let mut fresh = AdamState::new(&p);
        adam_step(&mut p, &zero, &mut fresh, 0.1, 0.0).unwrap();
        assert_eq!(p, before);
    }

    #[test]
    fn non_finite_gradient_names_the_group() {
        let mut p = Params::zeros(dims());
        let mut g = Params::zeros(dims());
        g.get_mut(Group::Wk)[2] = f64::NAN;
        let mut state = AdamState::new(&p);
        let err = adam_step(&mut p, &g, &mut state, 0.1, 0.0).unwrap_err();
        assert!(err.to_string().contains("w_key"));
    }

    #[test]
    fn zero_epochs_returns_initial_params() {
        let (tr, va) = (data(40, 1), data(10, 2));
        let cfg = TrainConfig { max_epochs: 0, ..config() };
        let out = train(&tr, &va, dims(), 3.0, &cfg, Exec::Sequential).unwrap();
        assert!(out.history.epochs.is_empty());
        assert_eq!(out.model.params, Params::init(dims(), 3.0, seed::stage(cfg.seed, "init")));
    }

    #[test]
    fn training_mse_decreases_and_is_reproducible() {
        let (tr, va) = (data(200, 3), data(40, 4));
        let out = train(&tr, &va, dims(), 3.0, &config(), Exec::Sequential).unwrap();
        let mse: Vec<f64> = out.history.epochs.iter().map(|r| r.train_mse).collect();
        assert!(mse[0] > mse[1] && mse[1] > mse[2], "{mse:?}");
        let again = train(&tr, &va, dims(), 3.0, &config(), Exec::Parallel).unwrap();
        assert_eq!(out, again);
        assert!(out.history.to_csv().lines().nth(1).unwrap().ends_with(','));
    }

    #[test]
    fn patience_one_stops_after_first_worse_epoch() {
        let (tr, va) = (data(100, 5), data(30, 6));
        // A large step overshoots after the first epoch.
        let cfg = TrainConfig {
            learning_rate: 0.5,
            patience: 1,
            max_epochs: 20,
            ..config()
        };
        let out = train(&tr, &va, dims(), 3.0, &cfg, Exec::Sequential).unwrap();
        let h = &out.history;
        let worse_at = h.epochs.windows(2).position(|w| w[1].val_mse >= w[0].val_mse);
        if let Some(i) = worse_at {
            assert_eq!(h.epochs.len(), i + 2);
            assert!(h.stopped_early);
        }
        let best = h.epochs.iter().map(|r| r.val_mse).fold(f64::INFINITY, f64::min);
        assert_eq!(h.best_val_mse(), Some(best));
        assert_eq!(mse_eval(&out.model, &va, Exec::Sequential).unwrap(), best);
    }

    #[test]
    fn huge_l2_shrinks_weights() {
        let (tr, va) = (data(100, 7), data(20, 8));
        let run = |l2| {
            let cfg = TrainConfig { l2, max_epochs: 30, patience: 100, ..config() };
            let out = train(&tr, &va, dims(), 3.0, &cfg, Exec::Sequential).unwrap();
            out.model.params.weight_norm()
        };
        let init = Params::init(dims(), 3.0, seed::stage(config().seed, "init")).weight_norm();
        let (free, shrunk) = (run(0.0), run(100.0));
        assert!(shrunk < 0.5 * init && shrunk < 0.5 * free, "{shrunk} vs {free} (init {init})");
    }

    #[test]
    fn sweep_sorts_and_tolerates_failures() {
        let configs = vec![
            TrainConfig { seed: 1, ..config() },
            TrainConfig { seed: 2, ..config() },
            TrainConfig { seed: 1, ..config() },
            TrainConfig { learning_rate: -1.0, ..config() },
        ];
        let rows = sweep(&configs, Exec::Parallel, |c| {
            c.validate()?;
            Ok(c.seed as f64 * 0.5)
        })
        .unwrap();
        assert_eq!(rows.len(), 4);
        assert!(rows[3].result.is_err());
        assert_eq!(rows[0].result.as_ref().unwrap(), rows[1].result.as_ref().unwrap());
        let csv = sweep_csv(&rows);
        assert_eq!(csv.lines().count(), 5);
        assert!(sweep(&[], Exec::Sequential, |_| Ok(0.0)).is_err());
    }
}
