//! The pipeline stages behind each subcommand.
//!
//! Stages communicate only through files in the run directory:
//!
//! | command | reads | writes |
//! |---|---|---|
//! | `synth` | – | `synthetic.reviews`, `synthetic.vocab`, `planted_truth.csv` |
//! | `ingest` | corpus (+ vocabulary) | `corpus.reviews`, `corpus.vocab`, `split.csv`, `summary.csv`, matrices, `general.csv`, trees |
//! | `train` | ingest outputs | `model.ckpt`, `history.csv` |
//! | `eval` | ingest outputs, `model.ckpt` | `eval.csv`, `predictions.csv` |
//! | `explain` | ingest outputs | `explanations.tsv`, `explain_summary.csv`, `explain_rows.csv` |
//! | `analyze` | `corpus.reviews`, `corpus.vocab` | `consistency_*.csv` |
//! | `ablate` | ingest outputs | `perturbation.csv`, `variants.csv` |
//! | `sweep` | ingest outputs | `sweep.csv` |
//!
//! Every command also writes `<command>.manifest`.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use aotree::aspect_stats::{AspectMatrix, Side};
use aotree::corpus::synth::{generate_synthetic, PlantedTruth};
use aotree::corpus::{filter_corpus, parse_corpus, select_reviews, split_indices, Corpus};
use aotree::eval::{explain_metrics, mse_eval, ranking_ndcg, PerturbMode};
use aotree::experiment::{perturbation_study, repeated_val_mse, scores_csv, variant_study};
use aotree::model::{parse_checkpoint, write_checkpoint, Ablation, CheckpointMeta, Predictor};
use aotree::order::explanation_lines;
use aotree::pipeline::Encoder;
use aotree::tree::AoTree;
use aotree::{analysis, corpus, seed, train, Exec};
use log::{info, warn};

use crate::config::RunConfig;
use crate::exit::CliError;
use crate::manifest::{blob_hash, Manifest};

pub const SPLITS: [&str; 3] = ["train", "val", "test"];

/// One command invocation: reads and writes inside the run directory and
/// records both for the manifest.
pub struct Run<'a> {
    pub config: &'a RunConfig,
    manifest: Manifest,
}

impl<'a> Run<'a> {
    pub fn new(command: &str, config: &'a RunConfig) -> Result<Self, CliError> {
        fs::create_dir_all(&config.out).map_err(|e| CliError::io(&config.out, e))?;
        Ok(Run {
            config,
            manifest: Manifest {
                command: command.to_string(),
                config_hash: config.hash(),
                seed: config.seed()?,
                config: config.canonical(),
                ..Manifest::default()
            },
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.config.out.join(name)
    }

    fn record_input(&mut self, path: &Path, bytes: &[u8]) {
        let name = match path.strip_prefix(&self.config.out) {
            Ok(rel) => rel.display().to_string(),
            Err(_) => path.display().to_string(),
        };
        self.manifest.inputs.push((name, blob_hash(bytes)));
    }

    /// Reads an external file (or one inside the run directory) by path.
    pub fn read_path(&mut self, path: &Path) -> Result<String, CliError> {
        let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        self.record_input(path, text.as_bytes());
        Ok(text)
    }

    /// Reads a run-directory artifact that `producer` writes.
    pub fn read(&mut self, name: &str, producer: &str) -> Result<String, CliError> {
        let path = self.path(name);
        if !path.exists() {
            return Err(CliError::missing(&path, producer));
        }
        self.read_path(&path)
    }

    pub fn write(&mut self, name: &str, content: &str) -> Result<(), CliError> {
        let path = self.path(name);
        fs::write(&path, content).map_err(|e| CliError::io(&path, e))?;
        self.manifest.outputs.push((name.to_string(), blob_hash(content.as_bytes())));
        info!("wrote {}", path.display());
        Ok(())
    }

    pub fn finish(self) -> Result<(), CliError> {
        let name = format!("{}.manifest", self.manifest.command);
        let path = self.config.out.join(name);
        fs::write(&path, self.manifest.render()).map_err(|e| CliError::io(&path, e))
    }
}

pub fn planted_truth_csv(corpus: &Corpus, truth: &PlantedTruth) -> String {
    let mut out = String::from("user_id,sensitive,template\n");
    for (u, name) in corpus.users.iter().enumerate() {
        let template: Vec<&str> = truth.templates[u].iter().map(|&k| corpus.aspects[k].as_str()).collect();
        let _ = writeln!(out, "{name},{},{}", u8::from(truth.sensitive[u]), template.join(">"));
    }
    out
}

pub fn synth(config: &RunConfig) -> Result<(), CliError> {
    let mut run = Run::new("synth", config)?;
    let spec = config.synth_spec()?;
    let s = generate_synthetic(&spec, seed::stage(config.seed()?, "synth"))?;
    run.write("synthetic.reviews", &corpus::format_corpus(&s.corpus))?;
    run.write("synthetic.vocab", &vocabulary_text(&s.corpus))?;
    run.write("planted_truth.csv", &planted_truth_csv(&s.corpus, &s.truth))?;
    info!("generated {} reviews from {} users", s.corpus.len(), s.corpus.num_users());
    run.finish()
}

fn vocabulary_text(corpus: &Corpus) -> String {
    corpus
        .aspects
        .iter()
        .enumerate()
        .map(|(k, name)| format!("a{k}\t{name}\n"))
        .collect()
}

fn apply_vocabulary(corpus: &mut Corpus, text: &str, source: &Path) -> Result<(), CliError> {
    let names = corpus::parse_vocabulary(text).map_err(|e| CliError::invalid(format!("{}: {e}", source.display())))?;
    corpus::apply_vocabulary(corpus, &names);
    Ok(())
}

fn load_reviews(run: &mut Run, path: &Path, vocab: Option<&Path>) -> Result<Corpus, CliError> {
    let text = run.read_path(path)?;
    let mut corpus = parse_corpus(&text, run.config.rating_scale()?)
        .map_err(|e| CliError::invalid(format!("{}: {e}", path.display())))?;
    if let Some(v) = vocab {
        let text = run.read_path(v)?;
        apply_vocabulary(&mut corpus, &text, v)?;
    }
    Ok(corpus)
}

/// The ingested corpus with its vocabulary.
fn load_corpus(run: &mut Run) -> Result<Corpus, CliError> {
    let (reviews, vocab) = (run.path("corpus.reviews"), run.path("corpus.vocab"));
    for p in [&reviews, &vocab] {
        if !p.exists() {
            return Err(CliError::missing(p, "ingest"));
        }
    }
    load_reviews(run, &reviews, Some(&vocab))
}

pub fn split_csv(parts: &[Vec<usize>; 3]) -> String {
    let mut rows: Vec<(usize, &str)> = parts
        .iter()
        .zip(SPLITS)
        .flat_map(|(idx, name)| idx.iter().map(move |&i| (i, name)))
        .collect();
    rows.sort_unstable();
    let mut out = String::from("review,split\n");
    for (i, name) in rows {
        let _ = writeln!(out, "{i},{name}");
    }
    out
}

pub fn parse_split_csv(text: &str) -> Result<[Vec<usize>; 3], CliError> {
    let mut parts: [Vec<usize>; 3] = Default::default();
    let mut lines = text.lines();
    if lines.next() != Some("review,split") {
        return Err(CliError::invalid("split.csv: expected header `review,split`"));
    }
    for (n, line) in lines.enumerate() {
        let bad = || CliError::invalid(format!("split.csv line {}: `{line}`", n + 2));
        let (idx, name) = line.split_once(',').ok_or_else(bad)?;
        let idx: usize = idx.parse().map_err(|_| bad())?;
        let part = SPLITS.iter().position(|s| *s == name).ok_or_else(bad)?;
        parts[part].push(idx);
    }
    Ok(parts)
}

fn general_csv(corpus: &Corpus, encoder: &Encoder) -> String {
    let mut out = String::from("aspect,user_general,item_general\n");
    for (k, name) in corpus.aspects.iter().enumerate() {
        let _ = writeln!(out, "{name},{},{}", encoder.user_general[k], encoder.item_general[k]);
    }
    out
}

fn parse_general_csv(text: &str) -> Result<(Vec<f64>, Vec<f64>), CliError> {
    let mut user = Vec::new();
    let mut item = Vec::new();
    for (n, line) in text.lines().enumerate().skip(1) {
        let bad = || CliError::invalid(format!("general.csv line {}: `{line}`", n + 1));
        // Aspect names may contain commas; the two numbers are the last fields.
        let mut fields = line.rsplitn(3, ',');
        let i: f64 = fields.next().and_then(|v| v.parse().ok()).ok_or_else(bad)?;
        let u: f64 = fields.next().and_then(|v| v.parse().ok()).ok_or_else(bad)?;
        user.push(u);
        item.push(i);
    }
    Ok((user, item))
}

pub fn ingest(config: &RunConfig) -> Result<(), CliError> {
    let mut run = Run::new("ingest", config)?;
    let explicit = config.raw("corpus");
    let (source, vocab) = if explicit.is_empty() {
        let path = run.path("synthetic.reviews");
        if !path.exists() {
            return Err(CliError::missing(&path, "synth"));
        }
        let vocab = run.path("synthetic.vocab");
        (path, vocab.exists().then_some(vocab))
    } else {
        let v = config.raw("vocabulary");
        (PathBuf::from(explicit), (!v.is_empty()).then(|| PathBuf::from(v)))
    };
    let raw = load_reviews(&mut run, &source, vocab.as_deref())?;
    let filtered = filter_corpus(
        &raw,
        config.get("min_user_reviews")?,
        config.get("min_item_reviews")?,
        config.get("min_aspect_mentions")?,
    )?;
    info!("kept {} of {} reviews after filtering", filtered.len(), raw.len());

    // Canonical form: dense ids, re-read so that every later stage sees
    // exactly what is on disk.
    let reviews_text = corpus::format_corpus(&filtered);
    let vocab_text = vocabulary_text(&filtered);
    let mut corpus = parse_corpus(&reviews_text, config.rating_scale()?)?;
    apply_vocabulary(&mut corpus, &vocab_text, Path::new("corpus.vocab"))?;
    run.write("corpus.reviews", &reviews_text)?;
    run.write("corpus.vocab", &vocab_text)?;

    let s = corpus.summary();
    run.write(
        "summary.csv",
        &format!(
            "aspects,users,items,reviews,density\n{},{},{},{},{}\n",
            s.aspects, s.users, s.items, s.reviews, s.density
        ),
    )?;

    let parts = split_indices(&corpus, config.split_spec()?)?;
    run.write("split.csv", &split_csv(&parts))?;
    let train = select_reviews(&corpus, &parts[0])?;
    let tc = config.train_config()?;
    let encoder = Encoder::fit(&train, tc.max_depth, tc.seed, config.exec()?)?;
    run.write("user_matrix.csv", &encoder.user_matrix.to_csv(&corpus.users))?;
    run.write("item_matrix.csv", &encoder.item_matrix.to_csv(&corpus.items))?;
    run.write("general.csv", &general_csv(&corpus, &encoder))?;
    run.write("user_tree.txt", &encoder.user_tree.to_text())?;
    run.write("item_tree.txt", &encoder.item_tree.to_text())?;
    run.finish()
}

/// Everything `ingest` produced, reloaded and cross-checked.
pub struct Ingested {
    pub corpus: Corpus,
    pub splits: [Corpus; 3],
    pub encoder: Encoder,
}

fn load_matrix(run: &mut Run, name: &str, expected: &[String]) -> Result<AspectMatrix, CliError> {
    let text = run.read(name, "ingest")?;
    let (matrix, names) = AspectMatrix::from_csv(&text).map_err(|e| CliError::invalid(format!("{name}: {e}")))?;
    if names != expected {
        return Err(CliError::invalid(format!(
            "{name} does not match corpus.reviews; rerun `aotree ingest`"
        )));
    }
    Ok(matrix)
}

pub fn load_ingested(run: &mut Run) -> Result<Ingested, CliError> {
    let corpus = load_corpus(run)?;
    let parts = parse_split_csv(&run.read("split.csv", "ingest")?)?;
    let [train, val, test] = parts.map(|p| select_reviews(&corpus, &p));
    let splits = [train?, val?, test?];
    let user_matrix = load_matrix(run, "user_matrix.csv", &corpus.users)?;
    let item_matrix = load_matrix(run, "item_matrix.csv", &corpus.items)?;
    let (user_general, item_general) = parse_general_csv(&run.read("general.csv", "ingest")?)?;
    let mut tree = |name: &str| -> Result<AoTree, CliError> {
        let text = run.read(name, "ingest")?;
        AoTree::from_text(&text).map_err(|e| CliError::invalid(format!("{name}: {e}")))
    };
    let (user_tree, item_tree) = (tree("user_tree.txt")?, tree("item_tree.txt")?);
    let depth: usize = run.config.get("depth")?;
    if user_tree.max_depth != depth {
        return Err(CliError::invalid(format!(
            "trees were built with depth {} but depth = {depth}; rerun `aotree ingest`",
            user_tree.max_depth
        )));
    }
    let encoder = Encoder::from_parts(
        user_matrix,
        item_matrix,
        user_general,
        item_general,
        user_tree,
        item_tree,
        run.config.seed()?,
    )?;
    if encoder.aspects() != corpus.num_aspects() {
        return Err(CliError::invalid("stored matrices disagree with corpus.vocab; rerun `aotree ingest`"));
    }
    Ok(Ingested { corpus, splits, encoder })
}

pub fn train(config: &RunConfig) -> Result<(), CliError> {
    let mut run = Run::new("train", config)?;
    let data = load_ingested(&mut run)?;
    let tc = config.train_config()?;
    let exec = config.exec()?;
    let [train_split, val_split, _] = &data.splits;
    let train_set = data.encoder.encode(train_split, tc.ablation, exec)?;
    let val_set = data.encoder.encode(val_split, tc.ablation, exec)?;
    let dims = data.encoder.dims(tc.latent_dim);
    let outcome = match train::train(&train_set, &val_set, dims, train_split.mean_rating(), &tc, exec) {
        Ok(o) => o,
        Err(failure) => {
            run.write("history.csv", &failure.history.to_csv())?;
            run.finish()?;
            return Err(failure.into());
        }
    };
    let h = &outcome.history;
    info!(
        "best validation MSE {:.4} at epoch {} of {}",
        h.best_val_mse().unwrap_or(f64::NAN),
        h.best_epoch,
        h.epochs.len()
    );
    let meta = CheckpointMeta {
        seed: tc.seed,
        config_hash: config.hash(),
    };
    let ckpt = run.path("model.ckpt");
    write_checkpoint(&ckpt, &outcome.model, &meta)?;
    let bytes = fs::read(&ckpt).map_err(|e| CliError::io(&ckpt, e))?;
    run.manifest.outputs.push(("model.ckpt".into(), blob_hash(&bytes)));
    run.write("history.csv", &h.to_csv())?;
    run.finish()
}

fn load_model(run: &mut Run, data: &Ingested) -> Result<Predictor, CliError> {
    let path = run.path("model.ckpt");
    if !path.exists() {
        return Err(CliError::missing(&path, "train"));
    }
    let text = run.read_path(&path)?;
    let latent: usize = run.config.get("latent_dim")?;
    let (model, meta) = parse_checkpoint(&text, Some(data.encoder.dims(latent)))
        .map_err(|e| CliError::invalid(format!("model.ckpt: {e}; retrain with the current config")))?;
    let variant = run.config.get::<Ablation>("variant")?.variant();
    if model.variant != variant {
        return Err(CliError::invalid("model.ckpt was trained for another variant; rerun `aotree train`"));
    }
    if meta.config_hash != run.config.hash() {
        warn!("model.ckpt was trained under a different config");
    }
    Ok(model)
}

pub fn eval(config: &RunConfig) -> Result<(), CliError> {
    let mut run = Run::new("eval", config)?;
    let data = load_ingested(&mut run)?;
    let model = load_model(&mut run, &data)?;
    let exec = config.exec()?;
    let ablation: Ablation = config.get("variant")?;
    let k = config.top_k()?;
    let mut table = format!("split,interactions,mse,ndcg_at_{k}\n");
    let mut predictions = String::from("split,user_id,item_id,rating,prediction\n");
    for (name, split) in SPLITS.iter().zip(&data.splits) {
        let set = data.encoder.encode(split, ablation, exec)?;
        let mse = mse_eval(&model, &set, exec)?;
        let ndcg = ranking_ndcg(&model, &set, k, exec).map(|v| v.to_string()).unwrap_or_default();
        let _ = writeln!(table, "{name},{},{mse},{ndcg}", set.len());
        info!("{name}: MSE {mse:.4}");
        if *name != "train" {
            for (x, p) in set.iter().zip(model.predict_all(&set, exec)?) {
                let _ = writeln!(
                    predictions,
                    "{name},{},{},{},{p}",
                    data.corpus.users[x.user], data.corpus.items[x.item], x.rating
                );
            }
        }
    }
    run.write("eval.csv", &table)?;
    run.write("predictions.csv", &predictions)?;
    run.finish()
}

pub fn explain(config: &RunConfig) -> Result<(), CliError> {
    let mut run = Run::new("explain", config)?;
    let data = load_ingested(&mut run)?;
    let ablation: Ablation = config.get("variant")?;
    let test = &data.splits[2];
    let pairs = test
        .reviews
        .iter()
        .map(|r| Ok(((r.user, r.item, r.distinct_order()), data.encoder.order_for(r.user, r.item, ablation)?)))
        .collect::<Result<Vec<_>, CliError>>()?;
    let lines = explanation_lines(&data.corpus, pairs.iter().map(|((u, i, _), o)| (*u, *i, o)));
    run.write("explanations.tsv", &lines)?;
    let report = explain_metrics(&pairs, config.top_k()?)?;
    info!("explanation nDCG@{} {:.4}, F1 {:.4}", report.k, report.ndcg, report.f1);
    run.write("explain_summary.csv", &report.summary_csv())?;
    run.write("explain_rows.csv", &report.rows_csv(&data.corpus))?;
    run.finish()
}

pub fn analyze(config: &RunConfig) -> Result<(), CliError> {
    let mut run = Run::new("analyze", config)?;
    let corpus = load_corpus(&mut run)?;
    let pairs: usize = config.get("consistency_pairs")?;
    let exec = config.exec()?;
    let mut summary = String::from("side,entities,intra_pairs,inter_pairs,positive_fraction,mean_dis\n");
    for side in [Side::User, Side::Item] {
        let s = seed::stage(config.seed()?, &format!("consistency-{}", side.name()));
        let report = analysis::consistency_distribution(&corpus, side, pairs, s, exec)?;
        let _ = writeln!(
            summary,
            "{},{},{},{},{},{}",
            side.name(),
            report.records.len(),
            report.intra_pairs,
            report.inter_pairs,
            report.positive_fraction(),
            report.mean_dis()
        );
        info!("{}: {:.1}% positive", side.name(), 100.0 * report.positive_fraction());
        run.write(&format!("consistency_{}.csv", side.name()), &report.records_csv(&corpus))?;
        run.write(&format!("consistency_{}_cdf.csv", side.name()), &report.cdf_csv())?;
    }
    run.write("consistency_summary.csv", &summary)?;
    run.finish()
}

pub fn ablate(config: &RunConfig) -> Result<(), CliError> {
    let mut run = Run::new("ablate", config)?;
    let data = load_ingested(&mut run)?;
    let [train_split, val_split, test_split] = &data.splits;
    let tc = config.train_config()?;
    let repeats: usize = config.get("repeats")?;
    let exec = config.exec()?;
    let study = perturbation_study(train_split, val_split, test_split, &tc, repeats, exec)?;
    info!(
        "strong sensitive users: {:.1}% (shuffle {:+.1}%, top-5 {:+.1}%)",
        100.0 * study.strong_fraction,
        100.0 * study.strong.change(PerturbMode::Shuffle),
        100.0 * study.strong.change(PerturbMode::Top5)
    );
    run.write("perturbation.csv", &study.to_csv())?;
    let variants: Vec<Ablation> = config.list("ablate.variants")?;
    let rows = variant_study(train_split, val_split, &tc, &variants, repeats, exec)?;
    run.write("variants.csv", &scores_csv("variant", &rows))?;
    run.finish()
}

pub fn sweep(config: &RunConfig) -> Result<(), CliError> {
    let mut run = Run::new("sweep", config)?;
    let data = load_ingested(&mut run)?;
    let [train_split, val_split, _] = &data.splits;
    let repeats: usize = config.get("repeats")?;
    let exec = config.exec()?;
    let configs = config.sweep_configs()?;
    info!("sweeping {} settings x {repeats} repeats", configs.len());
    let rows = train::sweep(&configs, Exec::Sequential, |c| {
        repeated_val_mse(train_split, val_split, c, repeats, exec).map(|s| s.mean())
    })?;
    run.write("sweep.csv", &train::sweep_csv(&rows))?;
    run.finish()
}

/// `synth` (unless a corpus is configured), then `ingest`, `train`, `eval`,
/// `explain` and `analyze`.
pub fn all(config: &RunConfig) -> Result<(), CliError> {
    if config.raw("corpus").is_empty() {
        synth(config)?;
    }
    ingest(config)?;
    train(config)?;
    eval(config)?;
    explain(config)?;
    analyze(config)
}
