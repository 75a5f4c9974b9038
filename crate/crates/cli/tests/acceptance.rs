//! Acceptance suite: one `[PASS]` or `[FAIL]` line per criterion.
//!
//! Criteria 1–6 check arithmetic, tree induction, gradients, the causal mask
//! and metric identities against independent oracles. Criteria 7–10 run the
//! repeated-seed studies on the bundled planted corpus (`data/planted.reviews`)
//! and criterion 11 runs the command line twice. Exits non-zero if any
//! criterion fails.

use std::collections::BTreeSet;
use std::fs;
use std::panic::{self, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use aotree::analysis::consistency_distribution;
use aotree::aspect_stats::{AspectMatrix, Side};
use aotree::corpus::{load_corpus, split_corpus, Corpus, SplitSpec};
use aotree::eval::{mse_eval, ndcg_at_k, PerturbMode};
use aotree::experiment::{depth_study, perturbation_study, variant_study, PerturbationStudy, RepeatedScore};
use aotree::model::{Ablation, Dims, Group, Interaction, Params, Predictor, Variant};
use aotree::pipeline::Encoder;
use aotree::train::TrainConfig;
use aotree::tree::{build_tree, interpolate, matched_position, rank_positions, split_value, AoTree, SE_EPSILON, SE_FLOOR};
use aotree::{seed, Exec};
use rand::Rng;

const EXEC: Exec = Exec::Parallel;
const REPEATS: usize = 3;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn secs(d: Duration) -> String {
    format!("{:.3}s", d.as_secs_f64())
}

fn data_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data")
}

// ---------------------------------------------------------------------------
// 1. Split-value arithmetic on the worked example: 5 members, aspect ranked 2
// of 6, bracketing sorted values 3.544 (position 1) and 2.211 (position 2).

fn c1() -> Outcome {
    let start = Instant::now();
    let pu = matched_position(5, 2, 6);
    let printed_pu = (pu * 1000.0).round() / 1000.0;
    // The worked expansion (1.667 - 1) / (2 - 1) * (3.544 - 2.211) + 2.211,
    // evaluated by hand: 0.667 * 1.333 = 0.889111, plus 2.211.
    let expansion = interpolate(printed_pu, 2.211, 3.544);
    let exact_expansion = 3.100111;
    // With exact arithmetic on sorted (descending) member values the split
    // value lies between the two bracketing values.
    let sv = split_value(&[2.211, 1.0, 3.544, 0.5, 0.2], 2, 6).unwrap();
    let elapsed = start.elapsed();
    // The worked example's printed result, 4.433, follows from neither
    // pairing of the bracketing values and is reported, not asserted.
    let printed_result = 4.433;
    let pass = printed_pu == 1.667
        && (expansion - exact_expansion).abs() < 1e-9
        && (expansion * 1000.0).round() / 1000.0 == 3.100
        && (expansion - printed_result).abs() > 1.0
        && sv > 2.211
        && sv < 3.544
        && elapsed < Duration::from_millis(1);
    outcome(
        pass,
        format!(
            "PU = {printed_pu} ({pu:.6}); expansion = {expansion:.9} (3.100 at printed precision); \
             printed 4.433 off by {:.3}; {}",
            printed_result - expansion,
            secs(elapsed)
        ),
    )
}

// ---------------------------------------------------------------------------
// 2. Split selection against an exhaustive search with the normalizer
// 10^(N_r * N_l) evaluated directly.

fn brute_split_value(values: &[f64], rank: usize, l: usize) -> Option<f64> {
    if values.len() < 2 || values.iter().all(|&v| v == 0.0) {
        return None;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let m = sorted.len();
    let pu = ((m * rank) as f64 / l as f64).clamp(1.0, m as f64);
    let lo = pu.floor() as usize;
    if pu == lo as f64 {
        return Some(sorted[lo - 1]);
    }
    Some(sorted[lo - 1] + (pu - lo as f64) * (sorted[lo] - sorted[lo - 1]))
}

fn brute_expense(rows: &[Vec<f64>], aspect: usize, sv: f64) -> Option<(f64, usize)> {
    let (left, right): (Vec<&Vec<f64>>, Vec<&Vec<f64>>) = rows.iter().partition(|r| r[aspect] <= sv);
    if left.is_empty() || right.is_empty() {
        return None;
    }
    let l = rows[0].len();
    let mean = |c: &[&Vec<f64>], o: usize| c.iter().map(|r| r[o]).sum::<f64>() / c.len() as f64;
    let spread = |c: &[&Vec<f64>], o: usize| {
        let mu = mean(c, o);
        c.iter().map(|r| (r[o] - mu).abs()).sum::<f64>()
    };
    let residual = |c: &[&Vec<f64>]| (0..l).filter(|&o| o != aspect).map(|o| spread(c, o)).sum::<f64>();
    let sep = (mean(&right, aspect) - mean(&left, aspect)).abs();
    let se_l = (spread(&left, aspect) / (sep * residual(&left) + SE_EPSILON)).max(SE_FLOOR);
    let se_r = (spread(&right, aspect) / (sep * residual(&right) + SE_EPSILON)).max(SE_FLOOR);
    let cells = left.len() * right.len();
    Some((10f64.powi(cells as i32) * se_l * se_r, cells))
}

fn c2() -> Outcome {
    let start = Instant::now();
    let mut rng = seed::rng(2);
    let (mut instances, mut agree, mut ties, mut max_cells) = (0, 0, 0, 0);
    let mut first_miss = String::new();
    while instances < 300 {
        let m = rng.random_range(2..=8);
        let l = rng.random_range(1..=5);
        let rows: Vec<Vec<f64>> = (0..m)
            .map(|_| {
                (0..l)
                    .map(|_| if rng.random_bool(0.2) { 0.0 } else { rng.random_range(100..=500) as f64 / 100.0 })
                    .collect()
            })
            .collect();
        let general: Vec<f64> = (0..l).map(|_| rng.random_range(0.0..5.0)).collect();
        let ranks = rank_positions(&general);
        let exact: Vec<(usize, f64, usize)> = (0..l)
            .filter_map(|k| {
                let values: Vec<f64> = rows.iter().map(|r| r[k]).collect();
                let sv = brute_split_value(&values, ranks[k], l)?;
                brute_expense(&rows, k, sv).map(|(se, cells)| (k, se, cells))
            })
            .collect();
        let Some(best) = exact.iter().map(|c| c.1).min_by(f64::total_cmp) else {
            continue;
        };
        instances += 1;
        max_cells = max_cells.max(exact.iter().map(|c| c.2).max().unwrap());
        let argmin: BTreeSet<usize> = exact.iter().filter(|c| (c.1 - best).abs() <= 1e-9 * best).map(|c| c.0).collect();
        ties += usize::from(argmin.len() > 1);
        let matrix = AspectMatrix::from_rows(rows.clone()).unwrap();
        let members: Vec<usize> = (0..m).collect();
        let tree = build_tree(&matrix, &members, &general, 1, Side::User, Exec::Sequential).unwrap();
        match tree.root().split {
            Some(s) if argmin.contains(&s.aspect) => agree += 1,
            other => {
                if first_miss.is_empty() {
                    first_miss = format!("; first miss: chose {:?}, argmin {argmin:?}", other.map(|s| s.aspect));
                }
            }
        }
    }
    let elapsed = start.elapsed();
    outcome(
        agree == instances && instances >= 200 && max_cells <= 30 && elapsed < Duration::from_secs(10),
        format!(
            "{agree}/{instances} instances agree ({ties} with exact ties), max N_r*N_l = {max_cells}, {}{first_miss}",
            secs(elapsed)
        ),
    )
}

// ---------------------------------------------------------------------------
// 3. Structural invariants of trees grown on random synthetic corpora.

fn tree_violations(tree: &AoTree, matrix: &AspectMatrix, members: &[usize]) -> Vec<String> {
    let mut v = Vec::new();
    let nodes = tree.nodes();
    let expected: BTreeSet<usize> = members.iter().copied().collect();
    let mut seen = BTreeSet::new();
    for leaf in tree.leaves() {
        for &m in &leaf.members {
            if !seen.insert(m) {
                v.push(format!("entity {m} in two leaves"));
            }
        }
    }
    if seen != expected {
        v.push("leaves do not partition the members".into());
    }
    for node in nodes {
        if node.depth > tree.max_depth {
            v.push("depth bound exceeded".into());
        }
        let Some(split) = node.split else { continue };
        let (left, right) = (&nodes[split.left], &nodes[split.right]);
        if left.members.iter().any(|&i| matrix.get(i, split.aspect) > split.value)
            || right.members.iter().any(|&i| matrix.get(i, split.aspect) <= split.value)
            || left.members.is_empty()
            || right.members.is_empty()
        {
            v.push(format!("unsound split on aspect {}", split.aspect));
        }
    }
    for &m in members {
        let path = tree.path_for(m);
        if path.iter().collect::<BTreeSet<_>>().len() != path.len() {
            v.push(format!("path {path:?} repeats an aspect"));
        }
        if path.len() > tree.max_depth || tree.route(matrix.row(m)) != path {
            v.push(format!("bad path for {m}"));
        }
    }
    match AoTree::from_text(&tree.to_text()) {
        Ok(back) if &back == tree => {}
        _ => v.push("text round trip changed the tree".into()),
    }
    v
}

fn c3() -> Outcome {
    use aotree::corpus::synth::{generate_synthetic, SynthSpec};
    let start = Instant::now();
    let mut rng = seed::rng(3);
    let (mut corpora, mut trees, mut violations) = (0, 0, Vec::new());
    for c in 0..120u64 {
        let items = rng.random_range(3..30);
        let spec = SynthSpec {
            users: rng.random_range(5..60),
            items,
            aspects: rng.random_range(4..16),
            template_len: 3,
            min_reviews: 1,
            max_reviews: rng.random_range(1..8usize).min(items),
            sensitivity: rng.random_range(0.0..1.0),
            insensitive_mentions: rng.random_range(1..4),
            ..SynthSpec::default()
        };
        let corpus = generate_synthetic(&spec, c).unwrap().corpus;
        corpora += 1;
        let depth = rng.random_range(1..8);
        let enc = Encoder::fit(&corpus, depth, c, EXEC).unwrap();
        for (tree, matrix) in [(&enc.user_tree, &enc.user_matrix), (&enc.item_tree, &enc.item_matrix)] {
            let members: Vec<usize> = tree.root().members.clone();
            violations.extend(tree_violations(tree, matrix, &members));
            trees += 1;
        }
    }
    let elapsed = start.elapsed();
    outcome(
        violations.is_empty() && corpora >= 100 && elapsed < Duration::from_secs(30),
        format!(
            "{trees} trees over {corpora} corpora, {} violations, {}{}",
            violations.len(),
            secs(elapsed),
            violations.first().map(|v| format!("; first: {v}")).unwrap_or_default()
        ),
    )
}

// ---------------------------------------------------------------------------
// 4. Analytic gradients against central finite differences.

fn random_params(dims: Dims, rng: &mut seed::Rng) -> Params {
    let mut params = Params::zeros(dims);
    for group in Group::ALL {
        for v in params.get_mut(group) {
            *v = rng.random_range(-0.5..0.5);
        }
    }
    for v in params.get_mut(Group::LnGain) {
        *v += 1.0;
    }
    params
}

fn random_interaction(dims: Dims, rng: &mut seed::Rng) -> Interaction {
    let mut pool: Vec<usize> = (0..dims.aspects).collect();
    let ids: Vec<usize> = (0..dims.seq_len).map(|_| pool.swap_remove(rng.random_range(0..pool.len()))).collect();
    let importance = |rng: &mut seed::Rng| if rng.random_bool(0.2) { 0.0 } else { rng.random_range(1.0..5.0) };
    Interaction {
        user: rng.random_range(0..dims.users),
        item: rng.random_range(0..dims.items),
        rating: rng.random_range(1.0..5.0),
        ids,
        useq: (0..dims.seq_len).map(|_| importance(rng)).collect(),
        iseq: (0..dims.seq_len).map(|_| importance(rng)).collect(),
    }
}

fn random_dims(rng: &mut seed::Rng, max_e: usize) -> Dims {
    let seq_len = rng.random_range(1..=max_e);
    Dims {
        aspects: seq_len + rng.random_range(0..4),
        seq_len,
        latent: rng.random_range(1..=4),
        users: 3,
        items: 3,
    }
}

const GRAD_FLOOR: f64 = 1e-5;

fn c4() -> Outcome {
    let start = Instant::now();
    let mut rng = seed::rng(4);
    let (mut worst, mut checked, mut worst_at) = (0.0f64, 0usize, String::new());
    let mut groups_seen = BTreeSet::new();
    let variants = [
        Variant::default(),
        Variant { attention: false, ..Variant::default() },
        Variant { layer_norm: false, ..Variant::default() },
        Variant { position: false, ..Variant::default() },
    ];
    let draws = 60;
    for draw in 0..draws {
        let dims = random_dims(&mut rng, 4);
        let mut model = Predictor::new(random_params(dims, &mut rng), variants[draw % variants.len()]);
        let xs: Vec<Interaction> = (0..3).map(|_| random_interaction(dims, &mut rng)).collect();
        let batch: Vec<&Interaction> = xs.iter().collect();
        let analytic = model.batch_gradient(&batch, 0.0, 0, Exec::Sequential).unwrap().grads;
        let loss = |m: &Predictor| {
            batch.iter().map(|x| (m.predict(x).unwrap() - x.rating).powi(2)).sum::<f64>() / batch.len() as f64
        };
        for group in Group::ALL {
            for idx in 0..model.params.get(group).len() {
                // Fourth-order central difference.
                let h = 1e-4;
                let orig = model.params.get(group)[idx];
                let mut at = |offset: f64| {
                    model.params.get_mut(group)[idx] = orig + offset;
                    loss(&model)
                };
                let numeric = (at(-2.0 * h) - 8.0 * at(-h) + 8.0 * at(h) - at(2.0 * h)) / (12.0 * h);
                model.params.get_mut(group)[idx] = orig;
                let a = analytic.get(group)[idx];
                // Gradients below the floor are compared on an absolute scale; the
                // stencil's rounding noise is around 1e-10.
                let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(GRAD_FLOOR);
                if rel > worst {
                    worst = rel;
                    worst_at = format!("{}[{idx}] analytic {a:e} numeric {numeric:e}", group.name());
                }
                checked += 1;
                groups_seen.insert(group.name());
            }
        }
    }
    let elapsed = start.elapsed();
    outcome(
        worst < 1e-4 && groups_seen.len() == Group::ALL.len() && elapsed < Duration::from_secs(30),
        format!(
            "{checked} entries over {draws} draws and {} groups, max relative error {worst:.2e} (floor {GRAD_FLOOR:e}; {worst_at}), {}",
            groups_seen.len(),
            secs(elapsed)
        ),
    )
}

// ---------------------------------------------------------------------------
// 5. Causal mask: later positions cannot move earlier sequence-feature rows.

fn c5() -> Outcome {
    let mut rng = seed::rng(5);
    let (mut instances, mut comparisons, mut changed) = (0, 0, 0);
    for _ in 0..30 {
        let dims = random_dims(&mut rng, 6);
        let model = Predictor::new(random_params(dims, &mut rng), Variant::default());
        let x = random_interaction(dims, &mut rng);
        let base = model.forward(&x, None).unwrap();
        instances += 1;
        for t in 0..dims.seq_len {
            let mut y = x.clone();
            for k in t + 1..dims.seq_len {
                y.ids[k] = (y.ids[k] + 1 + rng.random_range(0..dims.aspects - 1)) % dims.aspects;
                y.useq[k] = rng.random_range(1.0..5.0);
                y.iseq[k] = rng.random_range(1.0..5.0);
            }
            let other = model.forward(&y, None).unwrap();
            let rows = 0..(t + 1) * dims.latent;
            comparisons += 1;
            let same = base.sf[rows.clone()]
                .iter()
                .zip(&other.sf[rows])
                .all(|(a, b)| a.to_bits() == b.to_bits());
            changed += usize::from(!same);
        }
    }
    outcome(
        changed == 0 && instances >= 20,
        format!("{comparisons} prefix comparisons over {instances} instances, {changed} changed bits"),
    )
}

// ---------------------------------------------------------------------------
// 6. Metric identities.

fn c6(planted: &Planted) -> Outcome {
    let mut rng = seed::rng(6);
    let mut worst_ideal = 0.0f64;
    for _ in 0..500 {
        let n = rng.random_range(1..12);
        let mut rel: Vec<f64> = (0..n).map(|_| rng.random_range(0..5) as f64).collect();
        rel[0] = rel[0].max(1.0);
        rel.sort_by(|a, b| b.total_cmp(a));
        worst_ideal = worst_ideal.max((ndcg_at_k(&rel, rng.random_range(1..=n)) - 1.0).abs());
    }
    let two = ndcg_at_k(&[0.0, 1.0], 2);

    // A model with every weight zero predicts its global bias.
    let test = &planted.splits.2;
    let enc = &planted.encoder;
    let ratings: Vec<f64> = test.reviews.iter().map(|r| r.rating).collect();
    let n = ratings.len() as f64;
    let mean = ratings.iter().sum::<f64>() / n;
    let variance = ratings.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / n;
    let mut params = Params::zeros(enc.dims(8));
    params.set(Group::GlobalBias, vec![mean]).unwrap();
    let model = Predictor::new(params, Variant::default());
    let data = enc.encode(test, Ablation::Full, EXEC).unwrap();
    let mse = mse_eval(&model, &data, EXEC).unwrap();
    outcome(
        worst_ideal < 1e-12 && (two - 0.6309).abs() < 1e-4 && (mse - variance).abs() < 1e-9,
        format!(
            "ideal NDCG max |1 - v| = {worst_ideal:.1e}; two-item NDCG = {two:.6}; \
             bias-only MSE {mse:.12} vs split variance {variance:.12}"
        ),
    )
}

// ---------------------------------------------------------------------------
// 7–10. Studies on the bundled planted corpus.

struct Planted {
    corpus: Corpus,
    splits: (Corpus, Corpus, Corpus),
    encoder: Encoder,
    config: TrainConfig,
}

fn planted() -> Planted {
    let dir = data_dir();
    let corpus = load_corpus(&dir.join("planted.reviews"), Some(&dir.join("planted.vocab")), 5.0).unwrap();
    let config = TrainConfig::default();
    let spec = SplitSpec {
        seed: seed::stage(config.seed, "split"),
        ..SplitSpec::default()
    };
    let splits = split_corpus(&corpus, spec).unwrap();
    let encoder = Encoder::fit(&splits.0, config.max_depth, config.seed, EXEC).unwrap();
    Planted {
        corpus,
        splits,
        encoder,
        config,
    }
}

fn pct(x: f64) -> String {
    format!("{:+.1}%", 100.0 * x)
}

fn c7(p: &Planted) -> (Outcome, Option<PerturbationStudy>) {
    let start = Instant::now();
    let report = consistency_distribution(&p.corpus, Side::User, 10_000, seed::stage(p.config.seed, "consistency-user"), EXEC).unwrap();
    let positive = report.positive_fraction();
    let (train, val, test) = &p.splits;
    let study = perturbation_study(train, val, test, &p.config, REPEATS, EXEC).unwrap();
    let elapsed = start.elapsed();
    let (s, n) = (&study.strong, &study.non_strong);
    let (s_shuffle, s_top5, n_shuffle) = (s.change(PerturbMode::Shuffle), s.change(PerturbMode::Top5), n.change(PerturbMode::Shuffle));
    let a = (0.6..=0.8).contains(&positive);
    let b = s_shuffle >= 0.03 && s_top5 > 0.0;
    let c = n_shuffle.abs() < 0.5 * s_shuffle;
    let timely = elapsed < Duration::from_secs(600);
    let detail = format!(
        "(a) {:.1}% users with dis > 0 [{}]; (b) strong shuffle {}, top-5 {} [{}]; \
         (c) non-strong shuffle {} vs half of {} [{}]; {REPEATS} models, {}",
        100.0 * positive,
        if a { "ok" } else { "out of range" },
        pct(s_shuffle),
        pct(s_top5),
        if b { "ok" } else { "too small" },
        pct(n_shuffle),
        pct(s_shuffle),
        if c { "ok" } else { "too large" },
        secs(elapsed)
    );
    (outcome(a && b && c && timely, detail), Some(study))
}

fn c8(study: Option<&PerturbationStudy>) -> Outcome {
    let Some(study) = study else {
        return outcome(false, "perturbation study did not run");
    };
    let f = study.strong_fraction;
    outcome(
        (0.15..=0.35).contains(&f),
        format!(
            "strong sensitive fraction {f:.3} (mean of {} models, {:.0} of {:.0} training users)",
            study.repeats,
            study.strong.users,
            study.strong.users + study.non_strong.users
        ),
    )
}

fn scores(s: &RepeatedScore) -> String {
    let runs: Vec<String> = s.runs.iter().map(|v| format!("{v:.4}")).collect();
    format!("{:.4} [{}]", s.mean(), runs.join(" "))
}

fn c9(p: &Planted) -> (Outcome, RepeatedScore) {
    let (train, val, _) = &p.splits;
    let variants = [Ablation::Full, Ablation::NoAttention, Ablation::NoLayerNorm];
    let rows = variant_study(train, val, &p.config, &variants, REPEATS, EXEC).unwrap();
    let (full, no_att, no_ln) = (&rows[0].1, &rows[1].1, &rows[2].1);
    let pass = no_att.mean() > full.mean() && no_ln.mean() > full.mean();
    (
        outcome(
            pass,
            format!(
                "validation MSE full {}, no-attention {}, no-layer-norm {}",
                scores(full),
                scores(no_att),
                scores(no_ln)
            ),
        ),
        full.clone(),
    )
}

fn c10(p: &Planted, at_default: RepeatedScore) -> Outcome {
    let (train, val, _) = &p.splits;
    assert_eq!(p.config.max_depth, 5);
    let rows = depth_study(train, val, &p.config, &[1, 15], REPEATS, EXEC).unwrap();
    let (e1, e15) = (&rows[0].1, &rows[1].1);
    let pass = at_default.mean() < e1.mean() && at_default.mean() < e15.mean();
    outcome(
        pass,
        format!(
            "validation MSE e=1 {}, e=5 {}, e=15 {}",
            scores(e1),
            scores(&at_default),
            scores(e15)
        ),
    )
}

// ---------------------------------------------------------------------------
// 11. Two command-line runs with the same config.

fn cli_run(out: &Path) -> bool {
    let dir = data_dir();
    let sets = [
        format!("corpus={}", dir.join("small.reviews").display()),
        format!("vocabulary={}", dir.join("small.vocab").display()),
        "repeats=1".to_string(),
        "sweep.depth=1,3".to_string(),
    ];
    ["all", "ablate", "sweep"].iter().all(|command| {
        let mut cmd = Command::new(env!("CARGO_BIN_EXE_aotree"));
        cmd.arg(command).arg("--out").arg(out).env("RUST_LOG", "error");
        for s in &sets {
            cmd.arg("--set").arg(s);
        }
        cmd.status().map(|s| s.success()).unwrap_or(false)
    })
}

fn c11() -> Outcome {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    if !cli_run(a.path()) || !cli_run(b.path()) {
        return outcome(false, "pipeline run failed");
    }
    let mut names: Vec<String> = fs::read_dir(a.path())
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    names.sort();
    let csvs = names.iter().filter(|n| n.ends_with(".csv")).count();
    let differing: Vec<&String> = names
        .iter()
        .filter(|n| fs::read(a.path().join(n)).ok() != fs::read(b.path().join(n)).ok())
        .collect();
    outcome(
        differing.is_empty() && csvs >= 15,
        format!(
            "{} files ({csvs} CSV) compared, {} differ{}",
            names.len(),
            differing.len(),
            differing.first().map(|n| format!(": {n}")).unwrap_or_default()
        ),
    )
}

// ---------------------------------------------------------------------------

fn guarded<T>(f: impl FnOnce() -> T) -> Result<T, String> {
    panic::catch_unwind(AssertUnwindSafe(f)).map_err(|e| {
        e.downcast_ref::<String>()
            .cloned()
            .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_else(|| "panicked".into())
    })
}

fn main() {
    // Failures are reported on the criterion's own line.
    panic::set_hook(Box::new(|_| {}));
    let mut results: Vec<(usize, Outcome)> = Vec::new();
    let mut record = |n: usize, r: Result<Outcome, String>| {
        let o = r.unwrap_or_else(|e| outcome(false, format!("error: {e}")));
        println!("[{}] C{n} {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        results.push((n, o));
    };
    record(1, guarded(c1));
    record(2, guarded(c2));
    record(3, guarded(c3));
    record(4, guarded(c4));
    record(5, guarded(c5));
    match guarded(planted) {
        Ok(p) => {
            record(6, guarded(|| c6(&p)));
            let (seven, study) = guarded(|| c7(&p)).unwrap_or_else(|e| (outcome(false, format!("error: {e}")), None));
            record(7, Ok(seven));
            record(8, Ok(c8(study.as_ref())));
            match guarded(|| c9(&p)) {
                Ok((nine, full)) => {
                    record(9, Ok(nine));
                    record(10, guarded(|| c10(&p, full)));
                }
                Err(e) => {
                    record(9, Err(e.clone()));
                    record(10, Err(e));
                }
            }
        }
        Err(e) => {
            for n in 6..=10 {
                record(n, Err(format!("planted corpus unavailable: {e}")));
            }
        }
    }
    record(11, guarded(c11));
    let failed: Vec<String> = results.iter().filter(|(_, o)| !o.pass).map(|(n, _)| format!("C{n}")).collect();
    println!("acceptance: {} of {} criteria pass", results.len() - failed.len(), results.len());
    if !failed.is_empty() {
        println!("failing: {}", failed.join(", "));
        std::process::exit(1);
    }
}
