//! Property suites for tree induction: structural invariants over random
//! matrices and agreement of the chosen split with an exhaustive search that
//! evaluates the Split Expense with its exponential normalizer in plain
//! arithmetic.

use std::collections::BTreeSet;

use aotree::aspect_stats::{AspectMatrix, Side};
use aotree::tree::{build_tree, choose_split, rank_positions, AoTree, SE_EPSILON, SE_FLOOR};
use aotree::Exec;
use proptest::prelude::*;

/// Importance-like values: a mix of exact zeros and two-decimal values in
/// `[1, 5]`, as produced by the importance formulas after rounding.
fn value() -> impl Strategy<Value = f64> {
    prop_oneof![
        1 => Just(0.0),
        4 => (100u32..=500).prop_map(|c| c as f64 / 100.0),
    ]
}

fn instance(max_rows: usize, max_cols: usize) -> impl Strategy<Value = (Vec<Vec<f64>>, Vec<f64>)> {
    (1..=max_rows, 1..=max_cols).prop_flat_map(|(m, l)| {
        (
            prop::collection::vec(prop::collection::vec(value(), l), m),
            prop::collection::vec(0.0..5.0f64, l),
        )
    })
}

fn check_invariants(tree: &AoTree, matrix: &AspectMatrix, members: &[usize]) -> Result<(), TestCaseError> {
    let nodes = tree.nodes();
    let expected: BTreeSet<usize> = members.iter().copied().collect();
    prop_assert_eq!(nodes[0].members.iter().copied().collect::<BTreeSet<_>>(), expected.clone());

    let mut seen = BTreeSet::new();
    for leaf in tree.leaves() {
        for &m in &leaf.members {
            prop_assert!(seen.insert(m), "entity {} is in two leaves", m);
        }
    }
    prop_assert_eq!(&seen, &expected);

    for (idx, node) in nodes.iter().enumerate() {
        prop_assert!(node.depth <= tree.max_depth);
        let Some(split) = node.split else { continue };
        let (left, right) = (&nodes[split.left], &nodes[split.right]);
        prop_assert!(!left.members.is_empty() && !right.members.is_empty());
        prop_assert_eq!(left.parent, Some(idx));
        prop_assert_eq!(right.parent, Some(idx));
        prop_assert_eq!(left.depth, node.depth + 1);
        for &i in &left.members {
            prop_assert!(matrix.get(i, split.aspect) <= split.value);
        }
        for &i in &right.members {
            prop_assert!(matrix.get(i, split.aspect) > split.value);
        }
        let mut union: Vec<usize> = left.members.iter().chain(&right.members).copied().collect();
        union.sort_unstable();
        prop_assert_eq!(&union, &node.members);
    }

    for &m in members {
        let path = tree.path_for(m);
        prop_assert!(path.len() <= tree.max_depth.min(matrix.cols()));
        let distinct: BTreeSet<_> = path.iter().collect();
        prop_assert_eq!(distinct.len(), path.len(), "path {:?} repeats an aspect", path);
        prop_assert_eq!(tree.route(matrix.row(m)), path);
    }
    Ok(())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn trees_satisfy_structural_invariants(
        (rows, general) in instance(30, 6),
        depth in 1usize..7,
        parallel in any::<bool>(),
    ) {
        let matrix = AspectMatrix::from_rows(rows).unwrap();
        let members: Vec<usize> = (0..matrix.rows()).collect();
        let exec = if parallel { Exec::Parallel } else { Exec::Sequential };
        let tree = build_tree(&matrix, &members, &general, depth, Side::User, exec).unwrap();
        check_invariants(&tree, &matrix, &members)?;

        let back = AoTree::from_text(&tree.to_text()).unwrap();
        prop_assert_eq!(&back, &tree);
        let other = if parallel { Exec::Sequential } else { Exec::Parallel };
        prop_assert_eq!(build_tree(&matrix, &members, &general, depth, Side::User, other).unwrap(), tree);
    }

    #[test]
    fn member_subsets_only_contain_their_members(
        (rows, general) in instance(20, 5),
        mask in prop::collection::vec(any::<bool>(), 20),
    ) {
        let matrix = AspectMatrix::from_rows(rows).unwrap();
        let members: Vec<usize> = (0..matrix.rows()).filter(|&i| mask[i]).collect();
        let tree = build_tree(&matrix, &members, &general, 4, Side::Item, Exec::Sequential).unwrap();
        check_invariants(&tree, &matrix, &members)?;
        for (i, &kept) in mask.iter().enumerate().take(matrix.rows()) {
            prop_assert_eq!(tree.contains(i), kept);
        }
    }
}

/// Split value computed from scratch: members sorted descending, matched
/// position `m * rank / l` clamped to `[1, m]`, linear interpolation between
/// the bracketing sorted values.
fn oracle_split_value(values: &[f64], rank: usize, l: usize) -> Option<f64> {
    if values.len() < 2 || values.iter().all(|&v| v == 0.0) {
        return None;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let m = sorted.len();
    let pu = ((m * rank) as f64 / l as f64).clamp(1.0, m as f64);
    let lo = pu.floor();
    if pu == lo {
        return Some(sorted[lo as usize - 1]);
    }
    let (a, b) = (sorted[lo as usize - 1], sorted[lo as usize]);
    Some(a + (pu - lo) * (b - a))
}

struct Exact {
    aspect: usize,
    se: f64,
    flagged: bool,
}

/// Split Expense with the normalizer `10^(N_r * N_l)` evaluated directly.
fn oracle_expense(rows: &[Vec<f64>], aspect: usize, sv: f64) -> Option<Exact> {
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
    let (res_l, res_r) = (residual(&left), residual(&right));
    let se_l = (spread(&left, aspect) / (sep * res_l + SE_EPSILON)).max(SE_FLOOR);
    let se_r = (spread(&right, aspect) / (sep * res_r + SE_EPSILON)).max(SE_FLOOR);
    let nv = 10f64.powi((left.len() * right.len()) as i32);
    Some(Exact {
        aspect,
        se: nv * se_l * se_r,
        flagged: sep < SE_EPSILON || res_l < SE_EPSILON || res_r < SE_EPSILON,
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn chosen_split_matches_exhaustive_search((rows, general) in instance(8, 5)) {
        let m = rows.len();
        prop_assume!(m >= 2);
        let l = rows[0].len();
        let matrix = AspectMatrix::from_rows(rows.clone()).unwrap();
        let members: Vec<usize> = (0..m).collect();
        let ranks = rank_positions(&general);

        let exact: Vec<Exact> = (0..l)
            .filter_map(|k| {
                let values: Vec<f64> = rows.iter().map(|r| r[k]).collect();
                oracle_split_value(&values, ranks[k], l).and_then(|sv| oracle_expense(&rows, k, sv))
            })
            .collect();
        let chosen = choose_split(&matrix, &members, &ranks, &vec![false; l], Exec::Sequential);

        let Some(best) = exact.iter().map(|c| c.se).min_by(f64::total_cmp) else {
            prop_assert!(chosen.is_none());
            return Ok(());
        };
        let chosen = chosen.expect("a valid split exists");
        prop_assert!(chosen.left_count * chosen.right_count <= 30);
        // Candidates within rounding of the minimum are tied; among them the
        // unflagged one with the lowest id wins.
        let tied: Vec<&Exact> = exact.iter().filter(|c| (c.se - best).abs() <= 1e-9 * best).collect();
        let winner = tied
            .iter()
            .min_by_key(|c| (c.flagged, c.aspect))
            .unwrap();
        if tied.len() == 1 {
            prop_assert_eq!(chosen.aspect, winner.aspect);
        } else {
            prop_assert!(tied.iter().any(|c| c.aspect == chosen.aspect));
        }

        let tree = build_tree(&matrix, &members, &general, 1, Side::User, Exec::Sequential).unwrap();
        prop_assert_eq!(tree.root().split.map(|s| s.aspect), Some(chosen.aspect));
    }
}
