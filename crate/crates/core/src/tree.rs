//! Aspect-order trees.
//!
//! A tree splits a set of entities (users or items) on one aspect at a time.
//! The threshold of a candidate aspect is obtained by matching the aspect's
//! rank in the opposite side's general importance vector to a rank among the
//! node's members (`PU = m' * PI / l`) and interpolating the members' sorted
//! importance values at that fractional position. Among candidates the split
//! with the lowest Split Expense wins:
//!
//! ```text
//! SE   = 10^(N_r * N_l) * SE_l * SE_r
//! SE_c = SE_c1 / (SE_2 * SE_c3 + eps)
//! SE_c1 = sum_{i in c} |X_ik - mean_c(k)|           within-child spread on k
//! SE_2  = |mean_r(k) - mean_l(k)|                   separation on k
//! SE_c3 = sum_{o != k} sum_{i in c} |X_io - mean_c(o)|   residual spread
//! ```
//!
//! The normalizer overflows for any realistic node, so candidates are
//! compared on `ln SE`. A child whose `SE_c` is exactly zero is floored at
//! [`SE_FLOOR`] before taking the logarithm.
//!
//! The root-to-leaf sequence of split aspects is the entity's aspect order.

use std::collections::HashMap;
use std::fmt::Write as _;

use crate::aspect_stats::{AspectMatrix, Side};
use crate::corpus::AspectId;
use crate::error::{Error, Result};
use crate::par::Exec;

/// Added to Split Expense denominators.
pub const SE_EPSILON: f64 = 1e-12;
/// Lower bound applied to a child's Split Expense before the logarithm.
pub const SE_FLOOR: f64 = 1e-100;

/// Rank positions (1 = largest value). Ties go to the lower aspect id.
pub fn rank_positions(general: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..general.len()).collect();
    order.sort_by(|&a, &b| general[b].total_cmp(&general[a]).then(a.cmp(&b)));
    let mut ranks = vec![0; general.len()];
    for (pos, &k) in order.iter().enumerate() {
        ranks[k] = pos + 1;
    }
    ranks
}

/// Member rank matched to an aspect rank: `PU = members * rank / aspects`.
pub fn matched_position(members: usize, rank: usize, aspects: usize) -> f64 {
    (members * rank) as f64 / aspects as f64
}

/// Linear interpolation between the values at the integer positions that
/// bracket `position`: `v_lo + (pos - lo) / (hi - lo) * (v_hi - v_lo)` with
/// `lo = floor(pos)` and `hi = lo + 1`.
pub fn interpolate(position: f64, value_lo: f64, value_hi: f64) -> f64 {
    let lo = position.floor();
    let hi = lo + 1.0;
    value_lo + (position - lo) / (hi - lo) * (value_hi - value_lo)
}

/// Split value for one aspect over the node's member values.
///
/// Values are sorted descending; the matched position is clamped into
/// `[1, members]`. Returns `None` for fewer than two members or when every
/// value is zero.
pub fn split_value(values: &[f64], rank: usize, aspects: usize) -> Option<f64> {
    let count = values.len();
    if count < 2 || values.iter().all(|&v| v == 0.0) {
        return None;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let position = matched_position(count, rank, aspects).clamp(1.0, count as f64);
    let lo = position.floor() as usize;
    if position.fract() == 0.0 {
        return Some(sorted[lo - 1]);
    }
    Some(interpolate(position, sorted[lo - 1], sorted[lo]))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitCandidate {
    pub aspect: AspectId,
    pub split_value: f64,
    pub log_se: f64,
    pub left_count: usize,
    pub right_count: usize,
    /// Some denominator term fell below [`SE_EPSILON`].
    pub flagged: bool,
}

impl SplitCandidate {
    fn key(&self) -> (f64, bool, AspectId) {
        (self.log_se, self.flagged, self.aspect)
    }

    /// Total order used for selection: lower `log_se`, then unflagged, then
    /// lower aspect id.
    pub fn better_than(&self, other: &SplitCandidate) -> bool {
        let (a, b) = (self.key(), other.key());
        a.0.total_cmp(&b.0)
            .then(a.1.cmp(&b.1))
            .then(a.2.cmp(&b.2))
            .is_lt()
    }
}

/// The per-child pieces of the Split Expense, exposed for inspection.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChildExpense {
    pub within: f64,
    pub residual: f64,
}

/// Partition of `members` by `X[., aspect] > split_value` (right) or not (left).
pub fn partition(matrix: &AspectMatrix, members: &[usize], aspect: AspectId, split_value: f64) -> (Vec<usize>, Vec<usize>) {
    members.iter().partition(|&&i| matrix.get(i, aspect) <= split_value)
}

fn child_expense(matrix: &AspectMatrix, child: &[usize], aspect: AspectId) -> (ChildExpense, Vec<f64>) {
    let l = matrix.cols();
    let mut means = vec![0.0; l];
    for &i in child {
        for (m, v) in means.iter_mut().zip(matrix.row(i)) {
            *m += v;
        }
    }
    for m in &mut means {
        *m /= child.len() as f64;
    }
    let mut within = 0.0;
    let mut residual = 0.0;
    for &i in child {
        for (o, (&v, &mean)) in matrix.row(i).iter().zip(&means).enumerate() {
            let dev = (v - mean).abs();
            if o == aspect {
                within += dev;
            } else {
                residual += dev;
            }
        }
    }
    (ChildExpense { within, residual }, means)
}

/// Split Expense of splitting `members` on `aspect` at `split_value`.
/// `None` when either side would be empty.
pub fn split_expense(
    matrix: &AspectMatrix,
    members: &[usize],
    aspect: AspectId,
    split_value: f64,
) -> Option<SplitCandidate> {
    let (left, right) = partition(matrix, members, aspect, split_value);
    if left.is_empty() || right.is_empty() {
        return None;
    }
    let (left_se, left_means) = child_expense(matrix, &left, aspect);
    let (right_se, right_means) = child_expense(matrix, &right, aspect);
    let separation = (right_means[aspect] - left_means[aspect]).abs();
    let flagged = separation < SE_EPSILON || left_se.residual < SE_EPSILON || right_se.residual < SE_EPSILON;
    let child = |c: ChildExpense| c.within / (separation * c.residual + SE_EPSILON);
    let (se_l, se_r) = (child(left_se), child(right_se));
    let normalizer = (left.len() * right.len()) as f64 * std::f64::consts::LN_10;
    Some(SplitCandidate {
        aspect,
        split_value,
        log_se: normalizer + se_l.max(SE_FLOOR).ln() + se_r.max(SE_FLOOR).ln(),
        left_count: left.len(),
        right_count: right.len(),
        flagged,
    })
}

/// Best split among aspects not in `excluded`, or `None` if no aspect yields
/// a valid split.
pub fn choose_split(
    matrix: &AspectMatrix,
    members: &[usize],
    ranks: &[usize],
    excluded: &[bool],
    exec: Exec,
) -> Option<SplitCandidate> {
    let l = matrix.cols();
    let candidates = exec.map_range(l, |k| {
        if excluded[k] {
            return None;
        }
        let values: Vec<f64> = members.iter().map(|&i| matrix.get(i, k)).collect();
        let sv = split_value(&values, ranks[k], l)?;
        split_expense(matrix, members, k, sv)
    });
    candidates.into_iter().flatten().fold(None, |best, c| match best {
        Some(b) if !c.better_than(&b) => Some(b),
        _ => Some(c),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Split {
    pub aspect: AspectId,
    pub value: f64,
    pub left: usize,
    pub right: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Node {
    pub depth: usize,
    /// Sorted entity ids.
    pub members: Vec<usize>,
    pub split: Option<Split>,
    pub parent: Option<usize>,
}

/// Nodes are stored in pre-order; index 0 is the root.
#[derive(Debug, Clone, PartialEq)]
pub struct AoTree {
    pub side: Side,
    pub max_depth: usize,
    pub aspects: usize,
    nodes: Vec<Node>,
    leaf_of: HashMap<usize, usize>,
}

/// Builds a tree over `members` (rows of `matrix`) whose split thresholds are
/// matched against `opposite_general`, the general importance vector of the
/// other side.
pub fn build_tree(
    matrix: &AspectMatrix,
    members: &[usize],
    opposite_general: &[f64],
    max_depth: usize,
    side: Side,
    exec: Exec,
) -> Result<AoTree> {
    if max_depth == 0 {
        return Err(Error::invalid("tree depth must be at least 1"));
    }
    if opposite_general.len() != matrix.cols() {
        return Err(Error::invalid(format!(
            "general vector has {} entries for {} aspects",
            opposite_general.len(),
            matrix.cols()
        )));
    }
    if let Some(&bad) = members.iter().find(|&&i| i >= matrix.rows()) {
        return Err(Error::invalid(format!("member {bad} has no matrix row")));
    }
    let ranks = rank_positions(opposite_general);
    let mut members = members.to_vec();
    members.sort_unstable();
    members.dedup();

    let mut nodes = Vec::new();
    let mut excluded = vec![false; matrix.cols()];
    grow(matrix, &ranks, members, 0, None, max_depth, &mut excluded, &mut nodes, exec);
    Ok(AoTree::from_nodes(side, max_depth, matrix.cols(), nodes))
}

#[allow(clippy::too_many_arguments)]
fn grow(
    matrix: &AspectMatrix,
    ranks: &[usize],
    members: Vec<usize>,
    depth: usize,
    parent: Option<usize>,
    max_depth: usize,
    excluded: &mut [bool],
    nodes: &mut Vec<Node>,
    exec: Exec,
) -> usize {
    let index = nodes.len();
    let choice = if members.len() > 1 && depth < max_depth {
        choose_split(matrix, &members, ranks, excluded, exec)
    } else {
        None
    };
    let Some(best) = choice else {
        nodes.push(Node { depth, members, split: None, parent });
        return index;
    };
    let (left, right) = partition(matrix, &members, best.aspect, best.split_value);
    nodes.push(Node { depth, members, split: None, parent });
    excluded[best.aspect] = true;
    let l = grow(matrix, ranks, left, depth + 1, Some(index), max_depth, excluded, nodes, exec);
    let r = grow(matrix, ranks, right, depth + 1, Some(index), max_depth, excluded, nodes, exec);
    excluded[best.aspect] = false;
    nodes[index].split = Some(Split {
        aspect: best.aspect,
        value: best.split_value,
        left: l,
        right: r,
    });
    index
}

impl AoTree {
    fn from_nodes(side: Side, max_depth: usize, aspects: usize, nodes: Vec<Node>) -> Self {
        let mut leaf_of = HashMap::new();
        for (idx, node) in nodes.iter().enumerate() {
            if node.split.is_none() {
                for &m in &node.members {
                    leaf_of.insert(m, idx);
                }
            }
        }
        AoTree {
            side,
            max_depth,
            aspects,
            nodes,
            leaf_of,
        }
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn root(&self) -> &Node {
        &self.nodes[0]
    }

    pub fn leaves(&self) -> impl Iterator<Item = &Node> {
        self.nodes.iter().filter(|n| n.split.is_none())
    }

    pub fn contains(&self, entity: usize) -> bool {
        self.leaf_of.contains_key(&entity)
    }

    fn path_to(&self, mut node: usize) -> Vec<AspectId> {
        let mut path = Vec::new();
        while let Some(parent) = self.nodes[node].parent {
            path.push(self.nodes[parent].split.expect("parent is internal").aspect);
            node = parent;
        }
        path.reverse();
        path
    }

    /// Aspect order of a member entity, root first. Entities that were not
    /// members when the tree was built follow the all-zero route.
    pub fn path_for(&self, entity: usize) -> Vec<AspectId> {
        match self.leaf_of.get(&entity) {
            Some(&leaf) => self.path_to(leaf),
            None => self.route(&vec![0.0; self.aspects]),
        }
    }

    /// Aspect order obtained by comparing `row` against each split value.
    pub fn route(&self, row: &[f64]) -> Vec<AspectId> {
        let mut path = Vec::new();
        let mut node = 0;
        while let Some(split) = self.nodes[node].split {
            path.push(split.aspect);
            node = if row[split.aspect] > split.value {
                split.right
            } else {
                split.left
            };
        }
        path
    }

    /// One node per line in pre-order: `depth, aspect_id|LEAF, split_value, member_ids`.
    pub fn to_text(&self) -> String {
        let mut out = format!(
            "# aotree side={} max_depth={} aspects={}\n",
            self.side.name(),
            self.max_depth,
            self.aspects
        );
        for node in &self.nodes {
            let members: Vec<String> = node.members.iter().map(usize::to_string).collect();
            match node.split {
                Some(s) => {
                    let _ = writeln!(out, "{}, {}, {}, {}", node.depth, s.aspect, s.value, members.join(" "));
                }
                None => {
                    let _ = writeln!(out, "{}, LEAF, -, {}", node.depth, members.join(" "));
                }
            }
        }
        out
    }

    pub fn from_text(text: &str) -> Result<AoTree> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, header) = lines.next().ok_or_else(|| Error::parse(1, "empty tree file"))?;
        let mut side = None;
        let mut max_depth = None;
        let mut aspects = None;
        for token in header.trim_start_matches('#').split_whitespace() {
            match token.split_once('=') {
                Some(("side", v)) => side = Some(v.parse::<Side>()?),
                Some(("max_depth", v)) => max_depth = v.parse::<usize>().ok(),
                Some(("aspects", v)) => aspects = v.parse::<usize>().ok(),
                _ => {}
            }
        }
        let (Some(side), Some(max_depth), Some(aspects)) = (side, max_depth, aspects) else {
            return Err(Error::parse(1, "tree header needs side, max_depth and aspects"));
        };

        struct Row {
            line: usize,
            depth: usize,
            split: Option<(AspectId, f64)>,
            members: Vec<usize>,
        }
        let mut rows = Vec::new();
        for (idx, line) in lines {
            let line_no = idx + 1;
            let fields: Vec<&str> = line.splitn(4, ',').map(str::trim).collect();
            if fields.len() != 4 {
                return Err(Error::parse(line_no, "expected `depth, aspect|LEAF, value, members`"));
            }
            let depth = fields[0]
                .parse()
                .map_err(|_| Error::parse(line_no, "invalid depth"))?;
            let split = if fields[1] == "LEAF" {
                None
            } else {
                let aspect: AspectId = fields[1]
                    .parse()
                    .map_err(|_| Error::parse(line_no, "invalid aspect id"))?;
                if aspect >= aspects {
                    return Err(Error::parse(line_no, "aspect id out of range"));
                }
                let value: f64 = fields[2]
                    .parse()
                    .map_err(|_| Error::parse(line_no, "invalid split value"))?;
                Some((aspect, value))
            };
            let members = fields[3]
                .split_whitespace()
                .map(|t| t.parse::<usize>().map_err(|_| Error::parse(line_no, "invalid member id")))
                .collect::<Result<Vec<_>>>()?;
            rows.push(Row {
                line: line_no,
                depth,
                split,
                members,
            });
        }
        if rows.is_empty() {
            return Err(Error::parse(1, "tree has no nodes"));
        }

        let mut nodes: Vec<Node> = Vec::with_capacity(rows.len());
        fn take(rows: &[Row], cursor: &mut usize, depth: usize, parent: Option<usize>, nodes: &mut Vec<Node>) -> Result<usize> {
            let row = rows
                .get(*cursor)
                .ok_or_else(|| Error::parse(rows.last().map_or(1, |r| r.line), "truncated tree"))?;
            if row.depth != depth {
                return Err(Error::parse(row.line, format!("expected depth {depth}, found {}", row.depth)));
            }
            *cursor += 1;
            let index = nodes.len();
            nodes.push(Node {
                depth,
                members: row.members.clone(),
                split: None,
                parent,
            });
            if let Some((aspect, value)) = row.split {
                let left = take(rows, cursor, depth + 1, Some(index), nodes)?;
                let right = take(rows, cursor, depth + 1, Some(index), nodes)?;
                nodes[index].split = Some(Split { aspect, value, left, right });
            }
            Ok(index)
        }
        let mut cursor = 0;
        take(&rows, &mut cursor, 0, None, &mut nodes)?;
        if cursor != rows.len() {
            return Err(Error::parse(rows[cursor].line, "trailing nodes after a complete tree"));
        }
        Ok(AoTree::from_nodes(side, max_depth, aspects, nodes))
    }
}
