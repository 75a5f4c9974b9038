//! Individual aspect-importance matrices and their review-weighted general
//! vectors.
//!
//! User importance grows with how often the user mentions an aspect; item
//! importance additionally follows the mean sentiment expressed about the
//! item on that aspect. Both are zero for unmentioned aspects and bounded by
//! the rating scale.

use std::fmt::Write as _;

use crate::corpus::Corpus;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Side {
    User,
    Item,
}

impl Side {
    pub fn name(self) -> &'static str {
        match self {
            Side::User => "user",
            Side::Item => "item",
        }
    }
}

impl std::str::FromStr for Side {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "user" => Ok(Side::User),
            "item" => Ok(Side::Item),
            other => Err(Error::invalid(format!("unknown side `{other}`"))),
        }
    }
}

/// Dense row-major entities × aspects matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct AspectMatrix {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
}

impl AspectMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        AspectMatrix {
            rows,
            cols,
            values: vec![0.0; rows * cols],
        }
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::invalid("ragged matrix rows"));
        }
        Ok(AspectMatrix {
            rows: rows.len(),
            cols,
            values: rows.into_iter().flatten().collect(),
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.cols + col]
    }

    pub fn set(&mut self, row: usize, col: usize, value: f64) {
        self.values[row * self.cols + col] = value;
    }

    pub fn row(&self, row: usize) -> &[f64] {
        &self.values[row * self.cols..(row + 1) * self.cols]
    }

    pub fn column(&self, col: usize) -> impl Iterator<Item = f64> + '_ {
        (0..self.rows).map(move |r| self.get(r, col))
    }

    /// `entity_id,a0,...` header followed by one line per row.
    pub fn to_csv(&self, entity_names: &[String]) -> String {
        let mut out = String::from("entity_id");
        for k in 0..self.cols {
            let _ = write!(out, ",a{k}");
        }
        out.push('\n');
        for r in 0..self.rows {
            out.push_str(entity_names.get(r).map_or("", String::as_str));
            for v in self.row(r) {
                let _ = write!(out, ",{v}");
            }
            out.push('\n');
        }
        out
    }

    /// Parses [`AspectMatrix::to_csv`] output, returning the entity names too.
    pub fn from_csv(text: &str) -> Result<(Self, Vec<String>)> {
        let mut lines = text.lines().enumerate();
        let (_, header) = lines.next().ok_or_else(|| Error::parse(1, "missing header"))?;
        let cols = header.split(',').count().saturating_sub(1);
        let mut names = Vec::new();
        let mut rows = Vec::new();
        for (idx, line) in lines {
            if line.is_empty() {
                continue;
            }
            let mut fields = line.split(',');
            names.push(fields.next().unwrap_or_default().to_string());
            let row: Vec<f64> = fields
                .map(|f| f.parse::<f64>().map_err(|_| Error::parse(idx + 1, format!("invalid value `{f}`"))))
                .collect::<Result<_>>()?;
            if row.len() != cols {
                return Err(Error::parse(idx + 1, format!("expected {cols} values, found {}", row.len())));
            }
            rows.push(row);
        }
        let mut m = AspectMatrix::from_rows(rows)?;
        m.cols = cols;
        Ok((m, names))
    }
}

/// `1 + (N-1)(2/(1+e^{-f}) - 1)`; zero when `frequency` is zero.
pub fn user_importance(frequency: f64, rating_scale: f64) -> f64 {
    if frequency <= 0.0 {
        return 0.0;
    }
    1.0 + (rating_scale - 1.0) * (2.0 / (1.0 + (-frequency).exp()) - 1.0)
}

/// `1 + (N-1)/(1+e^{-f s})`; zero when `frequency` is zero.
pub fn item_importance(frequency: f64, mean_sentiment: f64, rating_scale: f64) -> f64 {
    if frequency <= 0.0 {
        return 0.0;
    }
    1.0 + (rating_scale - 1.0) / (1.0 + (-frequency * mean_sentiment).exp())
}

/// Mention frequency and summed sentiment per (entity, aspect).
fn tally(corpus: &Corpus, side: Side) -> (usize, Vec<f64>, Vec<f64>) {
    let rows = match side {
        Side::User => corpus.num_users(),
        Side::Item => corpus.num_items(),
    };
    let l = corpus.num_aspects();
    let mut freq = vec![0.0; rows * l];
    let mut sentiment = vec![0.0; rows * l];
    for r in &corpus.reviews {
        let row = match side {
            Side::User => r.user,
            Side::Item => r.item,
        };
        for mention in &r.mentions {
            freq[row * l + mention.aspect] += 1.0;
            sentiment[row * l + mention.aspect] += mention.sentiment;
        }
    }
    (rows, freq, sentiment)
}

/// User aspect matrix X over every user id in `train` (rows of users without
/// training reviews are all zero).
pub fn build_user_matrix(train: &Corpus) -> Result<AspectMatrix> {
    if train.is_empty() {
        return Err(Error::invalid("cannot build aspect matrix from an empty corpus"));
    }
    let (rows, freq, _) = tally(train, Side::User);
    Ok(AspectMatrix {
        rows,
        cols: train.num_aspects(),
        values: freq.iter().map(|&f| user_importance(f, train.rating_scale)).collect(),
    })
}

/// Item aspect matrix Y; sentiment enters as the mean over all mentions.
pub fn build_item_matrix(train: &Corpus) -> Result<AspectMatrix> {
    if train.is_empty() {
        return Err(Error::invalid("cannot build aspect matrix from an empty corpus"));
    }
    let (rows, freq, sentiment) = tally(train, Side::Item);
    let values = freq
        .iter()
        .zip(&sentiment)
        .map(|(&f, &s)| {
            let mean = if f > 0.0 { s / f } else { 0.0 };
            item_importance(f, mean, train.rating_scale)
        })
        .collect();
    Ok(AspectMatrix {
        rows,
        cols: train.num_aspects(),
        values,
    })
}

/// Review-count-weighted column average of `matrix`.
///
/// Rows with a zero count get zero weight, which is the same as leaving them
/// out.
pub fn group_aspect(matrix: &AspectMatrix, counts: &[usize]) -> Result<Vec<f64>> {
    if counts.len() != matrix.rows() {
        return Err(Error::invalid(format!(
            "{} counts for {} matrix rows",
            counts.len(),
            matrix.rows()
        )));
    }
    let total: usize = counts.iter().sum();
    if total == 0 {
        return Err(Error::invalid("total review count is zero"));
    }
    let mut general = vec![0.0; matrix.cols()];
    for (r, &count) in counts.iter().enumerate() {
        if count == 0 {
            continue;
        }
        let weight = count as f64 / total as f64;
        for (g, v) in general.iter_mut().zip(matrix.row(r)) {
            *g += v * weight;
        }
    }
    Ok(general)
}
