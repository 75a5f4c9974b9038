//! Line-oriented review interchange format.
//!
//! One review per line:
//!
//! ```text
//! <user_id>\t<item_id>\t<rating>\t<aspect_id>:<sentiment>[,<aspect_id>:<sentiment>...]
//! ```
//!
//! Mention order is significant. Aspect ids are non-negative integers with an
//! optional `a` prefix (`a12` and `12` name the same aspect). Whitespace-only
//! separation is accepted as well, with mentions separated by commas or
//! spaces. Blank lines and lines starting with `#` are ignored.
//!
//! The optional vocabulary file maps ids to strings, `<aspect_id>\t<aspect_string>`.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::{AspectId, Corpus, Mention, Review};
use crate::error::{Error, Result};

pub fn load_corpus(path: &Path, vocabulary: Option<&Path>, rating_scale: f64) -> Result<Corpus> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut corpus = parse_corpus(&text, rating_scale)?;
    if let Some(vocab_path) = vocabulary {
        let names = load_vocabulary(vocab_path)?;
        apply_vocabulary(&mut corpus, &names);
    }
    Ok(corpus)
}

pub fn load_vocabulary(path: &Path) -> Result<HashMap<AspectId, String>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_vocabulary(&text)
}

pub fn parse_vocabulary(text: &str) -> Result<HashMap<AspectId, String>> {
    let mut names = HashMap::new();
    for (idx, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (id, name) = line
            .split_once('\t')
            .ok_or_else(|| Error::parse(idx + 1, "expected `<aspect_id>\\t<aspect_string>`"))?;
        names.insert(parse_aspect_id(id).map_err(|m| Error::parse(idx + 1, m))?, name.to_string());
    }
    Ok(names)
}

/// Names aspects, extending the aspect list when the vocabulary mentions ids
/// beyond those seen in the reviews.
pub fn apply_vocabulary(corpus: &mut Corpus, names: &HashMap<AspectId, String>) {
    let needed = names.keys().map(|k| k + 1).max().unwrap_or(0);
    while corpus.aspects.len() < needed {
        corpus.aspects.push(format!("a{}", corpus.aspects.len()));
    }
    for (&id, name) in names {
        corpus.aspects[id] = name.clone();
    }
}

fn parse_aspect_id(token: &str) -> std::result::Result<AspectId, String> {
    let digits = token.trim().trim_start_matches('a');
    digits
        .parse::<AspectId>()
        .map_err(|_| format!("invalid aspect id `{token}`"))
}

pub fn parse_corpus(text: &str, rating_scale: f64) -> Result<Corpus> {
    let mut users: Vec<String> = Vec::new();
    let mut items: Vec<String> = Vec::new();
    let mut user_ids: HashMap<String, usize> = HashMap::new();
    let mut item_ids: HashMap<String, usize> = HashMap::new();
    // (user, item) -> slot in `reviews`; later duplicates overwrite the slot.
    let mut slots: HashMap<(usize, usize), usize> = HashMap::new();
    let mut reviews: Vec<Option<(usize, Review)>> = Vec::new();
    let mut max_aspect: Option<AspectId> = None;

    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = if line.contains('\t') {
            line.split('\t').collect()
        } else {
            line.split_whitespace().collect()
        };
        if fields.len() < 3 {
            return Err(Error::parse(line_no, "expected user, item, rating and mentions"));
        }
        let rating: f64 = fields[2]
            .trim()
            .parse()
            .map_err(|_| Error::parse(line_no, format!("invalid rating `{}`", fields[2])))?;
        if !rating.is_finite() || !(1.0..=rating_scale).contains(&rating) {
            return Err(Error::invalid(format!(
                "line {line_no}: rating {rating} outside [1, {rating_scale}]"
            )));
        }
        let mut mentions = Vec::new();
        for token in fields[3..]
            .iter()
            .flat_map(|f| f.split([',', ' ']))
            .map(str::trim)
            .filter(|t| !t.is_empty())
        {
            let (aspect, sentiment) = token
                .split_once(':')
                .ok_or_else(|| Error::parse(line_no, format!("mention `{token}` is not `<aspect>:<sentiment>`")))?;
            let aspect = parse_aspect_id(aspect).map_err(|m| Error::parse(line_no, m))?;
            let sentiment: f64 = sentiment
                .parse()
                .map_err(|_| Error::parse(line_no, format!("invalid sentiment in `{token}`")))?;
            if !(-1.0..=1.0).contains(&sentiment) {
                return Err(Error::invalid(format!(
                    "line {line_no}: sentiment {sentiment} outside [-1, 1]"
                )));
            }
            max_aspect = Some(max_aspect.map_or(aspect, |m| m.max(aspect)));
            mentions.push(Mention { aspect, sentiment });
        }

        let user = intern(&mut users, &mut user_ids, fields[0].trim());
        let item = intern(&mut items, &mut item_ids, fields[1].trim());
        let review = Review { user, item, rating, mentions };
        match slots.get(&(user, item)) {
            Some(&slot) => {
                log::warn!(
                    "line {line_no}: duplicate review for ({}, {}); keeping the later one",
                    users[user],
                    items[item]
                );
                reviews[slot] = None;
                slots.insert((user, item), reviews.len());
                reviews.push(Some((line_no, review)));
            }
            None => {
                slots.insert((user, item), reviews.len());
                reviews.push(Some((line_no, review)));
            }
        }
    }

    let reviews: Vec<Review> = reviews.into_iter().flatten().map(|(_, r)| r).collect();
    if reviews.is_empty() {
        return Err(Error::invalid("empty corpus"));
    }
    let l = max_aspect.map_or(0, |m| m + 1);
    Ok(Corpus {
        reviews,
        users,
        items,
        aspects: (0..l).map(|k| format!("a{k}")).collect(),
        rating_scale,
    })
}

fn intern(names: &mut Vec<String>, ids: &mut HashMap<String, usize>, key: &str) -> usize {
    if let Some(&id) = ids.get(key) {
        return id;
    }
    names.push(key.to_string());
    ids.insert(key.to_string(), names.len() - 1);
    names.len() - 1
}

/// Serializes `corpus` in the interchange format, using dense aspect ids.
pub fn format_corpus(corpus: &Corpus) -> String {
    let mut out = String::new();
    for r in &corpus.reviews {
        let mentions: Vec<String> = r
            .mentions
            .iter()
            .map(|m| format!("a{}:{}", m.aspect, m.sentiment))
            .collect();
        let _ = writeln!(
            out,
            "{}\t{}\t{}\t{}",
            corpus.users[r.user],
            corpus.items[r.item],
            r.rating,
            mentions.join(",")
        );
    }
    out
}

pub fn write_corpus(corpus: &Corpus, path: &Path) -> Result<()> {
    fs::write(path, format_corpus(corpus)).map_err(|e| Error::io(path, e))
}

pub fn write_vocabulary(corpus: &Corpus, path: &Path) -> Result<()> {
    let mut out = String::new();
    for (k, name) in corpus.aspects.iter().enumerate() {
        let _ = writeln!(out, "a{k}\t{name}");
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}
