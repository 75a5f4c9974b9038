//! Versioned text tensor dump.
//!
//! ```text
//! aotree-checkpoint 1
//! dims aspects=20 seq_len=5 latent=8 users=1000 items=300
//! variant attention=1 layer_norm=1 position=1
//! meta seed=42 config_hash=ab12...
//! tensor aspect_embed 20 8
//! <one line of space-separated values per row>
//! ...
//! ```
//!
//! Floats are written in shortest round-trip form, so a dump reloads
//! bit-identically.

use std::fmt::Write as _;
use std::path::Path;

use super::{Dims, Group, Params, Predictor, Variant};
use crate::error::{Error, Result};

const MAGIC: &str = "aotree-checkpoint 1";

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct CheckpointMeta {
    pub seed: u64,
    pub config_hash: String,
}

pub fn format_checkpoint(model: &Predictor, meta: &CheckpointMeta) -> String {
    let Dims {
        aspects,
        seq_len,
        latent,
        users,
        items,
    } = model.dims();
    let v = model.variant;
    let mut out = String::new();
    let _ = writeln!(out, "{MAGIC}");
    let _ = writeln!(
        out,
        "dims aspects={aspects} seq_len={seq_len} latent={latent} users={users} items={items}"
    );
    let _ = writeln!(
        out,
        "variant attention={} layer_norm={} position={}",
        u8::from(v.attention),
        u8::from(v.layer_norm),
        u8::from(v.position)
    );
    let hash = if meta.config_hash.is_empty() { "-" } else { meta.config_hash.as_str() };
    let _ = writeln!(out, "meta seed={} config_hash={hash}", meta.seed);
    for (group, values) in model.params.iter() {
        let (rows, cols) = model.dims().shape(group);
        let _ = writeln!(out, "tensor {} {rows} {cols}", group.name());
        for r in 0..rows {
            let row = &values[r * cols..(r + 1) * cols];
            let line: Vec<String> = row.iter().map(f64::to_string).collect();
            let _ = writeln!(out, "{}", line.join(" "));
        }
    }
    out
}

pub fn write_checkpoint(path: &Path, model: &Predictor, meta: &CheckpointMeta) -> Result<()> {
    std::fs::write(path, format_checkpoint(model, meta)).map_err(|e| Error::io(path, e))
}

fn key_values<'a>(line: &'a str, tag: &str, lineno: usize) -> Result<Vec<(&'a str, &'a str)>> {
    let mut parts = line.split_whitespace();
    if parts.next() != Some(tag) {
        return Err(Error::parse(lineno, format!("expected `{tag}` line")));
    }
    parts
        .map(|kv| {
            kv.split_once('=')
                .ok_or_else(|| Error::parse(lineno, format!("malformed field `{kv}`")))
        })
        .collect()
}

fn field<T: std::str::FromStr>(kvs: &[(&str, &str)], key: &str, lineno: usize) -> Result<T> {
    let raw = kvs
        .iter()
        .find(|(k, _)| *k == key)
        .map(|(_, v)| *v)
        .ok_or_else(|| Error::parse(lineno, format!("missing `{key}`")))?;
    raw.parse()
        .map_err(|_| Error::parse(lineno, format!("invalid `{key}` value `{raw}`")))
}

/// Parses a dump. With `expected` set, any dimension mismatch is rejected.
pub fn parse_checkpoint(text: &str, expected: Option<Dims>) -> Result<(Predictor, CheckpointMeta)> {
    let lines: Vec<&str> = text.lines().collect();
    let line = |i: usize| lines.get(i).copied().ok_or_else(|| Error::parse(i + 1, "truncated checkpoint"));
    if line(0)? != MAGIC {
        return Err(Error::parse(1, "not an aotree checkpoint (or unsupported version)"));
    }
    let kv = key_values(line(1)?, "dims", 2)?;
    let dims = Dims {
        aspects: field(&kv, "aspects", 2)?,
        seq_len: field(&kv, "seq_len", 2)?,
        latent: field(&kv, "latent", 2)?,
        users: field(&kv, "users", 2)?,
        items: field(&kv, "items", 2)?,
    };
    if let Some(want) = expected {
        if want != dims {
            return Err(Error::invalid(format!(
                "checkpoint shape mismatch: file has {dims:?}, expected {want:?}"
            )));
        }
    }
    let kv = key_values(line(2)?, "variant", 3)?;
    let flag = |key: &str| -> Result<bool> { Ok(field::<u8>(&kv, key, 3)? != 0) };
    let variant = Variant {
        attention: flag("attention")?,
        layer_norm: flag("layer_norm")?,
        position: flag("position")?,
    };
    let kv = key_values(line(3)?, "meta", 4)?;
    let hash: String = field(&kv, "config_hash", 4)?;
    let meta = CheckpointMeta {
        seed: field(&kv, "seed", 4)?,
        config_hash: if hash == "-" { String::new() } else { hash },
    };

    let mut params = Params::zeros(dims);
    let mut seen = Vec::new();
    let mut i = 4;
    while i < lines.len() {
        if lines[i].trim().is_empty() {
            i += 1;
            continue;
        }
        let header: Vec<&str> = lines[i].split_whitespace().collect();
        if header.len() != 4 || header[0] != "tensor" {
            return Err(Error::parse(i + 1, "expected `tensor <name> <rows> <cols>`"));
        }
        let group = Group::from_name(header[1])
            .ok_or_else(|| Error::parse(i + 1, format!("unknown tensor `{}`", header[1])))?;
        let rows: usize = header[2].parse().map_err(|_| Error::parse(i + 1, "invalid row count"))?;
        let cols: usize = header[3].parse().map_err(|_| Error::parse(i + 1, "invalid column count"))?;
        if (rows, cols) != dims.shape(group) {
            return Err(Error::invalid(format!(
                "tensor {} has shape {rows}x{cols}, expected {:?}",
                group.name(),
                dims.shape(group)
            )));
        }
        let mut values = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            let lineno = i + 2 + r;
            let row = line(lineno - 1)?;
            for tok in row.split_whitespace() {
                let v: f64 = tok
                    .parse()
                    .map_err(|_| Error::parse(lineno, format!("invalid value `{tok}`")))?;
                values.push(v);
            }
            if values.len() != (r + 1) * cols {
                return Err(Error::parse(lineno, format!("expected {cols} values")));
            }
        }
        params.set(group, values)?;
        seen.push(group);
        i += 1 + rows;
    }
    if let Some(missing) = Group::ALL.iter().find(|g| !seen.contains(g)) {
        return Err(Error::invalid(format!("checkpoint lacks tensor {}", missing.name())));
    }
    if !params.all_finite() {
        return Err(Error::Numeric("checkpoint contains non-finite values".into()));
    }
    Ok((Predictor::new(params, variant), meta))
}

pub fn load_checkpoint(path: &Path, expected: Option<Dims>) -> Result<(Predictor, CheckpointMeta)> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_checkpoint(&text, expected)
}
