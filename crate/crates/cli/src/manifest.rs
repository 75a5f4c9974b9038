//! Per-command manifests: what was read, what was written, under which config.
//!
//! Files are identified by the SHA-256 of `"blob <len>\0" + content`, the same
//! framing git uses for its object ids, so a hash can be checked with
//! `git hash-object --object-format=sha256`. Manifests carry no timestamps and
//! are byte-identical across identical runs.

use std::fmt::Write as _;

use sha2::{Digest, Sha256};

pub fn blob_hash(content: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(format!("blob {}\0", content.len()).as_bytes());
    hasher.update(content);
    hex::encode(hasher.finalize())
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Manifest {
    pub command: String,
    pub config_hash: String,
    pub seed: u64,
    /// `(file name, blob hash)` in the order the files were touched.
    pub inputs: Vec<(String, String)>,
    pub outputs: Vec<(String, String)>,
    pub config: String,
}

impl Manifest {
    pub fn render(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "command {}", self.command);
        let _ = writeln!(out, "config_hash {}", self.config_hash);
        let _ = writeln!(out, "seed {}", self.seed);
        for (name, hash) in &self.inputs {
            let _ = writeln!(out, "input {hash} {name}");
        }
        for (name, hash) in &self.outputs {
            let _ = writeln!(out, "output {hash} {name}");
        }
        out.push_str("[config]\n");
        out.push_str(&self.config);
        out
    }
}
