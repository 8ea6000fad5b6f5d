//! Tab-separated whitelist files.
//!
//! ```text
//! # whitelist	method=frequency	size=1000	corpus=<sha256>	seed=0
//! key	text	frequency	cluster
//! thanks	Thanks!	812
//! ```
//!
//! Backslash, tab, newline and carriage return are escaped in the key and
//! text columns. The cluster column is empty for frequency whitelists.

use std::fs;
use std::path::Path;

use super::{Provenance, Whitelist, WhitelistEntry, WhitelistMethod};
use crate::error::{Error, Result};

const MAGIC: &str = "# whitelist";
const COLUMNS: &str = "key\ttext\tfrequency\tcluster";

fn escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '\\' => out.push_str("\\\\"),
            '\t' => out.push_str("\\t"),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            c => out.push(c),
        }
    }
    out
}

fn unescape(s: &str) -> std::result::Result<String, String> {
    let mut out = String::with_capacity(s.len());
    let mut chars = s.chars();
    while let Some(c) = chars.next() {
        if c != '\\' {
            out.push(c);
            continue;
        }
        match chars.next() {
            Some('\\') => out.push('\\'),
            Some('t') => out.push('\t'),
            Some('n') => out.push('\n'),
            Some('r') => out.push('\r'),
            other => return Err(format!("bad escape sequence \\{}", other.map(String::from).unwrap_or_default())),
        }
    }
    Ok(out)
}

pub fn to_tsv(w: &Whitelist) -> String {
    let mut out = format!(
        "{MAGIC}\tmethod={}\tsize={}\tcorpus={}\tseed={}\n{COLUMNS}\n",
        w.method.as_str(),
        w.target_size,
        w.provenance.corpus_hash,
        w.provenance.seed
    );
    for e in &w.entries {
        let cluster = e.cluster_id.map(|c| c.to_string()).unwrap_or_default();
        out.push_str(&format!("{}\t{}\t{}\t{cluster}\n", escape(&e.key), escape(&e.text), e.frequency));
    }
    out
}

pub fn save_whitelist(path: &Path, w: &Whitelist) -> Result<()> {
    fs::write(path, to_tsv(w)).map_err(|e| Error::io(path.display().to_string(), e))
}

pub fn load_whitelist(path: &Path) -> Result<Whitelist> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    parse_whitelist(&text, path)
}

/// Parses TSV text; `path` only labels errors.
pub fn parse_whitelist(text: &str, path: &Path) -> Result<Whitelist> {
    let err = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| err(1, "empty file".into()))?;
    let mut fields = header.split('\t');
    if fields.next() != Some(MAGIC) {
        return Err(err(1, format!("expected header starting with {MAGIC:?}")));
    }
    let (mut method, mut size, mut corpus, mut seed) = (None, None, None, None);
    for f in fields {
        let (k, v) = f.split_once('=').ok_or_else(|| err(1, format!("malformed header field {f:?}")))?;
        match k {
            "method" => {
                method = Some(match v {
                    "frequency" => WhitelistMethod::Frequency,
                    "clustering" => WhitelistMethod::Clustering,
                    _ => return Err(err(1, format!("unknown method {v:?}"))),
                })
            }
            "size" => size = Some(v.parse::<usize>().map_err(|e| err(1, format!("size: {e}")))?),
            "corpus" => corpus = Some(v.to_string()),
            "seed" => seed = Some(v.parse::<u64>().map_err(|e| err(1, format!("seed: {e}")))?),
            _ => return Err(err(1, format!("unknown header field {k:?}"))),
        }
    }
    let (Some(method), Some(size), Some(corpus_hash), Some(seed)) = (method, size, corpus, seed) else {
        return Err(err(1, "header needs method, size, corpus and seed".into()));
    };
    if lines.next() != Some(COLUMNS) {
        return Err(err(2, format!("expected column line {COLUMNS:?}")));
    }
    let mut entries = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for (i, line) in lines.enumerate() {
        let n = i + 3;
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 4 {
            return Err(err(n, format!("expected 4 columns, found {}", cols.len())));
        }
        let key = unescape(cols[0]).map_err(|m| err(n, m))?;
        let text = unescape(cols[1]).map_err(|m| err(n, m))?;
        if cols[2].is_empty() {
            return Err(err(n, "missing frequency".into()));
        }
        let frequency: u64 = cols[2].parse().map_err(|e| err(n, format!("frequency: {e}")))?;
        if frequency == 0 {
            return Err(err(n, "frequency must be at least 1".into()));
        }
        let cluster_id = match cols[3] {
            "" => None,
            c => Some(c.parse().map_err(|e| err(n, format!("cluster: {e}")))?),
        };
        if !seen.insert(key.clone()) {
            return Err(err(n, format!("duplicate key {key:?}")));
        }
        entries.push(WhitelistEntry {
            key,
            text,
            frequency,
            cluster_id,
        });
    }
    Whitelist::new(method, size, Provenance { corpus_hash, seed }, entries).map_err(|e| err(1, e.to_string()))
}
