//! Candidate-response whitelists built by frequency or by clustering
//! response encodings.

mod kmeans;
mod tsv;

use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::{group_responses, response_tokens, TrainingExample};
use crate::dual_model::Encoders;
use crate::error::{Error, Result};

pub use kmeans::{kmeans, KMeansConfig, KMeansResult};
pub use tsv::{load_whitelist, parse_whitelist, save_whitelist, to_tsv};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WhitelistMethod {
    Frequency,
    Clustering,
}

impl WhitelistMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            WhitelistMethod::Frequency => "frequency",
            WhitelistMethod::Clustering => "clustering",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct WhitelistEntry {
    pub key: String,
    pub text: String,
    pub frequency: u64,
    pub cluster_id: Option<usize>,
}

/// Where a whitelist came from.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub corpus_hash: String,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Whitelist {
    method: WhitelistMethod,
    target_size: usize,
    provenance: Provenance,
    entries: Vec<WhitelistEntry>,
    #[serde(skip)]
    index: HashMap<String, usize>,
}

impl Whitelist {
    /// Checks that keys are distinct, frequencies positive and the entry
    /// count within `target_size`.
    pub fn new(
        method: WhitelistMethod,
        target_size: usize,
        provenance: Provenance,
        entries: Vec<WhitelistEntry>,
    ) -> Result<Self> {
        if entries.len() > target_size {
            return Err(Error::invalid(format!(
                "{} entries exceed the target size {target_size}",
                entries.len()
            )));
        }
        let mut index = HashMap::with_capacity(entries.len());
        for (i, e) in entries.iter().enumerate() {
            if e.frequency == 0 {
                return Err(Error::invalid(format!("entry {:?} has frequency 0", e.key)));
            }
            if index.insert(e.key.clone(), i).is_some() {
                return Err(Error::invalid(format!("duplicate whitelist key {:?}", e.key)));
            }
        }
        Ok(Whitelist {
            method,
            target_size,
            provenance,
            entries,
            index,
        })
    }

    pub fn method(&self) -> WhitelistMethod {
        self.method
    }

    pub fn target_size(&self) -> usize {
        self.target_size
    }

    pub fn provenance(&self) -> &Provenance {
        &self.provenance
    }

    pub fn entries(&self) -> &[WhitelistEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn position(&self, key: &str) -> Option<usize> {
        self.index.get(key).copied()
    }

    pub fn contains(&self, key: &str) -> bool {
        self.index.contains_key(key)
    }

    pub fn total_frequency(&self) -> u64 {
        self.entries.iter().map(|e| e.frequency).sum()
    }

    /// Hex SHA-256 of the TSV serialization.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(to_tsv(self).as_bytes()))
    }

    /// Short identifier such as `frequency-1000`.
    pub fn id(&self) -> String {
        format!("{}-{}", self.method.as_str(), self.target_size)
    }

    /// Token sequences of the canonical texts, in entry order.
    pub fn token_sequences(&self) -> Vec<Vec<String>> {
        self.entries.iter().map(|e| response_tokens(&e.text)).collect()
    }
}

fn check_non_empty(examples: &[TrainingExample]) -> Result<()> {
    if examples.is_empty() {
        return Err(Error::invalid("cannot build a whitelist from an empty split"));
    }
    Ok(())
}

/// The `n` most common responses by normalization key. Ties in frequency go
/// to the lexicographically smaller key.
pub fn build_frequency_whitelist(examples: &[TrainingExample], n: usize, provenance: Provenance) -> Result<Whitelist> {
    check_non_empty(examples)?;
    let groups = group_responses(examples);
    if groups.len() < n {
        log::warn!("only {} distinct responses for a whitelist of size {n}; keeping all", groups.len());
    }
    let entries = groups
        .into_iter()
        .take(n)
        .map(|g| WhitelistEntry {
            key: g.key,
            text: g.text,
            frequency: g.frequency,
            cluster_id: None,
        })
        .collect();
    Whitelist::new(WhitelistMethod::Frequency, n, provenance, entries)
}

/// Clusters the encodings of every distinct response into `k` groups and
/// keeps the most frequent member of each (ties to the smaller key).
pub fn build_clustering_whitelist<E: Encoders + ?Sized>(
    examples: &[TrainingExample],
    model: &E,
    k: usize,
    config: &KMeansConfig,
    seed: u64,
    provenance: Provenance,
) -> Result<Whitelist> {
    check_non_empty(examples)?;
    let groups = group_responses(examples);
    if groups.len() < k {
        return Err(Error::invalid(format!(
            "{} distinct responses cannot fill {k} clusters",
            groups.len()
        )));
    }
    let tokens: Vec<Vec<String>> = groups.iter().map(|g| response_tokens(&g.text)).collect();
    let refs: Vec<&[String]> = tokens.iter().map(Vec::as_slice).collect();
    let enc = model.encode_responses(&refs)?;
    let d = model.output_dim();
    let points: Vec<Vec<f64>> = (0..groups.len())
        .map(|i| enc.row(i).iter().map(|&v| f64::from(v)).collect())
        .collect();
    debug_assert!(points.iter().all(|p| p.len() == d));
    let result = kmeans(&points, k, config, seed)?;
    // Groups are already sorted by (frequency desc, key), so the first member
    // seen for a cluster is its representative.
    let mut seen = HashSet::new();
    let mut entries = Vec::with_capacity(k);
    for (g, &cluster) in groups.iter().zip(&result.assignments) {
        if seen.insert(cluster) {
            entries.push(WhitelistEntry {
                key: g.key.clone(),
                text: g.text.clone(),
                frequency: g.frequency,
                cluster_id: Some(cluster),
            });
        }
    }
    Whitelist::new(WhitelistMethod::Clustering, k, provenance, entries)
}
