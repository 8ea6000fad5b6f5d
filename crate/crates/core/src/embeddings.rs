//! Fixed subword embeddings: a token vector is the mean of its word vector
//! (zero when out of vocabulary) and the hashed character n-gram vectors of
//! `<token>`.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;
use std::sync::{Arc, RwLock};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::Role;
use crate::error::{Error, Result};
use crate::numerics::{codec, Tensor};

/// Padding token; always embeds to zeros.
pub const PAD_TOKEN: &str = "<pad>";

const CACHE_CAPACITY: usize = 1 << 20;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, schemars::JsonSchema)]
#[serde(deny_unknown_fields, default)]
pub struct EmbeddingConfig {
    pub dim: usize,
    pub buckets: usize,
    pub min_n: usize,
    pub max_n: usize,
    /// Seeds the procedural bucket vectors and the role-token rows.
    pub seed: u64,
}

impl Default for EmbeddingConfig {
    fn default() -> Self {
        EmbeddingConfig {
            dim: 300,
            buckets: 1 << 21,
            min_n: 3,
            max_n: 6,
            seed: 0,
        }
    }
}

impl EmbeddingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.buckets == 0 || self.min_n == 0 || self.min_n > self.max_n {
            return Err(Error::invalid(format!("invalid embedding config {self:?}")));
        }
        Ok(())
    }
}

/// FNV-1a 64-bit hash of the UTF-8 bytes, reduced modulo `buckets`.
pub fn hash_ngram(ngram: &str, buckets: usize) -> usize {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in ngram.as_bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    (h % buckets as u64) as usize
}

/// Character n-grams of `<token>` for every length in `min_n..=max_n`.
pub fn char_ngrams(token: &str, min_n: usize, max_n: usize) -> Vec<String> {
    let chars: Vec<char> = std::iter::once('<').chain(token.chars()).chain(std::iter::once('>')).collect();
    let mut out = Vec::new();
    for n in min_n..=max_n.min(chars.len()) {
        for w in chars.windows(n) {
            out.push(w.iter().collect());
        }
    }
    out
}

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

fn gaussian_row(seed: u64, index: u64, sigma: f32, out: &mut [f32]) {
    let mut rng = ChaCha8Rng::seed_from_u64(splitmix(seed ^ splitmix(index)));
    for v in out {
        let z: f32 = StandardNormal.sample(&mut rng);
        *v = sigma * z;
    }
}

#[derive(Clone, Debug)]
enum BucketTable {
    /// Row `i` drawn from N(0, sigma) with a generator seeded by `i`.
    Seeded { sigma: f32 },
    /// Explicit rows; absent buckets are zero.
    Sparse(HashMap<usize, Vec<f32>>),
}

pub struct SubwordEmbedding {
    config: EmbeddingConfig,
    vocab: HashMap<String, usize>,
    /// `vocab.len() x dim`, row-major, in file order.
    word_vectors: Vec<f32>,
    words_in_order: Vec<String>,
    buckets: BucketTable,
    reserved: HashMap<&'static str, Vec<f32>>,
    cache: RwLock<HashMap<String, Arc<[f32]>>>,
}

impl std::fmt::Debug for SubwordEmbedding {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SubwordEmbedding")
            .field("config", &self.config)
            .field("words", &self.vocab.len())
            .finish()
    }
}

impl SubwordEmbedding {
    /// Empty word table; every token embeds through seeded n-gram buckets.
    pub fn seeded(config: EmbeddingConfig) -> Result<Self> {
        config.validate()?;
        let sigma = 1.0 / (config.dim as f32).sqrt();
        Ok(Self::assemble(config, Vec::new(), Vec::new(), BucketTable::Seeded { sigma }))
    }

    /// Explicit bucket rows (others zero) and word vectors.
    pub fn from_tables(
        config: EmbeddingConfig,
        words: Vec<(String, Vec<f32>)>,
        bucket_rows: HashMap<usize, Vec<f32>>,
    ) -> Result<Self> {
        config.validate()?;
        for (b, row) in &bucket_rows {
            if *b >= config.buckets || row.len() != config.dim {
                return Err(Error::invalid(format!("bad bucket row {b}")));
            }
        }
        let (names, flat) = Self::flatten_words(&config, words)?;
        Ok(Self::assemble(config, names, flat, BucketTable::Sparse(bucket_rows)))
    }

    fn flatten_words(config: &EmbeddingConfig, words: Vec<(String, Vec<f32>)>) -> Result<(Vec<String>, Vec<f32>)> {
        let mut names = Vec::with_capacity(words.len());
        let mut flat = Vec::with_capacity(words.len() * config.dim);
        for (w, v) in words {
            if v.len() != config.dim {
                return Err(Error::invalid(format!(
                    "word vector for {w} has {} values, expected {}",
                    v.len(),
                    config.dim
                )));
            }
            names.push(w);
            flat.extend(v);
        }
        Ok((names, flat))
    }

    fn assemble(config: EmbeddingConfig, words: Vec<String>, word_vectors: Vec<f32>, buckets: BucketTable) -> Self {
        let sigma = 1.0 / (config.dim as f32).sqrt();
        let mut reserved = HashMap::new();
        for (i, role) in [Role::Customer, Role::Agent].into_iter().enumerate() {
            let mut row = vec![0.0; config.dim];
            gaussian_row(config.seed ^ 0x00C0_FFEE, i as u64, sigma, &mut row);
            reserved.insert(role.token(), row);
        }
        reserved.insert(PAD_TOKEN, vec![0.0; config.dim]);
        let vocab = words.iter().enumerate().map(|(i, w)| (w.clone(), i)).collect();
        SubwordEmbedding {
            config,
            vocab,
            word_vectors,
            words_in_order: words,
            buckets,
            reserved,
            cache: RwLock::new(HashMap::new()),
        }
    }

    /// Reads the textual vector format: a `count dim` header, then one
    /// `token v1 .. v_dim` line per word. Buckets are seeded from the config.
    pub fn load_pretrained(path: &Path, config: EmbeddingConfig) -> Result<Self> {
        config.validate()?;
        let file = File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        let parse_err = |line: usize, message: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            message,
        };
        let mut lines = BufReader::new(file).lines();
        let header = lines
            .next()
            .ok_or_else(|| parse_err(1, "missing header".into()))?
            .map_err(|e| Error::io(path.display().to_string(), e))?;
        let fields: Vec<&str> = header.split_whitespace().collect();
        let (count, dim) = match fields.as_slice() {
            [c, d] => (
                c.parse::<usize>().map_err(|e| parse_err(1, format!("bad count: {e}")))?,
                d.parse::<usize>().map_err(|e| parse_err(1, format!("bad dim: {e}")))?,
            ),
            _ => return Err(parse_err(1, "header must be `count dim`".into())),
        };
        if dim != config.dim {
            return Err(Error::invalid(format!(
                "{}: vectors have dim {dim}, config expects {}",
                path.display(),
                config.dim
            )));
        }
        let mut words = Vec::with_capacity(count);
        let mut seen = std::collections::HashSet::new();
        for (i, line) in lines.enumerate() {
            let line_no = i + 2;
            let line = line.map_err(|e| Error::io(path.display().to_string(), e))?;
            if line.trim().is_empty() {
                continue;
            }
            let mut parts = line.split_whitespace();
            let token = parts.next().unwrap().to_string();
            let values = parts
                .map(str::parse::<f32>)
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| parse_err(line_no, format!("bad value: {e}")))?;
            if values.len() != dim {
                return Err(parse_err(line_no, format!("expected {dim} values, found {}", values.len())));
            }
            if values.iter().any(|v| !v.is_finite()) {
                return Err(parse_err(line_no, "non-finite value".into()));
            }
            if !seen.insert(token.clone()) {
                return Err(parse_err(line_no, format!("duplicate token {token}")));
            }
            words.push((token, values));
        }
        if words.len() != count {
            return Err(parse_err(1, format!("header promises {count} vectors, found {}", words.len())));
        }
        let sigma = 1.0 / (config.dim as f32).sqrt();
        let (names, flat) = Self::flatten_words(&config, words)?;
        Ok(Self::assemble(config, names, flat, BucketTable::Seeded { sigma }))
    }

    /// Binary cache in the tensor file format. Only seeded bucket tables
    /// can be cached; their rows are regenerated on load.
    pub fn save_cache(&self, path: &Path) -> Result<()> {
        if !matches!(self.buckets, BucketTable::Seeded { .. }) {
            return Err(Error::invalid("only seeded bucket tables can be cached"));
        }
        let config = serde_json::to_vec(&self.config)?;
        let vocab = self.words_in_order.join("\n");
        let tensors = vec![
            ("embedding.config".to_string(), codec::bytes_to_tensor(&config)),
            ("embedding.vocab".to_string(), codec::bytes_to_tensor(vocab.as_bytes())),
            (
                "embedding.words".to_string(),
                Tensor::new(vec![self.words_in_order.len(), self.config.dim], self.word_vectors.clone())?,
            ),
        ];
        codec::write_file(path, &tensors)
    }

    pub fn load_cache(path: &Path) -> Result<Self> {
        let tensors = codec::read_file(path)?;
        let config: EmbeddingConfig =
            serde_json::from_slice(&codec::tensor_to_bytes(codec::find(&tensors, "embedding.config")?)?)?;
        config.validate()?;
        let vocab = String::from_utf8(codec::tensor_to_bytes(codec::find(&tensors, "embedding.vocab")?)?)
            .map_err(|_| Error::Format("embedding vocabulary is not UTF-8".into()))?;
        let words = codec::find(&tensors, "embedding.words")?;
        let names: Vec<String> = if vocab.is_empty() {
            Vec::new()
        } else {
            vocab.split('\n').map(str::to_string).collect()
        };
        if words.shape() != [names.len(), config.dim] {
            return Err(Error::Format("embedding cache word table shape mismatch".into()));
        }
        let sigma = 1.0 / (config.dim as f32).sqrt();
        Ok(Self::assemble(config, names, words.data().to_vec(), BucketTable::Seeded { sigma }))
    }

    pub fn config(&self) -> &EmbeddingConfig {
        &self.config
    }

    pub fn dim(&self) -> usize {
        self.config.dim
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    /// SHA-256 over the configuration and the word table.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        h.update(serde_json::to_vec(&self.config).expect("config serializes"));
        for w in &self.words_in_order {
            h.update(w.as_bytes());
            h.update([0]);
        }
        for v in &self.word_vectors {
            h.update(v.to_le_bytes());
        }
        if let BucketTable::Sparse(rows) = &self.buckets {
            let mut keys: Vec<_> = rows.keys().collect();
            keys.sort();
            for k in keys {
                h.update((*k as u64).to_le_bytes());
                for v in &rows[k] {
                    h.update(v.to_le_bytes());
                }
            }
        }
        hex::encode(h.finalize())
    }

    fn add_bucket(&self, bucket: usize, acc: &mut [f32], scratch: &mut [f32]) {
        match &self.buckets {
            BucketTable::Seeded { sigma } => {
                gaussian_row(self.config.seed, bucket as u64, *sigma, scratch);
                acc.iter_mut().zip(scratch.iter()).for_each(|(a, s)| *a += s);
            }
            BucketTable::Sparse(rows) => {
                if let Some(row) = rows.get(&bucket) {
                    acc.iter_mut().zip(row).for_each(|(a, s)| *a += s);
                }
            }
        }
    }

    fn compute(&self, token: &str) -> Vec<f32> {
        let d = self.config.dim;
        let mut acc = vec![0.0f32; d];
        if let Some(&i) = self.vocab.get(token) {
            acc.copy_from_slice(&self.word_vectors[i * d..(i + 1) * d]);
        }
        let mut scratch = vec![0.0f32; d];
        let ngrams = char_ngrams(token, self.config.min_n, self.config.max_n);
        for g in &ngrams {
            self.add_bucket(hash_ngram(g, self.config.buckets), &mut acc, &mut scratch);
        }
        let denom = (1 + ngrams.len()) as f32;
        acc.iter_mut().for_each(|v| *v /= denom);
        acc
    }

    /// Embedding of one token. Role and padding tokens map to reserved rows.
    pub fn embed_token(&self, token: &str) -> Arc<[f32]> {
        if let Some(row) = self.reserved.get(token) {
            return Arc::from(row.as_slice());
        }
        if let Some(v) = self.cache.read().expect("embedding cache lock").get(token) {
            return Arc::clone(v);
        }
        let v: Arc<[f32]> = Arc::from(self.compute(token));
        let mut cache = self.cache.write().expect("embedding cache lock");
        if cache.len() < CACHE_CAPACITY {
            cache.insert(token.to_string(), Arc::clone(&v));
        }
        v
    }

    /// Writes the embeddings of `tokens` as consecutive rows of `out`.
    pub fn embed_into<S: AsRef<str>>(&self, tokens: &[S], out: &mut [f32]) {
        let d = self.config.dim;
        debug_assert_eq!(out.len(), tokens.len() * d);
        for (t, row) in tokens.iter().zip(out.chunks_exact_mut(d)) {
            row.copy_from_slice(&self.embed_token(t.as_ref()));
        }
    }

    /// `tokens.len() x dim` matrix of token embeddings.
    pub fn embed_sequence<S: AsRef<str>>(&self, tokens: &[S]) -> Tensor<f32> {
        let mut data = vec![0.0; tokens.len() * self.config.dim];
        self.embed_into(tokens, &mut data);
        Tensor::new(vec![tokens.len(), self.config.dim], data).expect("consistent shape")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::dot;

    fn small(dim: usize) -> EmbeddingConfig {
        EmbeddingConfig {
            dim,
            ..EmbeddingConfig::default()
        }
    }

    #[test]
    fn fnv_reference_values() {
        // FNV-1a 64 of "" and "a" are published constants.
        assert_eq!(hash_ngram("", usize::MAX), 0xcbf2_9ce4_8422_2325 % usize::MAX as u64 as usize);
        assert_eq!(hash_ngram("a", usize::MAX), (0xaf63_dc4c_8601_ec8c_u64 % usize::MAX as u64) as usize);
    }

    #[test]
    fn ngrams_of_short_token() {
        assert_eq!(char_ngrams("bil", 3, 6), ["<bi", "bil", "il>", "<bil", "bil>", "<bil>"]);
        assert_eq!(char_ngrams("a", 3, 6), ["<a>"]);
    }

    #[test]
    fn zero_tables_give_zero_vector() {
        let e = SubwordEmbedding::from_tables(small(4), vec![], HashMap::new()).unwrap();
        assert!(e.embed_token("anything").iter().all(|&v| v == 0.0));
    }

    #[test]
    fn shared_bucket_correlates_tokens() {
        let cfg = small(4);
        let b = hash_ngram("<bi", cfg.buckets);
        let rows = HashMap::from([(b, vec![1.0, 2.0, 0.0, -1.0])]);
        let e = SubwordEmbedding::from_tables(cfg, vec![], rows).unwrap();
        let x = e.embed_token("bil");
        let y = e.embed_token("bill");
        assert!(dot(&x, &y) > 0.0);
        // "bil" has 6 n-grams plus the word slot; only "<bi" contributes.
        assert_eq!(x[1], 2.0 / 7.0);
    }

    #[test]
    fn reserved_rows() {
        let e = SubwordEmbedding::seeded(small(16)).unwrap();
        assert!(e.embed_token(PAD_TOKEN).iter().all(|&v| v == 0.0));
        let c = e.embed_token("<customer>");
        let a = e.embed_token("<agent>");
        assert_ne!(&*c, &*a);
        assert!(c.iter().any(|&v| v != 0.0));
    }

    #[test]
    fn sequence_rows_match_tokens() {
        let e = SubwordEmbedding::seeded(small(8)).unwrap();
        let m = e.embed_sequence(&["hello", "world", PAD_TOKEN]);
        assert_eq!(m.shape(), &[3, 8]);
        assert_eq!(m.row(0), &*e.embed_token("hello"));
        assert!(m.row(2).iter().all(|&v| v == 0.0));
        assert_eq!(e.embed_sequence::<&str>(&[]).shape(), &[0, 8]);
        let fresh = SubwordEmbedding::seeded(small(8)).unwrap();
        assert_eq!(&*fresh.embed_token("world"), &*e.embed_token("world"));
    }

    #[test]
    fn pretrained_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("v.txt");
        std::fs::write(&p, "2 4\nhello 1 2 3 4\nworld 0 0 0 1\n").unwrap();
        let e = SubwordEmbedding::load_pretrained(&p, small(4)).unwrap();
        assert_eq!(e.vocab_size(), 2);
        assert!(SubwordEmbedding::load_pretrained(&p, small(300)).is_err());
        assert!(SubwordEmbedding::load_pretrained(&dir.path().join("missing"), small(4)).is_err());
        std::fs::write(&p, "2 4\nhello 1 2 3 4\nworld 0 0 x 1\n").unwrap();
        let err = SubwordEmbedding::load_pretrained(&p, small(4)).unwrap_err().to_string();
        assert!(err.contains(":3:"), "{err}");
    }

    #[test]
    fn cache_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("v.txt");
        std::fs::write(&p, "1 4\nhello 1 2 3 4\n").unwrap();
        let e = SubwordEmbedding::load_pretrained(&p, small(4)).unwrap();
        let c = dir.path().join("cache.rsv");
        e.save_cache(&c).unwrap();
        let back = SubwordEmbedding::load_cache(&c).unwrap();
        assert_eq!(back.fingerprint(), e.fingerprint());
        assert_eq!(&*back.embed_token("hello"), &*e.embed_token("hello"));
    }
}
