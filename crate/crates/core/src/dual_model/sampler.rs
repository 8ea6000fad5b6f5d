use std::collections::HashMap;

use rand::Rng;

use crate::corpus::{group_responses, response_tokens, ResponseGroup, TrainingExample};
use crate::error::{Error, Result};

/// Prefix sums over integer weights with point updates.
#[derive(Clone, Debug)]
struct Fenwick {
    tree: Vec<u64>,
}

impl Fenwick {
    fn new(weights: &[u64]) -> Self {
        let n = weights.len();
        let mut tree = vec![0u64; n + 1];
        tree[1..].copy_from_slice(weights);
        for i in 1..=n {
            let j = i + (i & i.wrapping_neg());
            if j <= n {
                tree[j] += tree[i];
            }
        }
        Fenwick { tree }
    }

    fn sub(&mut self, index: usize, amount: u64) {
        let mut i = index + 1;
        while i < self.tree.len() {
            self.tree[i] -= amount;
            i += i & i.wrapping_neg();
        }
    }

    /// Smallest index whose inclusive prefix sum exceeds `target`.
    fn find(&self, mut target: u64) -> usize {
        let n = self.tree.len() - 1;
        let mut pos = 0;
        let mut step = n.next_power_of_two();
        while step > 0 {
            let next = pos + step;
            if next <= n && self.tree[next] <= target {
                pos = next;
                target -= self.tree[next];
            }
            step >>= 1;
        }
        pos
    }
}

/// Distinct training responses weighted by frequency.
#[derive(Clone, Debug)]
pub struct NegativeSampler {
    groups: Vec<ResponseGroup>,
    tokens: Vec<Vec<String>>,
    index: HashMap<String, usize>,
    tree: Fenwick,
    total: u64,
}

impl NegativeSampler {
    pub fn new(groups: Vec<ResponseGroup>) -> Result<Self> {
        if groups.is_empty() {
            return Err(Error::invalid("negative sampler needs at least one response"));
        }
        if let Some(g) = groups.iter().find(|g| g.frequency == 0) {
            return Err(Error::invalid(format!("response {:?} has zero frequency", g.key)));
        }
        let mut index = HashMap::with_capacity(groups.len());
        for (i, g) in groups.iter().enumerate() {
            if index.insert(g.key.clone(), i).is_some() {
                return Err(Error::invalid(format!("duplicate response key {:?}", g.key)));
            }
        }
        let weights: Vec<u64> = groups.iter().map(|g| g.frequency).collect();
        let tokens = groups.iter().map(|g| response_tokens(&g.text)).collect();
        Ok(NegativeSampler {
            tree: Fenwick::new(&weights),
            total: weights.iter().sum(),
            groups,
            tokens,
            index,
        })
    }

    pub fn from_examples(examples: &[TrainingExample]) -> Result<Self> {
        NegativeSampler::new(group_responses(examples))
    }

    pub fn len(&self) -> usize {
        self.groups.len()
    }

    pub fn is_empty(&self) -> bool {
        self.groups.is_empty()
    }

    pub fn groups(&self) -> &[ResponseGroup] {
        &self.groups
    }

    pub fn group(&self, i: usize) -> &ResponseGroup {
        &self.groups[i]
    }

    pub fn tokens(&self, i: usize) -> &[String] {
        &self.tokens[i]
    }

    pub fn position(&self, key: &str) -> Option<usize> {
        self.index.get(key).copied()
    }

    pub fn total_weight(&self) -> u64 {
        self.total
    }

    /// `k` distinct responses drawn without replacement with probability
    /// proportional to frequency, never returning a key in `exclude`.
    pub fn sample<R: Rng, K: AsRef<str>>(&self, rng: &mut R, k: usize, exclude: &[K]) -> Result<Vec<usize>> {
        let mut tree = self.tree.clone();
        let mut remaining = self.total;
        let mut available = self.groups.len();
        let mut excluded = vec![false; self.groups.len()];
        for key in exclude {
            if let Some(i) = self.position(key.as_ref()) {
                if !excluded[i] {
                    excluded[i] = true;
                    tree.sub(i, self.groups[i].frequency);
                    remaining -= self.groups[i].frequency;
                    available -= 1;
                }
            }
        }
        if available < k {
            return Err(Error::invalid(format!(
                "negative pool too small: {k} draws requested, {available} responses available"
            )));
        }
        let mut out = Vec::with_capacity(k);
        for _ in 0..k {
            let i = tree.find(rng.random_range(0..remaining));
            tree.sub(i, self.groups[i].frequency);
            remaining -= self.groups[i].frequency;
            out.push(i);
        }
        Ok(out)
    }
}

/// A fixed set of negatives reused across evaluations so numbers stay
/// comparable between epochs.
#[derive(Clone, Debug, PartialEq)]
pub struct NegativeSet {
    pub keys: Vec<String>,
    pub tokens: Vec<Vec<String>>,
}

impl NegativeSet {
    pub fn draw<R: Rng>(sampler: &NegativeSampler, k: usize, rng: &mut R) -> Result<Self> {
        let picks = sampler.sample::<_, &str>(rng, k, &[])?;
        Ok(NegativeSet {
            keys: picks.iter().map(|&i| sampler.group(i).key.clone()).collect(),
            tokens: picks.iter().map(|&i| sampler.tokens(i).to_vec()).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn groups(freqs: &[u64]) -> Vec<ResponseGroup> {
        freqs
            .iter()
            .enumerate()
            .map(|(i, &f)| ResponseGroup {
                key: format!("r{i}"),
                text: format!("r{i}"),
                frequency: f,
            })
            .collect()
    }

    #[test]
    fn fenwick_find_matches_linear_scan() {
        let w = [3u64, 0, 5, 1, 7, 2, 0, 4];
        let f = Fenwick::new(&w);
        let total: u64 = w.iter().sum();
        for target in 0..total {
            let mut acc = 0;
            let expected = w
                .iter()
                .position(|&x| {
                    acc += x;
                    acc > target
                })
                .unwrap();
            assert_eq!(f.find(target), expected, "target {target}");
        }
    }

    #[test]
    fn exact_pool_returns_everything() {
        let s = NegativeSampler::new(groups(&[1, 2, 3, 4, 5])).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut got = s.sample(&mut rng, 3, &["r1", "r3"]).unwrap();
        got.sort();
        assert_eq!(got, vec![0, 2, 4]);
        assert!(s.sample(&mut rng, 4, &["r1", "r3"]).is_err());
    }

    #[test]
    fn sampling_is_reproducible() {
        let s = NegativeSampler::new(groups(&[5, 1, 9, 2, 2, 7, 3])).unwrap();
        let a = s.sample::<_, &str>(&mut ChaCha8Rng::seed_from_u64(4), 4, &[]).unwrap();
        let b = s.sample::<_, &str>(&mut ChaCha8Rng::seed_from_u64(4), 4, &[]).unwrap();
        assert_eq!(a, b);
        let mut uniq = a.clone();
        uniq.sort();
        uniq.dedup();
        assert_eq!(uniq.len(), 4);
    }

    #[test]
    fn single_draw_frequencies_track_weights() {
        let w = [1u64, 2, 3, 4, 10];
        let s = NegativeSampler::new(groups(&w)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let trials = 100_000;
        let mut counts = [0u64; 5];
        for _ in 0..trials {
            counts[s.sample::<_, &str>(&mut rng, 1, &[]).unwrap()[0]] += 1;
        }
        let total: u64 = w.iter().sum();
        for (i, &c) in counts.iter().enumerate() {
            let p = w[i] as f64 / total as f64;
            let mean = trials as f64 * p;
            let sigma = (trials as f64 * p * (1.0 - p)).sqrt();
            assert!((c as f64 - mean).abs() < 3.0 * sigma, "bucket {i}: {c} vs {mean}");
        }
    }
}
