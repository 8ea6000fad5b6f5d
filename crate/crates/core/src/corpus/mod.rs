//! Conversation logs, context construction, training examples, splits and
//! corpus statistics.

mod synth;
mod text;

use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::LazyLock;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub use synth::{response_pools, synth_corpus, ResponsePool, GENERIC_POOL};
pub use text::{normalize_response, tokenize};

/// Most recent context tokens kept.
pub const MAX_CONTEXT_TOKENS: usize = 500;
/// Leading response tokens kept.
pub const MAX_RESPONSE_TOKENS: usize = 100;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Customer,
    Agent,
}

impl Role {
    /// Reserved token that prefixes an utterance by this speaker.
    pub fn token(self) -> &'static str {
        match self {
            Role::Customer => "<customer>",
            Role::Agent => "<agent>",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Turn {
    pub role: Role,
    pub text: String,
}

impl Turn {
    pub fn new(role: Role, text: impl Into<String>) -> Result<Self> {
        let text = text.into();
        if text.trim().is_empty() {
            return Err(Error::invalid("turn text is empty"));
        }
        Ok(Turn { role, text })
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Conversation {
    pub id: String,
    pub turns: Vec<Turn>,
}

impl Conversation {
    pub fn validate(&self) -> Result<()> {
        if self.turns.is_empty() {
            return Err(Error::invalid(format!("conversation {} has no turns", self.id)));
        }
        if let Some(i) = self.turns.iter().position(|t| t.text.trim().is_empty()) {
            return Err(Error::invalid(format!(
                "conversation {} turn {i} has empty text",
                self.id
            )));
        }
        Ok(())
    }
}

/// One agent turn with the context that precedes it.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainingExample {
    pub context_tokens: Vec<String>,
    pub response_tokens: Vec<String>,
    pub response_text: String,
    pub conversation_id: String,
    pub turn_index: usize,
}

impl TrainingExample {
    pub fn response_key(&self) -> String {
        normalize_response(&self.response_text)
    }

    /// Context tokens, or the lone `<agent>` token when the agent speaks
    /// first, so that every context can be encoded.
    pub fn context_or_role(&self) -> &[String] {
        if self.context_tokens.is_empty() {
            std::slice::from_ref(&*EMPTY_CONTEXT)
        } else {
            &self.context_tokens
        }
    }
}

static EMPTY_CONTEXT: LazyLock<String> = LazyLock::new(|| Role::Agent.token().to_string());

fn push_turn(out: &mut Vec<String>, turn: &Turn) {
    out.push(turn.role.token().to_string());
    out.extend(tokenize(&turn.text));
}

fn keep_recent(mut tokens: Vec<String>) -> Vec<String> {
    if tokens.len() > MAX_CONTEXT_TOKENS {
        tokens.drain(..tokens.len() - MAX_CONTEXT_TOKENS);
    }
    tokens
}

/// Role-tagged tokens of turns `0..upto`, truncated to the most recent
/// [`MAX_CONTEXT_TOKENS`].
pub fn build_context(conv: &Conversation, upto: usize) -> Result<Vec<String>> {
    if upto > conv.turns.len() {
        return Err(Error::invalid(format!(
            "context end {upto} beyond {} turns",
            conv.turns.len()
        )));
    }
    let mut tokens = Vec::new();
    for turn in &conv.turns[..upto] {
        push_turn(&mut tokens, turn);
    }
    Ok(keep_recent(tokens))
}

/// Builds a context directly from turns, as a serving request supplies them.
pub fn context_from_turns(turns: &[Turn]) -> Vec<String> {
    let mut tokens = Vec::new();
    for turn in turns {
        push_turn(&mut tokens, turn);
    }
    keep_recent(tokens)
}

/// Response tokens as used for encoding, truncated to [`MAX_RESPONSE_TOKENS`].
pub fn response_tokens(text: &str) -> Vec<String> {
    let mut tokens = tokenize(text);
    tokens.truncate(MAX_RESPONSE_TOKENS);
    tokens
}

/// One example per agent turn.
pub fn extract_examples(conv: &Conversation) -> Vec<TrainingExample> {
    let mut out = Vec::new();
    let mut history: Vec<String> = Vec::new();
    for (i, turn) in conv.turns.iter().enumerate() {
        if turn.role == Role::Agent {
            let start = history.len().saturating_sub(MAX_CONTEXT_TOKENS);
            out.push(TrainingExample {
                context_tokens: history[start..].to_vec(),
                response_tokens: response_tokens(&turn.text),
                response_text: turn.text.clone(),
                conversation_id: conv.id.clone(),
                turn_index: i,
            });
        }
        push_turn(&mut history, turn);
    }
    out
}

pub fn extract_all(convs: &[Conversation]) -> Vec<TrainingExample> {
    convs.iter().flat_map(extract_examples).collect()
}

/// Agent responses sharing one normalization key.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ResponseGroup {
    pub key: String,
    /// Most frequent raw variant; ties go to the lexicographically first.
    pub text: String,
    pub frequency: u64,
}

/// Groups example responses by normalization key, ordered by descending
/// frequency and then by key.
pub fn group_responses(examples: &[TrainingExample]) -> Vec<ResponseGroup> {
    let mut groups: HashMap<String, HashMap<&str, u64>> = HashMap::new();
    for ex in examples {
        *groups
            .entry(ex.response_key())
            .or_default()
            .entry(ex.response_text.as_str())
            .or_default() += 1;
    }
    let mut out: Vec<ResponseGroup> = groups
        .into_iter()
        .map(|(key, variants)| {
            let frequency = variants.values().sum();
            let (text, _) = variants
                .into_iter()
                .min_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)))
                .expect("group has a variant");
            ResponseGroup {
                key,
                text: text.to_string(),
                frequency,
            }
        })
        .collect();
    out.sort_by(|a, b| b.frequency.cmp(&a.frequency).then_with(|| a.key.cmp(&b.key)));
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize, schemars::JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct SplitFractions {
    pub train: f64,
    pub validation: f64,
    pub test: f64,
}

impl Default for SplitFractions {
    fn default() -> Self {
        SplitFractions {
            train: 0.8,
            validation: 0.1,
            test: 0.1,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CorpusSplit {
    pub train: Vec<Conversation>,
    pub validation: Vec<Conversation>,
    pub test: Vec<Conversation>,
    pub seed: u64,
}

/// Split sizes by largest remainder, then at least one conversation per part.
fn split_sizes(n: usize, f: &SplitFractions) -> [usize; 3] {
    let exact = [f.train * n as f64, f.validation * n as f64, f.test * n as f64];
    let mut sizes = exact.map(|x| x.floor() as usize);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| {
        let ra = exact[a] - exact[a].floor();
        let rb = exact[b] - exact[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    let mut missing = n - sizes.iter().sum::<usize>();
    for &i in order.iter().cycle() {
        if missing == 0 {
            break;
        }
        sizes[i] += 1;
        missing -= 1;
    }
    for i in [1, 2] {
        if sizes[i] == 0 {
            let donor = (0..3).max_by_key(|&j| (sizes[j], 3 - j)).unwrap();
            sizes[donor] -= 1;
            sizes[i] += 1;
        }
    }
    if sizes[0] == 0 {
        let donor = if sizes[1] >= sizes[2] { 1 } else { 2 };
        sizes[donor] -= 1;
        sizes[0] += 1;
    }
    sizes
}

/// Seeded partition of conversations into train, validation and test.
/// Each part keeps the input order of its members.
pub fn split_corpus(convs: &[Conversation], fractions: SplitFractions, seed: u64) -> Result<CorpusSplit> {
    let f = fractions;
    if [f.train, f.validation, f.test].iter().any(|x| !(0.0..=1.0).contains(x))
        || (f.train + f.validation + f.test - 1.0).abs() > 1e-9
    {
        return Err(Error::invalid(format!(
            "split fractions must be in [0, 1] and sum to 1, got {f:?}"
        )));
    }
    if convs.len() < 3 {
        return Err(Error::invalid(format!(
            "need at least 3 conversations to split, got {}",
            convs.len()
        )));
    }
    check_unique_ids(convs)?;
    let sizes = split_sizes(convs.len(), &f);
    let mut order: Vec<usize> = (0..convs.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut part = vec![0u8; convs.len()];
    for &i in &order[sizes[0]..sizes[0] + sizes[1]] {
        part[i] = 1;
    }
    for &i in &order[sizes[0] + sizes[1]..] {
        part[i] = 2;
    }
    let pick = |p: u8| -> Vec<Conversation> {
        convs
            .iter()
            .zip(&part)
            .filter(|(_, &q)| q == p)
            .map(|(c, _)| c.clone())
            .collect()
    };
    Ok(CorpusSplit {
        train: pick(0),
        validation: pick(1),
        test: pick(2),
        seed,
    })
}

fn check_unique_ids(convs: &[Conversation]) -> Result<()> {
    let mut seen = HashSet::new();
    for c in convs {
        if !seen.insert(c.id.as_str()) {
            return Err(Error::invalid(format!("duplicate conversation id {}", c.id)));
        }
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub conversations: usize,
    pub utterances: usize,
    pub customer_utterances: usize,
    pub agent_utterances: usize,
    pub mean_conversation_length: f64,
    pub mean_utterance_length: f64,
    pub mean_customer_utterance_length: f64,
    pub mean_agent_utterance_length: f64,
}

pub fn corpus_stats(convs: &[Conversation]) -> Result<CorpusStats> {
    if convs.is_empty() {
        return Err(Error::invalid("corpus is empty"));
    }
    let (mut n_cust, mut n_agent, mut tok_cust, mut tok_agent) = (0usize, 0usize, 0usize, 0usize);
    for turn in convs.iter().flat_map(|c| &c.turns) {
        let n = tokenize(&turn.text).len();
        match turn.role {
            Role::Customer => {
                n_cust += 1;
                tok_cust += n;
            }
            Role::Agent => {
                n_agent += 1;
                tok_agent += n;
            }
        }
    }
    let mean = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    let utterances = n_cust + n_agent;
    Ok(CorpusStats {
        conversations: convs.len(),
        utterances,
        customer_utterances: n_cust,
        agent_utterances: n_agent,
        mean_conversation_length: mean(utterances, convs.len()),
        mean_utterance_length: mean(tok_cust + tok_agent, utterances),
        mean_customer_utterance_length: mean(tok_cust, n_cust),
        mean_agent_utterance_length: mean(tok_agent, n_agent),
    })
}

/// Reads newline-delimited JSON conversations. Blank lines are skipped.
pub fn read_jsonl(path: &Path) -> Result<Vec<Conversation>> {
    let file = File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path.display().to_string(), e))?;
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message,
        };
        let conv: Conversation = serde_json::from_str(&line).map_err(|e| parse_err(e.to_string()))?;
        conv.validate().map_err(|e| parse_err(e.to_string()))?;
        out.push(conv);
    }
    check_unique_ids(&out)?;
    Ok(out)
}

/// Canonical JSONL bytes: one compact object per line.
pub fn to_jsonl(convs: &[Conversation]) -> Vec<u8> {
    let mut out = Vec::new();
    for c in convs {
        serde_json::to_writer(&mut out, c).expect("conversation serializes");
        out.push(b'\n');
    }
    out
}

pub fn write_jsonl(path: &Path, convs: &[Conversation]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut w = BufWriter::new(file);
    w.write_all(&to_jsonl(convs))
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(path.display().to_string(), e))
}

/// SHA-256 of the canonical JSONL encoding.
pub fn corpus_hash(convs: &[Conversation]) -> String {
    hex::encode(Sha256::digest(to_jsonl(convs)))
}
