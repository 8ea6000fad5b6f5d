//! Template-driven synthetic help-desk conversations.
//!
//! Every conversation has one intent and one entity of that intent. Agent
//! turns come from fixed per-intent pools (acknowledgement, clarifying
//! question, resolution) or from a shared generic pool (closings). The
//! acknowledgement variant follows the customer's greeting and the closing
//! follows the customer's sign-off; question and resolution variants are
//! random, which leaves some irreducible ambiguity between candidates.

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Conversation, Role, Turn};

struct Intent {
    topic: &'static str,
    entities: [&'static str; 8],
}

const INTENTS: [Intent; 20] = [
    Intent { topic: "bill", entities: ["monthly", "annual", "business", "family", "student", "premium", "basic", "quarterly"] },
    Intent { topic: "password", entities: ["email", "admin", "portal", "wifi", "banking", "app", "vpn", "voicemail"] },
    Intent { topic: "delivery", entities: ["express", "overnight", "international", "weekend", "standard", "freight", "courier", "locker"] },
    Intent { topic: "refund", entities: ["partial", "full", "gift", "deposit", "shipping", "ticket", "cancellation", "overcharge"] },
    Intent { topic: "connection", entities: ["fiber", "cable", "satellite", "dsl", "hotspot", "ethernet", "wireless", "broadband"] },
    Intent { topic: "account", entities: ["savings", "checking", "joint", "corporate", "trial", "guest", "teacher", "partner"] },
    Intent { topic: "subscription", entities: ["music", "video", "news", "cloud", "gaming", "magazine", "fitness", "podcast"] },
    Intent { topic: "order", entities: ["grocery", "furniture", "laptop", "phone", "clothing", "book", "camera", "printer"] },
    Intent { topic: "appointment", entities: ["dental", "medical", "salon", "repair", "installation", "consultation", "inspection", "vaccine"] },
    Intent { topic: "device", entities: ["tablet", "router", "speaker", "watch", "thermostat", "doorbell", "television", "console"] },
    Intent { topic: "policy", entities: ["auto", "home", "renters", "travel", "pet", "life", "health", "boat"] },
    Intent { topic: "loan", entities: ["car", "mortgage", "personal", "equipment", "bridge", "tuition", "construction", "farm"] },
    Intent { topic: "card", entities: ["credit", "debit", "rewards", "platinum", "virtual", "secured", "metal", "fuel"] },
    Intent { topic: "reservation", entities: ["hotel", "flight", "restaurant", "rental", "cabin", "cruise", "train", "theater"] },
    Intent { topic: "warranty", entities: ["extended", "limited", "lifetime", "battery", "screen", "engine", "appliance", "roof"] },
    Intent { topic: "license", entities: ["office", "antivirus", "design", "accounting", "editing", "database", "backup", "translation"] },
    Intent { topic: "meter", entities: ["electric", "gas", "water", "solar", "smart", "sewer", "heating", "steam"] },
    Intent { topic: "membership", entities: ["gym", "club", "library", "museum", "golf", "pool", "yoga", "alumni"] },
    Intent { topic: "data", entities: ["location", "contact", "browsing", "payment", "biometric", "profile", "photo", "cookie"] },
    Intent { topic: "plan", entities: ["unlimited", "shared", "roaming", "senior", "youth", "voice", "starter", "pro"] },
];

const GREETINGS: [&str; 4] = ["hi", "hello", "hey there", "good morning"];

const PROBLEMS: [&str; 4] = [
    "my {e} {t} is not working",
    "i have a problem with my {e} {t}",
    "i need help with the {e} {t}",
    "something is wrong with my {e} {t}",
];

/// Indexed by greeting.
const ACKS: [&str; 4] = [
    "i can help you with your {e} {t}.",
    "thanks for reaching out about your {e} {t}.",
    "sorry to hear about the {e} {t} issue.",
    "let me look into the {e} {t} for you.",
];

const FILLERS: [&str; 4] = ["ok", "sure", "thanks", "great"];

const QUESTIONS: [&str; 5] = [
    "when did the {e} {t} problem start?",
    "is the {e} {t} showing any error message?",
    "have you tried turning the {e} {t} off and on?",
    "which address is the {e} {t} linked to?",
    "can you confirm the last four digits on the {e} {t}?",
];

const ANSWERS: [&str; 5] = [
    "it started yesterday",
    "no error that i can see",
    "yes i tried that already",
    "it is on my main address",
    "not sure to be honest",
];

const RESOLUTIONS: [&str; 5] = [
    "i have updated the {e} {t} and it should work now.",
    "the {e} {t} has been reset, please try again.",
    "i escalated the {e} {t} to our specialist team.",
    "your {e} {t} request is complete.",
    "i applied a fix to the {e} {t} on our side.",
];

/// Customer sign-off and the agent reply it determines.
const CLOSINGS: [(&str, &str); 4] = [
    ("thanks, that's all", "you're welcome! have a great day."),
    ("great, bye", "goodbye and take care."),
    ("perfect, thank you so much", "happy to help, thanks for contacting us."),
    ("ok cool", "is there anything else i can help with?"),
];

/// Name of the shared pool in [`response_pools`].
pub const GENERIC_POOL: &str = "generic";

/// Canonical responses an agent can give for one intent, or the generic pool.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ResponsePool {
    pub name: String,
    pub responses: Vec<String>,
}

fn pseudo_word(rng: &mut ChaCha8Rng) -> String {
    const ONSETS: [&str; 14] = ["b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z"];
    const VOWELS: [&str; 5] = ["a", "e", "i", "o", "u"];
    let syllables = rng.random_range(2..=3);
    (0..syllables)
        .map(|_| format!("{}{}", ONSETS.choose(rng).unwrap(), VOWELS.choose(rng).unwrap()))
        .collect()
}

/// Topic word and entities of intent `i`; beyond the curated list they are
/// generated pseudo-words fixed by the index.
fn intent_vocab(i: usize) -> (String, Vec<String>) {
    if let Some(it) = INTENTS.get(i) {
        return (it.topic.to_string(), it.entities.iter().map(|s| s.to_string()).collect());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0x5EED_0000 + i as u64);
    let topic = pseudo_word(&mut rng);
    let entities = (0..8).map(|_| pseudo_word(&mut rng)).collect();
    (topic, entities)
}

fn fill(template: &str, entity: &str, topic: &str) -> String {
    template.replace("{e}", entity).replace("{t}", topic)
}

/// Every canonical agent response, one pool per intent followed by the
/// generic pool.
pub fn response_pools(n_intents: usize) -> Vec<ResponsePool> {
    let mut pools: Vec<ResponsePool> = (0..n_intents)
        .map(|i| {
            let (topic, entities) = intent_vocab(i);
            let mut responses = Vec::new();
            for e in &entities {
                for t in ACKS.iter().chain(&QUESTIONS).chain(&RESOLUTIONS) {
                    responses.push(fill(t, e, &topic));
                }
            }
            ResponsePool {
                name: format!("intent-{i}-{topic}"),
                responses,
            }
        })
        .collect();
    pools.push(ResponsePool {
        name: GENERIC_POOL.into(),
        responses: CLOSINGS.iter().map(|(_, a)| a.to_string()).collect(),
    });
    pools
}

fn typo(word: &str, rng: &mut ChaCha8Rng) -> String {
    let mut chars: Vec<char> = word.chars().collect();
    let i = rng.random_range(0..chars.len() - 1);
    match rng.random_range(0..4) {
        0 => chars.swap(i, i + 1),
        1 => {
            chars.remove(i);
        }
        2 => chars.insert(i, chars[i]),
        _ => chars[i] = (b'a' + rng.random_range(0..26u8)) as char,
    }
    chars.into_iter().collect()
}

/// Replaces each eligible word (alphabetic, at least 3 letters) with a typo
/// with probability `rate`.
fn add_noise(text: &str, rate: f64, rng: &mut ChaCha8Rng) -> String {
    if rate <= 0.0 {
        return text.to_string();
    }
    text.split(' ')
        .map(|w| {
            if w.len() >= 3 && w.chars().all(|c| c.is_ascii_alphabetic()) && rng.random_bool(rate.min(1.0)) {
                typo(w, rng)
            } else {
                w.to_string()
            }
        })
        .collect::<Vec<_>>()
        .join(" ")
}

/// Surface variation that normalization folds away: capitalized first
/// letter and a changed or dropped final period.
fn surface(text: &str, rng: &mut ChaCha8Rng) -> String {
    let mut s = text.to_string();
    if rng.random_bool(0.5) {
        let mut cs = s.chars();
        if let Some(first) = cs.next() {
            s = first.to_uppercase().chain(cs).collect();
        }
    }
    if s.ends_with('.') {
        match rng.random_range(0..10) {
            0 => {
                s.pop();
                s.push('!');
            }
            1 => {
                s.pop();
            }
            _ => {}
        }
    }
    s
}

/// Generates `n_conversations` conversations over `n_intents` intents.
/// Customer words get typos at `noise_rate`. Identical arguments give
/// identical output.
pub fn synth_corpus(
    n_conversations: usize,
    n_intents: usize,
    noise_rate: f64,
    seed: u64,
) -> crate::Result<Vec<Conversation>> {
    if n_intents < 2 {
        return Err(crate::Error::invalid("synthetic corpus needs at least 2 intents"));
    }
    if !(0.0..=1.0).contains(&noise_rate) {
        return Err(crate::Error::invalid(format!("noise rate {noise_rate} outside [0, 1]")));
    }
    let vocab: Vec<(String, Vec<String>)> = (0..n_intents).map(intent_vocab).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // Separate stream so the noise rate never changes conversation structure.
    let mut noise_rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9E37_79B9_7F4A_7C15);
    let mut out = Vec::with_capacity(n_conversations);
    for c in 0..n_conversations {
        let (topic, entities) = &vocab[rng.random_range(0..n_intents)];
        let entity = entities.choose(&mut rng).unwrap();
        let greet = rng.random_range(0..GREETINGS.len());
        let problem = PROBLEMS.choose(&mut rng).unwrap();
        let mut turns = Vec::new();
        let mut say = |role: Role, text: String| turns.push(Turn { role, text });

        let opening = format!("{}, {}", GREETINGS[greet], fill(problem, entity, topic));
        say(Role::Customer, add_noise(&opening, noise_rate, &mut noise_rng));
        say(Role::Agent, surface(&fill(ACKS[greet], entity, topic), &mut rng));
        say(Role::Customer, FILLERS.choose(&mut rng).unwrap().to_string());
        let question = QUESTIONS.choose(&mut rng).unwrap();
        say(Role::Agent, surface(&fill(question, entity, topic), &mut rng));
        let answer = ANSWERS.choose(&mut rng).unwrap();
        say(Role::Customer, add_noise(answer, noise_rate, &mut noise_rng));
        let resolution = RESOLUTIONS.choose(&mut rng).unwrap();
        say(Role::Agent, surface(&fill(resolution, entity, topic), &mut rng));
        if rng.random_bool(0.75) {
            let (bye, reply) = CLOSINGS.choose(&mut rng).unwrap();
            say(Role::Customer, add_noise(bye, noise_rate, &mut noise_rng));
            say(Role::Agent, surface(reply, &mut rng));
        }
        out.push(Conversation {
            id: format!("conv-{c:06}"),
            turns,
        });
    }
    Ok(out)
}
