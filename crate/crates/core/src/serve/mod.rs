//! Precomputed whitelist encodings, exact top-k ranking, the HTTP
//! suggestion service and latency benchmarks.

mod api;
mod bench;
mod index;

pub use api::{
    bind, router, serve_http, AccessLog, Health, SuggestRequest, SuggestResponse, Suggester, Suggestion, Timing,
    WhitelistView, DEFAULT_TOP_K, MAX_BODY_BYTES,
};
pub use bench::{bench_encoder, bench_rank, cpu_model, random_index, BenchConfig, BenchReport};
pub use index::{top_k, Ranked, ResponseIndex};
