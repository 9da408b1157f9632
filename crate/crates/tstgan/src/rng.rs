//! Seed plumbing. One user-facing seed fans out to independent,
//! reproducible streams: every consumer gets a ChaCha8 generator on its own
//! stream index, so adding draws in one subsystem never shifts another.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream indices for the fixed subsystems. Evaluation runs use
/// `EVAL_RUN_BASE + run_index`.
pub mod stream {
    pub const DATA: u64 = 1;
    pub const INIT: u64 = 2;
    pub const TRAIN: u64 = 3;
    pub const SYNTH: u64 = 4;
    pub const TSNE: u64 = 5;
    pub const EVAL_RUN_BASE: u64 = 100;
}

/// Generator for (`seed`, `stream`). Same pair, same sequence.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Derive an independent sub-seed from a master seed and a counter
/// (SplitMix64 finalizer). Used to fan one `--seed` out to per-run seeds.
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed.wrapping_add((index + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Serializable position of a stream generator, enough to recreate it.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize, PartialEq, Eq)]
pub struct RngState {
    pub seed: u64,
    pub stream: u64,
    /// 128-bit word position, decimal string (JSON has no u128).
    pub word_pos: String,
}

pub fn capture(seed: u64, stream: u64, rng: &ChaCha8Rng) -> RngState {
    RngState {
        seed,
        stream,
        word_pos: rng.get_word_pos().to_string(),
    }
}

pub fn restore(state: &RngState) -> ChaCha8Rng {
    let mut rng = stream_rng(state.seed, state.stream);
    let pos: u128 = state.word_pos.parse().unwrap_or(0);
    rng.set_word_pos(pos);
    rng
}
