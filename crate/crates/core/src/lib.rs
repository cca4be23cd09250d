//! Data path for a tiled multimodal training pipeline: image tiling and
//! vision-token budgeting, projector arithmetic, offline sequence packing
//! with per-case attention masks, annealed curriculum scheduling,
//! reasoning/direct data mixing, and a cyclic multiple-choice evaluation
//! harness with caption metrics.
//!
//! Everything operates on metadata (dimensions, token counts, ids); no
//! pixels, tokenizers, or model weights are involved. All operations are
//! deterministic given their seeds.

pub mod budget;
pub mod curriculum;
pub mod eval;
pub mod model;
pub mod packing;
pub mod projector;
pub mod tiling;

/// FNV-1a 64-bit hash. Used wherever a stable, platform-independent hash
/// is needed (shard assignment, sub-seed derivation); never for security.
pub fn stable_hash64(bytes: &[u8]) -> u64 {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    let mut hash = OFFSET;
    for &byte in bytes {
        hash ^= byte as u64;
        hash = hash.wrapping_mul(PRIME);
    }
    hash
}

/// Sub-seed for one (command, shard) unit, derived from the master seed.
pub fn derive_seed(master: u64, command: &str, shard: u32) -> u64 {
    let mut bytes = Vec::with_capacity(command.len() + 12);
    bytes.extend_from_slice(&master.to_le_bytes());
    bytes.extend_from_slice(command.as_bytes());
    bytes.extend_from_slice(&shard.to_le_bytes());
    stable_hash64(&bytes)
}
