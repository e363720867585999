//! Seed derivation. Every random stream in a run is keyed by
//! `(master_seed, round, node, purpose)` so no global RNG state exists.

use crate::hash::Digest;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Node slot used for streams that do not belong to a single node.
pub const GLOBAL_STREAM: u64 = u64::MAX;

pub mod tags {
    pub const INIT: &str = "init";
    pub const SPLIT: &str = "split";
    pub const DATA: &str = "data";
    pub const PARTITION: &str = "partition";
    pub const ASSIGN: &str = "assign";
    pub const SHUFFLE: &str = "shuffle";
    pub const ATTACK: &str = "attack";
    pub const ROLES: &str = "roles";
    pub const POW: &str = "pow";

    pub const ALL: &[&str] = &[
        INIT, SPLIT, DATA, PARTITION, ASSIGN, SHUFFLE, ATTACK, ROLES, POW,
    ];
}

/// SHA-256(master ‖ round ‖ node ‖ tag), big-endian integers, truncated to
/// the first 8 bytes.
pub fn derive_seed(master_seed: u64, round: u64, node: u64, tag: &str) -> u64 {
    let d = Digest::of_parts(&[
        &master_seed.to_be_bytes(),
        &round.to_be_bytes(),
        &node.to_be_bytes(),
        tag.as_bytes(),
    ]);
    u64::from_be_bytes(d.0[..8].try_into().expect("8 bytes"))
}

pub fn rng_from(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
