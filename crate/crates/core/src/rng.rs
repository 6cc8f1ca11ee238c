//! Deterministic random streams.
//!
//! Every draw in a simulation comes from a stream keyed by
//! `(master_seed, replication, purpose)`; tree simulations further split the
//! stream per particle using a hash of the particle's Ulam–Harris label.
//! Subtree simulation order therefore never changes which numbers a particle
//! sees, and results do not depend on how replications are scheduled.
//!
//! Seed derivation (frozen; changing it changes every output byte):
//!
//! ```text
//! stream   = mix(mix(mix(master_seed ^ 0x5350_494E_454C_4157) ^ rep) ^ purpose_tag)
//! label(∅) = 0x243F_6A88_85A3_08D3
//! label(u·i) = mix(label(u) ^ (i + 1) * 0x9E37_79B9_7F4A_7C15)
//! particle = Xoshiro256++ seeded via seed_from_u64(mix(stream ^ label))
//! ```
//!
//! `mix` is the SplitMix64 finalizer.

use rand::SeedableRng;
use rand_xoshiro::Xoshiro256PlusPlus;

pub type SimRng = Xoshiro256PlusPlus;

const SEED_SALT: u64 = 0x5350_494E_454C_4157;
const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

/// Hash of the empty label (the root particle).
pub const ROOT_LABEL_HASH: u64 = 0x243F_6A88_85A3_08D3;

/// SplitMix64 finalizer.
#[inline]
pub fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[inline]
pub fn child_label_hash(parent: u64, child_index: u32) -> u64 {
    mix(parent ^ (u64::from(child_index) + 1).wrapping_mul(GOLDEN))
}

/// What a stream is used for. The tag keeps streams of one replication apart.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Purpose {
    /// Full tree under the original measure.
    PTree,
    /// Spine path, spine branch times and spine offspring under the spine measure.
    Spine,
    /// Non-spine subtrees grafted onto the spine.
    SpineSubtrees,
    /// Root-lifetime sampling.
    Lifetime,
    /// Free-standing motion paths (martingale checks on ζ).
    Motion,
}

impl Purpose {
    pub fn tag(self) -> u64 {
        match self {
            Purpose::PTree => 1,
            Purpose::Spine => 2,
            Purpose::SpineSubtrees => 3,
            Purpose::Lifetime => 4,
            Purpose::Motion => 5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct RngHandle {
    pub master_seed: u64,
    pub rep: u64,
    pub purpose: Purpose,
}

impl RngHandle {
    pub fn new(master_seed: u64, rep: u64, purpose: Purpose) -> Self {
        Self {
            master_seed,
            rep,
            purpose,
        }
    }

    pub fn with_purpose(self, purpose: Purpose) -> Self {
        Self { purpose, ..self }
    }

    pub fn stream_seed(&self) -> u64 {
        mix(mix(mix(self.master_seed ^ SEED_SALT) ^ self.rep) ^ self.purpose.tag())
    }

    /// A generator for the whole stream (used where there is no particle split).
    pub fn rng(&self) -> SimRng {
        SimRng::seed_from_u64(self.stream_seed())
    }

    /// The generator owned by the particle whose label hashes to `label_hash`.
    pub fn particle_rng(&self, label_hash: u64) -> SimRng {
        SimRng::seed_from_u64(mix(self.stream_seed() ^ label_hash))
    }
}
