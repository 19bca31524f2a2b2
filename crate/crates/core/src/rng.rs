//! Counter-based random streams.
//!
//! Every stochastic routine receives a [`StreamKey`] instead of a live
//! generator. Keys form a tree: `key.child(i)` is a pure function of the
//! parent key and `i`, so the numbers drawn for replication 17, cluster 3 do
//! not depend on how many threads ran or in which order work was scheduled.
//! Leaves are turned into ChaCha8 generators.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

/// Labels for sibling sub-streams hanging off the same key.
pub mod label {
    pub const IMMIGRANTS: u64 = 0x1111_0001;
    pub const CLUSTERS: u64 = 0x1111_0002;
    pub const REPLICATIONS: u64 = 0x1111_0003;
    pub const GRAPH: u64 = 0x1111_0004;
    pub const THINNING: u64 = 0x1111_0005;
    pub const ORACLE: u64 = 0x1111_0006;
    pub const LIFETIMES: u64 = 0x1111_0007;
    pub const COUPLING: u64 = 0x1111_0008;
}

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct StreamKey(u64);

impl StreamKey {
    pub fn new(seed: u64) -> Self {
        StreamKey(splitmix64(seed ^ 0x6A09_E667_F3BC_C908))
    }

    pub fn child(self, index: u64) -> Self {
        StreamKey(splitmix64(self.0 ^ splitmix64(index.wrapping_add(0xA54F_F53A_5F1D_36F1))))
    }

    /// Shorthand for `self.child(label).child(index)`.
    pub fn sub(self, label: u64, index: u64) -> Self {
        self.child(label).child(index)
    }

    pub fn rng(self) -> SimRng {
        let mut seed = [0u8; 32];
        let mut state = self.0;
        for chunk in seed.chunks_exact_mut(8) {
            state = splitmix64(state);
            chunk.copy_from_slice(&state.to_le_bytes());
        }
        ChaCha8Rng::from_seed(seed)
    }

    pub fn raw(self) -> u64 {
        self.0
    }
}
