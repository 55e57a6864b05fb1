//! Named, independent random substreams derived from one root seed.
//!
//! Every source of randomness in a run is a `substream(seed, name)`, so
//! changing how one consumer draws (say, evaluation repeats) never perturbs
//! another (training batches).

use rand_chacha::ChaCha8Rng;
use rand_chacha::rand_core::SeedableRng;
use sha2::{Digest, Sha256};

pub type Stream = ChaCha8Rng;

/// Deterministic rng for `name` under the root `seed`.
pub fn substream(seed: u64, name: &str) -> Stream {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update(name.as_bytes());
    let digest = hasher.finalize();
    let mut key = [0u8; 32];
    key.copy_from_slice(&digest);
    ChaCha8Rng::from_seed(key)
}
