//! Seed derivation. Every independent task (outer bag, bootstrap resample,
//! sweep size, generated row) gets its own ChaCha stream so results do not
//! depend on how work is scheduled across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub(crate) const DOMAIN_OUTER_BAG: u64 = 0x6f75_7465_725f_6267;
pub(crate) const DOMAIN_BOOTSTRAP: u64 = 0x626f_6f74_7374_7270;
pub(crate) const DOMAIN_SWEEP: u64 = 0x7377_6565_705f_7369;
pub(crate) const DOMAIN_SYNTH: u64 = 0x7379_6e74_685f_726f;
pub(crate) const DOMAIN_SPLITS: u64 = 0x7370_6c69_745f_7273;

/// Stream `stream` of the generator family identified by `(seed, domain)`.
pub fn stream_rng(seed: u64, domain: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ domain);
    rng.set_stream(stream);
    rng
}
