//! Named random streams derived from a single user seed.
//!
//! Every consumer of randomness gets its own ChaCha stream, so switching one
//! feature on (say, Bayesian layers) never shifts the data order or the
//! initial weights.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stream {
    Init,
    Shuffle,
    Bnn,
    Egm,
    Latent,
    Simulate,
    Mask,
    Hmc,
    HmcWeights,
    Bench,
}

impl Stream {
    fn tag(self) -> u64 {
        match self {
            Stream::Init => 0x11,
            Stream::Shuffle => 0x22,
            Stream::Bnn => 0x33,
            Stream::Egm => 0x44,
            Stream::Latent => 0x55,
            Stream::Simulate => 0x66,
            Stream::Mask => 0x77,
            Stream::Hmc => 0x88,
            Stream::HmcWeights => 0x99,
            Stream::Bench => 0xaa,
        }
    }
}

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

pub fn stream(seed: u64, which: Stream) -> Rng {
    Rng::seed_from_u64(splitmix(seed ^ splitmix(which.tag())))
}

/// Independent sub-stream `index` of a named stream (one per sample, sweep, ...).
pub fn substream(seed: u64, which: Stream, index: u64) -> Rng {
    let mut rng = stream(seed, which);
    rng.set_stream(index);
    rng
}
