//! Keyed random substreams.
//!
//! Every random draw in the crate comes from a ChaCha8 stream selected by a
//! key path, e.g. `(seed, "impute", geo, week, draw)`. Streams never share
//! state, so results do not depend on evaluation order or thread count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// One component of a substream key.
#[derive(Debug, Clone, Copy)]
pub enum Key<'a> {
    Str(&'a str),
    Int(u64),
}

impl<'a> From<&'a str> for Key<'a> {
    fn from(s: &'a str) -> Self {
        Key::Str(s)
    }
}

impl From<u64> for Key<'_> {
    fn from(v: u64) -> Self {
        Key::Int(v)
    }
}

impl From<usize> for Key<'_> {
    fn from(v: usize) -> Self {
        Key::Int(v as u64)
    }
}

fn stream_id(parts: &[Key<'_>]) -> u64 {
    let mut h = FNV_OFFSET;
    for p in parts {
        match p {
            Key::Str(s) => {
                for b in s.bytes() {
                    h = (h ^ b as u64).wrapping_mul(FNV_PRIME);
                }
                // terminator keeps ("ab","c") and ("a","bc") apart
                h = (h ^ 0xff).wrapping_mul(FNV_PRIME);
            }
            Key::Int(v) => h = splitmix(h ^ splitmix(*v)),
        }
    }
    h
}

/// The generator for `seed` restricted to the stream named by `parts`.
pub fn substream(seed: u64, parts: &[Key<'_>]) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream_id(parts));
    rng
}
