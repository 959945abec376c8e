use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

/// Concrete generator behind every [`RngStream`].
pub type StreamRng = ChaCha12Rng;

/// Identity of an independent random stream.
///
/// The master seed and the purpose tag select the ChaCha key; the replication
/// index selects the ChaCha stream id. Two streams with different tags or
/// indices never share key/stream pairs, so replications can run on any
/// worker in any order and still draw the same numbers.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RngStream {
    pub seed: u64,
    pub index: u64,
    pub tag: String,
}

impl RngStream {
    pub fn new(seed: u64, index: u64, tag: impl Into<String>) -> Self {
        RngStream {
            seed,
            index,
            tag: tag.into(),
        }
    }

    pub fn rng(&self) -> StreamRng {
        let mut state = self.seed ^ fnv1a(self.tag.as_bytes()).rotate_left(17);
        let mut key = [0u8; 32];
        for chunk in key.chunks_exact_mut(8) {
            chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
        }
        let mut rng = ChaCha12Rng::from_seed(key);
        rng.set_stream(self.index);
        rng
    }
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// 64-bit FNV-1a.
pub(crate) fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ u64::from(*b)).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

pub(crate) fn standard_normal(rng: &mut impl Rng) -> f64 {
    rng.sample(StandardNormal)
}

/// `N(0, sd²)` conditioned on `|value| ≤ bound`, by rejection.
pub(crate) fn truncated_normal(rng: &mut impl Rng, sd: f64, bound: f64) -> f64 {
    loop {
        let v = sd * standard_normal(rng);
        if v.abs() <= bound {
            return v;
        }
    }
}
