use crate::error::{Error, Result};
use crate::tokenizer::TokenId;

/// MurmurHash3 64-bit finalizer.
#[inline]
pub fn fmix64(mut k: u64) -> u64 {
    k ^= k >> 33;
    k = k.wrapping_mul(0xff51_afd7_ed55_8ccd);
    k ^= k >> 33;
    k = k.wrapping_mul(0xc4ce_b9fe_1a85_ec53);
    k ^ (k >> 33)
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Signatures of `h` seeded hash functions over width-`w` token shingles.
#[derive(Debug, Clone)]
pub struct MinHasher {
    width: usize,
    seed: u64,
    seeds: Vec<u64>,
}

impl MinHasher {
    pub fn new(h: usize, width: usize, seed: u64) -> Result<Self> {
        if h == 0 {
            return Err(Error::Config("minhash needs at least one hash function".into()));
        }
        if width == 0 {
            return Err(Error::Config("shingle width must be at least 1".into()));
        }
        let mut state = seed;
        let seeds = (0..h).map(|_| splitmix64(&mut state)).collect();
        Ok(Self { width, seed, seeds })
    }

    pub fn len(&self) -> usize {
        self.seeds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.seeds.is_empty()
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Base hash of one shingle; every hash function derives from it.
    fn shingle_hash(&self, shingle: &[TokenId]) -> u64 {
        let mut h = fmix64(self.seed ^ shingle.len() as u64);
        for &t in shingle {
            h = fmix64(h ^ (t as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15));
        }
        h
    }

    /// A document shorter than the shingle width is a single shingle.
    pub fn signature(&self, tokens: &[TokenId]) -> Vec<u64> {
        let mut sig = vec![u64::MAX; self.seeds.len()];
        let mut fold = |base: u64| {
            for (slot, s) in sig.iter_mut().zip(&self.seeds) {
                let v = fmix64(base ^ s);
                if v < *slot {
                    *slot = v;
                }
            }
        };
        if tokens.len() < self.width {
            fold(self.shingle_hash(tokens));
        } else {
            for shingle in tokens.windows(self.width) {
                fold(self.shingle_hash(shingle));
            }
        }
        sig
    }
}

/// Fraction of coordinates on which two signatures agree.
pub fn matching_fraction(a: &[u64], b: &[u64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).filter(|(x, y)| x == y).count() as f64 / a.len() as f64
}
