//! Seeded pseudorandom streams.
//!
//! A keyed ChaCha20 stream in counter mode: the 256-bit seed is the key and a
//! 64-bit domain label selects the stream, so two endpoints holding the same
//! seed derive the same mask for the same label without talking.

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::ring::{Ring, RingTensor};

pub type Seed = [u8; 32];

/// What a stream is used for; mixed into the domain label.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u8)]
pub enum Purpose {
    Share = 1,
    Lambda = 2,
    Triple = 3,
    Mask = 4,
    Derive = 5,
    Prep = 6,
}

/// Builds a stream label from a purpose, a slot/tensor index and a sub-index.
pub fn domain(purpose: Purpose, index: u32, sub: u16) -> u64 {
    (purpose as u64) << 56 | u64::from(sub) << 32 | u64::from(index)
}

pub struct SeedStream {
    rng: ChaCha20Rng,
}

impl SeedStream {
    pub fn new(seed: &Seed, domain: u64) -> Self {
        let mut rng = ChaCha20Rng::from_seed(*seed);
        rng.set_stream(domain);
        SeedStream { rng }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    /// Uniform tensor over the whole ring.
    pub fn ring_tensor(&mut self, ring: Ring, shape: alloc::vec::Vec<usize>) -> RingTensor {
        RingTensor::from_fn(ring, shape, |_| self.rng.next_u64())
    }

    /// Uniform tensor with entries in `[0, 2^bits)`.
    pub fn bounded_tensor(&mut self, ring: Ring, shape: alloc::vec::Vec<usize>, bits: u32) -> RingTensor {
        let mask = if bits >= 64 { u64::MAX } else { (1u64 << bits) - 1 };
        RingTensor::from_fn(ring, shape, |_| self.rng.next_u64() & mask)
    }

    pub fn fill_bytes(&mut self, out: &mut [u8]) {
        self.rng.fill_bytes(out)
    }
}

/// Derives an independent seed from a master seed and a label.
pub fn derive_seed(master: &Seed, label: u32) -> Seed {
    let mut s = SeedStream::new(master, domain(Purpose::Derive, label, 0));
    let mut out = [0u8; 32];
    s.fill_bytes(&mut out);
    out
}

/// Expands a 64-bit user seed (e.g. from `LRMPC_SEED`) into a 256-bit seed.
pub fn seed_from_u64(x: u64) -> Seed {
    let mut out = [0u8; 32];
    ChaCha20Rng::seed_from_u64(x).fill_bytes(&mut out);
    out
}
