//! Deterministic random streams.
//!
//! Every stream is a ChaCha8 generator keyed by `SHA-256(seed ‖ tag ‖ index)`,
//! so results depend only on the master seed and the stream label, never on
//! thread scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub type StreamRng = ChaCha8Rng;

pub fn stream_key(seed: u64, tag: &str, index: u64) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update((tag.len() as u64).to_le_bytes());
    h.update(tag.as_bytes());
    h.update(index.to_le_bytes());
    h.finalize().into()
}

pub fn stream(seed: u64, tag: &str, index: u64) -> StreamRng {
    ChaCha8Rng::from_seed(stream_key(seed, tag, index))
}

/// Sub-seed for an independent family of streams.
pub fn derive_seed(seed: u64, label: &str) -> u64 {
    let key = stream_key(seed, label, u64::MAX);
    u64::from_le_bytes(key[..8].try_into().expect("eight bytes"))
}

/// Uniform point on the sphere of radius `radius` in `R^dim`.
pub fn uniform_sphere<R: rand::Rng + ?Sized>(rng: &mut R, dim: usize, radius: f64) -> Vec<f64> {
    use rand_distr::{Distribution, StandardNormal};
    loop {
        let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            return v.into_iter().map(|x| x * radius / norm).collect();
        }
    }
}
