//! Seeded, explicitly passed random number streams.
//!
//! Every stream is a ChaCha8 keystream keyed by the 64-bit seed and selected
//! by a 64-bit stream id, so any number of independent, reproducible streams
//! can be carved out of one seed (one per worker, per grid candidate, per
//! data split). There is no global RNG.
//!
//! Normal draws use the Box–Muller transform on two uniforms
//! `u1 ∈ (0, 1]`, `u2 ∈ [0, 1)`, each built from the top 53 bits of one
//! `u64` output:
//!
//! ```text
//! r  = sqrt(-2 ln u1)
//! z0 = r cos(2π u2)   (returned first)
//! z1 = r sin(2π u2)   (returned by the next call)
//! ```

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::numerics::tensor::DenseTensor;

#[derive(Debug, Clone)]
pub struct RngState {
    seed: u64,
    stream: u64,
    core: ChaCha8Rng,
    spare: Option<f64>,
}

impl RngState {
    pub fn new(seed: u64) -> Self {
        Self::with_stream(seed, 0)
    }

    pub fn with_stream(seed: u64, stream: u64) -> Self {
        let mut core = ChaCha8Rng::seed_from_u64(seed);
        core.set_stream(stream);
        Self {
            seed,
            stream,
            core,
            spare: None,
        }
    }

    /// Independent child stream identified by `tag`. Deriving does not
    /// advance `self`.
    pub fn derive(&self, tag: u64) -> Self {
        Self::with_stream(self.seed, mix_stream(self.stream, tag))
    }

    pub fn derive_path(&self, tags: &[u64]) -> Self {
        tags.iter().fold(self.clone(), |r, &t| r.derive(t))
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self) -> u64 {
        self.stream
    }

    /// Number of 32-bit words consumed from the keystream so far.
    pub fn word_position(&self) -> u128 {
        self.core.get_word_pos()
    }

    pub fn next_u64(&mut self) -> u64 {
        self.core.next_u64()
    }

    /// Uniform on `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform integer on `0..n` (rejection sampling, no modulo bias).
    pub fn below(&mut self, n: usize) -> usize {
        assert!(n > 0, "below(0)");
        let n = n as u64;
        let zone = u64::MAX - (u64::MAX % n);
        loop {
            let v = self.next_u64();
            if v < zone {
                return (v % n) as usize;
            }
        }
    }

    /// Uniform integer on the inclusive range `lo..=hi`.
    pub fn range_inclusive(&mut self, lo: usize, hi: usize) -> usize {
        lo + self.below(hi - lo + 1)
    }

    pub fn normal(&mut self) -> f64 {
        if let Some(z) = self.spare.take() {
            return z;
        }
        let u1 = 1.0 - self.uniform();
        let u2 = self.uniform();
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = 2.0 * std::f64::consts::PI * u2;
        self.spare = Some(r * theta.sin());
        r * theta.cos()
    }

    pub fn fill_normal(&mut self, out: &mut [f64]) {
        for v in out {
            *v = self.normal();
        }
    }
}

/// Draws a tensor of i.i.d. standard normal entries.
pub fn gaussian_sample(rng: &mut RngState, shape: &[usize]) -> Result<DenseTensor> {
    let mut t = DenseTensor::zeros(shape)?;
    let mut data = vec![0.0; t.len()];
    rng.fill_normal(&mut data);
    t = DenseTensor::new(t.shape().to_vec(), data)?;
    Ok(t)
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn mix_stream(parent: u64, tag: u64) -> u64 {
    splitmix64(splitmix64(parent) ^ tag.rotate_left(32) ^ 0xD1B5_4A32_D192_ED03)
}
