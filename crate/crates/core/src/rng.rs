//! Keyed random streams.
//!
//! Every random draw in a run comes from a [`RngStream`] identified by
//! `(master_seed, label, worker, round)`. The generator for a key is a
//! ChaCha8 instance seeded with the SHA-256 digest of the key, so the
//! order in which workers are evaluated never changes the draws.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::schedule::CoeffMode;

/// Lineage of one random stream.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct RngStream {
    master_seed: u64,
    label: String,
    worker: u64,
    round: u64,
}

impl RngStream {
    pub fn new(master_seed: u64, label: &str) -> Self {
        RngStream {
            master_seed,
            label: label.to_owned(),
            worker: 0,
            round: 0,
        }
    }

    pub fn keyed(master_seed: u64, label: &str, worker: usize, round: usize) -> Self {
        RngStream {
            master_seed,
            label: label.to_owned(),
            worker: worker as u64,
            round: round as u64,
        }
    }

    pub fn worker(mut self, worker: usize) -> Self {
        self.worker = worker as u64;
        self
    }

    pub fn round(mut self, round: usize) -> Self {
        self.round = round as u64;
        self
    }

    pub fn master_seed(&self) -> u64 {
        self.master_seed
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    /// Fresh generator positioned at the start of this stream.
    pub fn rng(&self) -> ChaCha8Rng {
        let mut hasher = Sha256::new();
        hasher.update(self.master_seed.to_le_bytes());
        hasher.update((self.label.len() as u64).to_le_bytes());
        hasher.update(self.label.as_bytes());
        hasher.update(self.worker.to_le_bytes());
        hasher.update(self.round.to_le_bytes());
        let digest = hasher.finalize();
        let mut seed = [0u8; 32];
        seed.copy_from_slice(&digest);
        ChaCha8Rng::from_seed(seed)
    }
}

/// Scalar cognitive and social coefficients for one worker in one round,
/// each drawn from `Uniform(0, max]`.
pub fn draw_pso_coeffs(stream: &RngStream, c1_max: f64, c2_max: f64) -> (f64, f64) {
    let mut rng = stream.rng();
    // gen::<f64>() is in [0, 1); flipping it gives (0, 1].
    let u1 = 1.0 - rng.random::<f64>();
    let u2 = 1.0 - rng.random::<f64>();
    (u1 * c1_max, u2 * c2_max)
}

/// Cognitive and social coefficients for one worker in one round.
#[derive(Clone, Debug, PartialEq)]
pub enum PsoCoeffs {
    Scalar(f64, f64),
    PerCoordinate(Vec<(f64, f64)>),
}

impl PsoCoeffs {
    /// `(c1, c2)` applied to coordinate `k`.
    pub fn at(&self, k: usize) -> (f64, f64) {
        match self {
            PsoCoeffs::Scalar(c1, c2) => (*c1, *c2),
            PsoCoeffs::PerCoordinate(v) => v[k],
        }
    }
}

impl From<(f64, f64)> for PsoCoeffs {
    fn from((c1, c2): (f64, f64)) -> Self {
        PsoCoeffs::Scalar(c1, c2)
    }
}

/// Coefficients for a `dim`-dimensional step. Per-coordinate draws take
/// `c1, c2` pairs in coordinate order from the same stream, so the first
/// pair equals the scalar draw.
pub fn draw_coeffs(stream: &RngStream, c1_max: f64, c2_max: f64, mode: CoeffMode, dim: usize) -> PsoCoeffs {
    match mode {
        CoeffMode::Scalar => draw_pso_coeffs(stream, c1_max, c2_max).into(),
        CoeffMode::PerCoordinate => {
            let mut rng = stream.rng();
            let pairs = (0..dim)
                .map(|_| {
                    let u1 = 1.0 - rng.random::<f64>();
                    let u2 = 1.0 - rng.random::<f64>();
                    (u1 * c1_max, u2 * c2_max)
                })
                .collect();
            PsoCoeffs::PerCoordinate(pairs)
        }
    }
}
