//! Deterministic random streams.
//!
//! Every Monte-Carlo run owns independent ChaCha8 streams addressed by
//! `(master seed, run index, purpose)`, so results do not depend on thread
//! scheduling or on how many variates other runs consumed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// What a stream is used for within one run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Purpose {
    /// Draw of the true parameter from its prior.
    Truth = 0,
    /// Process noise of the simulated state.
    StateNoise = 1,
    /// Photocurrent noise.
    MeasurementNoise = 2,
    /// Anything else a caller needs (initial thermal spin, etc).
    Aux = 3,
}

const PURPOSES_PER_RUN: u64 = 8;

/// Stream for `purpose` of run `run` under `master`.
pub fn stream(master: u64, run: u64, purpose: Purpose) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(run.wrapping_mul(PURPOSES_PER_RUN) + purpose as u64);
    rng
}

/// The set of streams used by one simulated shot.
#[derive(Debug, Clone)]
pub struct RunStreams {
    pub truth: ChaCha8Rng,
    pub state: ChaCha8Rng,
    pub meas: ChaCha8Rng,
    pub aux: ChaCha8Rng,
}

impl RunStreams {
    pub fn new(master: u64, run: u64) -> Self {
        Self {
            truth: stream(master, run, Purpose::Truth),
            state: stream(master, run, Purpose::StateNoise),
            meas: stream(master, run, Purpose::MeasurementNoise),
            aux: stream(master, run, Purpose::Aux),
        }
    }
}

#[inline]
pub fn normal<R: rand::Rng + ?Sized>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}
