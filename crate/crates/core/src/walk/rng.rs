//! Per-trajectory random streams and deterministic block-parallel execution.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Paths per block; blocks are the unit of parallel work and are merged in order.
pub const BLOCK_SIZE: usize = 512;

/// `(master seed, trajectory index)`; the index selects a ChaCha stream, so
/// streams never overlap and do not depend on which worker runs them.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SeedSpec {
    pub master: u64,
    pub index: u64,
}

impl SeedSpec {
    pub fn new(master: u64, index: u64) -> Self {
        SeedSpec { master, index }
    }

    pub fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.master);
        rng.set_stream(self.index);
        rng
    }

    /// An independent family for a different purpose under the same master seed.
    pub fn derive(master: u64, purpose: &str) -> u64 {
        // FNV-1a over the purpose tag, folded into the master seed.
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for b in purpose.bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
        master ^ h.rotate_left(17)
    }
}

/// Sufficient statistics that combine associatively.
pub trait Merge: Send {
    fn merge(&mut self, other: Self);
}

/// Runs `paths` trajectories in fixed blocks on `workers` threads.
///
/// `block` receives the half-open index range it owns. Results are merged in
/// block order, so the output is identical for every worker count.
pub fn run_blocks<A, F>(paths: usize, workers: usize, block: F) -> A
where
    A: Merge,
    F: Fn(std::ops::Range<u64>) -> A + Sync,
{
    let nblocks = paths.div_ceil(BLOCK_SIZE).max(1);
    let range = |b: usize| {
        let lo = (b * BLOCK_SIZE).min(paths) as u64;
        let hi = ((b + 1) * BLOCK_SIZE).min(paths) as u64;
        lo..hi
    };
    let parts: Vec<A> = if workers <= 1 {
        (0..nblocks).map(|b| block(range(b))).collect()
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .expect("thread pool");
        pool.install(|| (0..nblocks).into_par_iter().map(|b| block(range(b))).collect())
    };
    let mut it = parts.into_iter();
    let mut acc = it.next().expect("at least one block");
    for p in it {
        acc.merge(p);
    }
    acc
}

impl<T: Send> Merge for Vec<T> {
    fn merge(&mut self, other: Self) {
        self.extend(other);
    }
}
