//! Counter-based random streams: one ChaCha8 stream per (seed, index).

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Independent stream `stream` of the generator seeded with `seed`.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Stream index for frame `frame` of grid point `point`.
pub fn frame_stream(point: usize, frame: u64) -> u64 {
    ((point as u64) << 40) | (frame & ((1 << 40) - 1))
}
