//! Seeded randomness helpers. All sampling in the crate goes through a
//! ChaCha8 stream so identical seeds give bitwise-identical runs.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::tensor::Tensor;
use crate::video::Video;

pub type SeededRng = ChaCha8Rng;

pub fn seeded(seed: u64) -> SeededRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Derives an independent stream for a named sub-purpose.
pub fn substream(seed: u64, stream: u64) -> SeededRng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}

pub fn normal_tensor(rng: &mut impl Rng, shape: &[usize]) -> Tensor {
    let n: usize = shape.iter().product();
    let data: Vec<f32> = (0..n).map(|_| rng.sample::<f32, _>(StandardNormal)).collect();
    Tensor::new(shape.to_vec(), data).expect("shape/data agree by construction")
}

pub fn normal_video(rng: &mut impl Rng, frames: usize, channels: usize, height: usize, width: usize) -> Video {
    let t = normal_tensor(rng, &[frames, channels, height, width]);
    Video::from_tensor(t).expect("rank 4 by construction")
}
