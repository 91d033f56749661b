//! Seeded random streams.
//!
//! Every consumer of randomness draws from a named stream derived from a run
//! seed, so two samplers that consume the same roles in the same order see
//! identical numbers. Within a sampling run the draw order is:
//!
//! 1. [`Stream::Init`]: one standard-normal tensor for the starting state.
//! 2. [`Stream::Step`]: exactly one standard-normal tensor per sampling step,
//!    in step order `N, N-1, ..., 1`, whether or not the step uses it.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Init = 1,
    Step = 2,
    Training = 3,
    Measurement = 4,
    Dataset = 5,
    Operator = 6,
}

pub fn stream(seed: u64, role: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(role as u64);
    rng
}

pub fn normal_tensor<R: rand::Rng + ?Sized>(shape: &[usize], rng: &mut R) -> Tensor {
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| StandardNormal.sample(rng)).collect();
    Tensor::new(shape.to_vec(), data).expect("positive shape")
}
