use alloc::vec::Vec;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn standard_normal(rng: &mut impl Rng) -> f32 {
    StandardNormal.sample(rng)
}

/// He-normal initialisation for layers followed by a rectifier.
pub fn kaiming_normal(count: usize, fan_in: usize, rng: &mut impl Rng) -> Vec<f32> {
    let std = libm::sqrtf(2.0 / fan_in.max(1) as f32);
    (0..count).map(|_| std * standard_normal(rng)).collect()
}
