//! Weight initialization.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::tensor::{Shape, Tensor};

/// He-uniform initialization: U(-b, b) with b = sqrt(6 / fan_in).
pub fn he_uniform(shape: Shape, fan_in: usize, rng: &mut ChaCha8Rng) -> Tensor {
    let bound = (6.0 / fan_in as f32).sqrt();
    let n: usize = shape.iter().product();
    let data: Vec<f32> = (0..n).map(|_| rng.gen_range(-bound..bound)).collect();
    Tensor::new(shape, data).expect("shape/data agree by construction")
}

/// RNG for weight initialization, keyed on a user seed.
pub fn init_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn he_uniform_stays_in_bound_and_is_seeded() {
        let mut rng = init_rng(3);
        let t = he_uniform([4, 3, 3, 3], 27, &mut rng);
        let bound = (6.0f32 / 27.0).sqrt();
        assert!(t.data().iter().all(|v| v.abs() <= bound));
        let mut rng2 = init_rng(3);
        let t2 = he_uniform([4, 3, 3, 3], 27, &mut rng2);
        assert!(t.bit_eq(&t2));
    }
}
