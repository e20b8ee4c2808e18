//! Seeded random helpers shared by the unit tests.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::qtensor::{QTensor, SymMatrix, UnitVector, Vec3};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Uniform in the ball of radius `scale` (coefficient space).
pub fn random_q(r: &mut impl Rng, scale: f64) -> QTensor {
    loop {
        let c: [f64; 5] = std::array::from_fn(|_| r.gen_range(-1.0..1.0));
        let q = QTensor(c);
        if q.norm_sq() <= 1.0 {
            return scale * q;
        }
    }
}

pub fn random_unit(r: &mut impl Rng) -> UnitVector {
    loop {
        let v = Vec3::new(r.gen_range(-1.0..1.0), r.gen_range(-1.0..1.0), r.gen_range(-1.0..1.0));
        let n = v.norm();
        if n > 1e-3 && n <= 1.0 {
            return UnitVector::normalize(v).unwrap();
        }
    }
}

pub fn random_sym(r: &mut impl Rng, scale: f64) -> SymMatrix {
    SymMatrix(std::array::from_fn(|_| r.gen_range(-scale..scale)))
}
