//! Eggholder with randomized shape and a ring-shaped constraint.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

pub const BOUNDS: [(f64, f64); 2] = [(0.0, 400.0), (0.0, 400.0)];
pub const SAFE_SEED: [f64; 2] = [380.0, 50.0];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EggholderParams {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub omega1: f64,
    pub omega2: f64,
}

impl EggholderParams {
    pub fn sample<R: Rng + ?Sized>(rng: &mut R) -> Self {
        let a = rng.random_range(0.6..1.4);
        let b = rng.random_range(0.6..1.4);
        let c = Normal::new(47.0, 5.0).expect("positive std").sample(rng);
        Self {
            a,
            b,
            c,
            omega1: rng.random_range(0.8..1.2),
            omega2: rng.random_range(0.8..1.2),
        }
    }

    pub fn f(&self, x: &[f64]) -> f64 {
        let (x1, x2) = (x[0], x[1]);
        -(x2 + self.c) * (self.a * x2 + x1 / 2.0 + 47.0).abs().sqrt().sin()
            - self.b * x1 * (x1 - x2 - 47.0).abs().sqrt().sin()
    }

    /// Used as is: negative (safe) on the outer ring that holds the seed
    /// point, positive near the origin.
    pub fn q(&self, x: &[f64]) -> f64 {
        let (x1, x2) = (x[0], x[1]);
        300.0 - (x1 * x1 + 2.0 * x2 * x2).sqrt() + 50.0 * ((self.omega1 * x1 + self.omega2 * x2) / 20.0).sin()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn origin_constraint() {
        let p = EggholderParams::sample(&mut ChaCha8Rng::seed_from_u64(1));
        assert_eq!(p.q(&[0.0, 0.0]), 300.0);
    }

    #[test]
    fn seed_safe_and_safe_region_nontrivial() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..50 {
            let p = EggholderParams::sample(&mut rng);
            assert!(p.q(&SAFE_SEED) < 0.0);
            let n = 60;
            let mut safe = 0;
            for i in 0..n {
                for j in 0..n {
                    let x = [400.0 * (i as f64 + 0.5) / n as f64, 400.0 * (j as f64 + 0.5) / n as f64];
                    assert!(p.f(&x).is_finite());
                    safe += usize::from(p.q(&x) <= 0.0);
                }
            }
            assert!(safe as f64 >= 0.2 * (n * n) as f64);
        }
    }
}
