//! Six-hump camelback overlaid with random sinusoids.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

pub const BOUNDS: [(f64, f64); 2] = [(-2.0, 2.0), (-1.0, 1.0)];
pub const SAFE_SEED: [f64; 2] = [-1.5, -0.5];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CamelbackParams {
    pub a: f64,
    pub omega_f: f64,
    pub rho: f64,
    pub omega_q: f64,
    pub b: f64,
}

/// Negated camelback, clipped below at -2.5.
pub fn g(x: &[f64]) -> f64 {
    let (x1, x2) = (x[0], x[1]);
    let v = -(4.0 - 2.1 * x1 * x1 + x1.powi(4) / 3.0) * x1 * x1 - x1 * x2 - (4.0 * x2 * x2 - 4.0) * x2 * x2;
    v.max(-2.5)
}

impl CamelbackParams {
    pub fn sample<R: Rng + ?Sized>(rng: &mut R) -> Self {
        let rho = Normal::new(0.0, 1.0).expect("unit normal").sample(rng);
        Self {
            a: rng.random_range(0.3..0.5),
            omega_f: rng.random_range(0.2..2.0),
            rho,
            omega_q: rng.random_range(0.45..0.5),
            b: rng.random_range(0.3..0.5),
        }
    }

    pub fn f(&self, x: &[f64]) -> f64 {
        let w = self.omega_f;
        g(x) + self.a * (w * (x[0] - self.rho)).sin() * (w * (x[1] - self.rho)).sin()
    }

    pub fn q(&self, x: &[f64]) -> f64 {
        let w = self.omega_q;
        3.0 * (0.4 * PI * w - 2.0).sin() * (2.0 * PI * w).sin() - self.b * (x[0] * x[0] + x[1] * x[1])
            + 1.2 * g(x)
            - 0.7
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn camelback_values() {
        assert_eq!(g(&[0.0, 0.0]), 0.0);
        // hand evaluation at the safe seed
        let want = -(4.0 - 2.1 * 2.25 + 5.0625 / 3.0) * 2.25 - 0.75 - (1.0 - 4.0) * 0.25;
        assert!((g(&SAFE_SEED) - want).abs() < 1e-15);
        assert_eq!(g(&[2.0, 1.0]).max(-2.5), g(&[2.0, 1.0]));
        assert!(g(&[2.0, -1.0]) >= -2.5);
    }

    #[test]
    fn seed_point_is_safe() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..500 {
            assert!(CamelbackParams::sample(&mut rng).q(&SAFE_SEED) < 0.0);
        }
    }
}
