//! Fully-connected tanh networks used as learned GP mean functions and
//! feature maps.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::GpError;

/// Layer sizes of a network. Hidden layers use `tanh`, the output is linear.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub output_dim: usize,
    pub activation: String,
}

impl Architecture {
    /// Three hidden layers of 32 tanh units.
    pub fn standard(input_dim: usize, output_dim: usize) -> Self {
        Self {
            input_dim,
            hidden: vec![32, 32, 32],
            output_dim,
            activation: "tanh".to_string(),
        }
    }

    fn widths(&self) -> Vec<usize> {
        let mut w = Vec::with_capacity(self.hidden.len() + 2);
        w.push(self.input_dim);
        w.extend_from_slice(&self.hidden);
        w.push(self.output_dim);
        w
    }
}

/// One affine layer `y = W x + b`, with `W` stored as `out x in`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub weights: DMatrix<f64>,
    pub bias: DVector<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub arch: Architecture,
    pub layers: Vec<Dense>,
}

impl Mlp {
    /// All weights and biases zero.
    pub fn zeros(arch: Architecture) -> Self {
        let widths = arch.widths();
        let layers = widths
            .windows(2)
            .map(|w| Dense {
                weights: DMatrix::zeros(w[1], w[0]),
                bias: DVector::zeros(w[1]),
            })
            .collect();
        Self { arch, layers }
    }

    /// Weights and biases drawn from `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`.
    pub fn init_uniform<R: Rng + ?Sized>(arch: Architecture, rng: &mut R) -> Self {
        let mut net = Self::zeros(arch);
        for layer in &mut net.layers {
            let bound = 1.0 / (layer.weights.ncols() as f64).sqrt();
            for w in layer.weights.iter_mut() {
                *w = rng.random_range(-bound..bound);
            }
            for b in layer.bias.iter_mut() {
                *b = rng.random_range(-bound..bound);
            }
        }
        net
    }

    pub fn input_dim(&self) -> usize {
        self.arch.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.arch.output_dim
    }

    pub fn num_params(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.bias.len())
            .sum()
    }

    pub fn forward(&self, x: &[f64]) -> Result<DVector<f64>, GpError> {
        if x.len() != self.input_dim() {
            return Err(GpError::DimensionMismatch {
                expected: self.input_dim(),
                got: x.len(),
            });
        }
        let mut h = DVector::from_column_slice(x);
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            h = &layer.weights * h + &layer.bias;
            if i < last {
                h.apply(|v| *v = v.tanh());
            }
        }
        Ok(h)
    }

    /// Output together with its Jacobian (`output_dim x input_dim`).
    pub fn forward_with_jacobian(
        &self,
        x: &[f64],
    ) -> Result<(DVector<f64>, DMatrix<f64>), GpError> {
        if x.len() != self.input_dim() {
            return Err(GpError::DimensionMismatch {
                expected: self.input_dim(),
                got: x.len(),
            });
        }
        let mut h = DVector::from_column_slice(x);
        let mut jac = DMatrix::<f64>::identity(x.len(), x.len());
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            h = &layer.weights * h + &layer.bias;
            jac = &layer.weights * jac;
            if i < last {
                h.apply(|v| *v = v.tanh());
                for r in 0..h.len() {
                    let d = 1.0 - h[r] * h[r];
                    jac.row_mut(r).scale_mut(d);
                }
            }
        }
        Ok((h, jac))
    }

    /// Flattened parameters, layer by layer: weights (column-major) then bias.
    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for l in &self.layers {
            out.extend_from_slice(l.weights.as_slice());
            out.extend_from_slice(l.bias.as_slice());
        }
        out
    }

    pub fn set_params(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.num_params(), "parameter count mismatch");
        let mut k = 0;
        for l in &mut self.layers {
            let nw = l.weights.len();
            l.weights.as_mut_slice().copy_from_slice(&flat[k..k + nw]);
            k += nw;
            let nb = l.bias.len();
            l.bias.as_mut_slice().copy_from_slice(&flat[k..k + nb]);
            k += nb;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_network_outputs_zero() {
        let net = Mlp::zeros(Architecture::standard(2, 3));
        let y = net.forward(&[0.3, -1.2]).unwrap();
        assert_eq!(y.as_slice(), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn single_layer_hand_value() {
        // 1 hidden unit: y = 2 * tanh(0.5 x + 0.1) - 0.3
        let arch = Architecture {
            input_dim: 1,
            hidden: vec![1],
            output_dim: 1,
            activation: "tanh".into(),
        };
        let mut net = Mlp::zeros(arch);
        net.set_params(&[0.5, 0.1, 2.0, -0.3]);
        let y = net.forward(&[0.8]).unwrap()[0];
        let expected = 2.0 * (0.5f64 * 0.8 + 0.1).tanh() - 0.3;
        assert!((y - expected).abs() < 1e-15);
    }

    #[test]
    fn large_inputs_stay_finite() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let net = Mlp::init_uniform(Architecture::standard(2, 2), &mut rng);
        let y = net.forward(&[1e3, -1e3]).unwrap();
        assert!(y.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let net = Mlp::zeros(Architecture::standard(2, 1));
        assert!(matches!(
            net.forward(&[1.0]),
            Err(GpError::DimensionMismatch { expected: 2, got: 1 })
        ));
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let net = Mlp::init_uniform(Architecture::standard(3, 2), &mut rng);
        let x = [0.2, -0.7, 1.1];
        let (_, jac) = net.forward_with_jacobian(&x).unwrap();
        let h = 1e-6;
        for j in 0..3 {
            let mut xp = x;
            let mut xm = x;
            xp[j] += h;
            xm[j] -= h;
            let d = (net.forward(&xp).unwrap() - net.forward(&xm).unwrap()) / (2.0 * h);
            for i in 0..2 {
                assert!((d[i] - jac[(i, j)]).abs() < 1e-7);
            }
        }
    }

    #[test]
    fn params_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let net = Mlp::init_uniform(Architecture::standard(2, 1), &mut rng);
        let mut other = Mlp::zeros(Architecture::standard(2, 1));
        other.set_params(&net.params());
        assert_eq!(net, other);
    }
}
