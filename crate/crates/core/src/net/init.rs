//! Initialization schemes. Both schemes set every bias to zero.

use super::{Layer, LayerSpec, Network};
use crate::linalg::{Matrix, Vector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

/// Weight initialization scheme.
///
/// - `Standard`: normal samples truncated to `[-2, 2]` (by rejection) and
///   scaled by `1/√fan_in`.
/// - `Glorot`: uniform samples on `[-1, 1]` scaled by `√(6/(fan_in+fan_out))`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InitScheme {
    Standard,
    Glorot,
}

impl InitScheme {
    pub fn name(self) -> &'static str {
        match self {
            InitScheme::Standard => "standard",
            InitScheme::Glorot => "glorot",
        }
    }
}

impl std::str::FromStr for InitScheme {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "standard" => Ok(InitScheme::Standard),
            "glorot" => Ok(InitScheme::Glorot),
            other => Err(format!("unknown init scheme '{other}'")),
        }
    }
}

/// Deterministically initializes a network from layer specs. The generator is
/// a seedable 64-bit-state stream cipher; sweep trials derive their streams
/// as `base_seed + trial_index`.
pub fn init_network(specs: &[LayerSpec], scheme: InitScheme, seed: u64) -> Network {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let layers = specs
        .iter()
        .map(|spec| {
            let scale = match scheme {
                InitScheme::Standard => 1.0 / (spec.in_dim as f64).sqrt(),
                InitScheme::Glorot => (6.0 / (spec.in_dim + spec.out_dim) as f64).sqrt(),
            };
            let weights = Matrix::from_fn(spec.out_dim, spec.in_dim, |_, _| match scheme {
                InitScheme::Standard => truncated_normal(&mut rng) * scale,
                InitScheme::Glorot => rng.random_range(-1.0..1.0) * scale,
            });
            Layer {
                weights,
                bias: Vector::zeros(spec.out_dim),
                activation: spec.activation,
            }
        })
        .collect();
    Network::from_layers(layers).expect("specs produce a valid network")
}

/// Standard normal sample rejected until it lands in `[-2, 2]`.
fn truncated_normal(rng: &mut ChaCha8Rng) -> f64 {
    loop {
        let z: f64 = StandardNormal.sample(rng);
        if z.abs() <= 2.0 {
            return z;
        }
    }
}

/// Layer specs for an MLP `dims[0] → dims[1] → … → dims[n]` with the given
/// hidden activation and an identity output layer (a logit network).
pub fn mlp_specs(dims: &[usize], hidden: super::Activation) -> Vec<LayerSpec> {
    assert!(dims.len() >= 2, "mlp_specs: need at least input and output dims");
    dims.windows(2)
        .enumerate()
        .map(|(i, w)| LayerSpec {
            in_dim: w[0],
            out_dim: w[1],
            activation: if i + 2 == dims.len() { super::Activation::Identity } else { hidden },
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::Activation;

    #[test]
    fn biases_are_zero_for_both_schemes() {
        let specs = mlp_specs(&[4, 7, 3], Activation::Relu);
        for scheme in [InitScheme::Standard, InitScheme::Glorot] {
            let net = init_network(&specs, scheme, 42);
            for layer in net.layers() {
                assert!(layer.bias.iter().all(|&b| b == 0.0));
            }
        }
    }

    #[test]
    fn standard_weights_bounded_by_two_over_sqrt_fan_in() {
        let specs = vec![LayerSpec { in_dim: 100, out_dim: 50, activation: Activation::Relu }];
        let net = init_network(&specs, InitScheme::Standard, 7);
        let bound = 2.0 / (100.0_f64).sqrt();
        for &w in net.layer(0).weights.as_slice() {
            assert!(w.abs() <= bound, "weight {w} exceeds {bound}");
        }
    }

    #[test]
    fn glorot_weights_bounded_by_scale() {
        let specs = vec![LayerSpec { in_dim: 3, out_dim: 3, activation: Activation::Relu }];
        let net = init_network(&specs, InitScheme::Glorot, 7);
        for &w in net.layer(0).weights.as_slice() {
            assert!(w.abs() <= 1.0, "weight {w} exceeds glorot bound 1");
        }
    }

    #[test]
    fn same_seed_same_network() {
        let specs = mlp_specs(&[5, 9, 2], Activation::Tanh);
        let a = init_network(&specs, InitScheme::Standard, 123);
        let b = init_network(&specs, InitScheme::Standard, 123);
        assert_eq!(a, b);
        let c = init_network(&specs, InitScheme::Standard, 124);
        assert_ne!(a, c);
    }

    #[test]
    fn mlp_specs_ends_with_identity() {
        let specs = mlp_specs(&[1, 300, 300, 300, 1], Activation::Relu);
        assert_eq!(specs.len(), 4);
        assert_eq!(specs[0].activation, Activation::Relu);
        assert_eq!(specs[3].activation, Activation::Identity);
        assert_eq!(specs[3].out_dim, 1);
    }
}
