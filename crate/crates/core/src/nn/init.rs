//! Seeded weight initialization: `r ~ U[-1, 1]` per entry, scaled by
//! `1/sqrt(h_{j-1})` (Xavier) for saturating activations and by
//! `sqrt(6/h_{j-1})` (He, variance `2/h_{j-1}`) for the ReLU surrogate.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::packing::Matrix;

use super::spec::Network;

/// Scale applied to `r` for layer `j` (1-based).
pub fn init_scale(net: &Network, j: usize) -> f64 {
    let fan_in = net.weight_shape(j).0 as f64;
    if net.acts[j - 1].uses_he() {
        (6.0 / fan_in).sqrt()
    } else {
        1.0 / fan_in.sqrt()
    }
}

/// Standard deviation the scaling is designed for.
pub fn theoretical_std(net: &Network, j: usize) -> f64 {
    init_scale(net, j) / 3f64.sqrt()
}

/// Logical weight matrices, row-major draws in layer order. Identical seeds
/// give bit-identical weights.
pub fn init_weights(net: &Network, seed: u64) -> Vec<Matrix> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    (1..=net.depth())
        .map(|j| {
            let (rows, cols) = net.weight_shape(j);
            let s = init_scale(net, j);
            let mut m = Matrix::zeros(rows, cols);
            for v in m.data.iter_mut() {
                *v = rng.gen_range(-1.0..=1.0) * s;
            }
            m
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::spec::NetworkSpec;

    fn std_of(v: &[f64]) -> f64 {
        let mean = v.iter().sum::<f64>() / v.len() as f64;
        (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / v.len() as f64).sqrt()
    }

    #[test]
    fn deterministic() {
        let net = Network::compile(&NetworkSpec::mlp(9, &[64, 2], "sigmoid", 3, 1.0, 1, 1)).unwrap();
        assert_eq!(init_weights(&net, 7), init_weights(&net, 7));
        assert_ne!(init_weights(&net, 7), init_weights(&net, 8));
    }

    #[test]
    fn std_within_twenty_percent_over_seeds() {
        for act in ["sigmoid", "smooth_relu"] {
            let net = Network::compile(&NetworkSpec::mlp(64, &[64, 2], act, 3, 1.0, 1, 1)).unwrap();
            let want = theoretical_std(&net, 1);
            for seed in 0..30 {
                let got = std_of(&init_weights(&net, seed)[0].data);
                assert!((got / want - 1.0).abs() < 0.2, "{act} seed {seed}: {got} vs {want}");
            }
        }
    }

    #[test]
    fn draws_stay_in_range() {
        let net = Network::compile(&NetworkSpec::mlp(16, &[16], "tanh", 3, 1.0, 1, 1)).unwrap();
        let s = init_scale(&net, 1);
        assert!(init_weights(&net, 3)[0].data.iter().all(|v| v.abs() <= s));
        assert_eq!(s, 0.25);
    }
}
