//! Noise and key distributions.

use rand::Rng;

/// Standard deviation of the error distribution.
pub const SIGMA: f64 = 3.2;
/// Truncation bound `floor(6 * sigma)`.
pub const NOISE_BOUND: i64 = 19;

/// Rounded Gaussian with rejection outside `[-NOISE_BOUND, NOISE_BOUND]`.
pub fn gaussian<R: Rng + ?Sized>(rng: &mut R) -> i64 {
    loop {
        // Box-Muller on two uniforms.
        let u1: f64 = rng.gen::<f64>().max(f64::MIN_POSITIVE);
        let u2: f64 = rng.gen();
        let z = (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos();
        let v = (z * SIGMA).round() as i64;
        if v.abs() <= NOISE_BOUND {
            return v;
        }
    }
}

pub fn gaussian_vec<R: Rng + ?Sized>(rng: &mut R, n: usize) -> Vec<i64> {
    (0..n).map(|_| gaussian(rng)).collect()
}

/// Uniform ternary coefficients in {-1, 0, 1}.
pub fn ternary_vec<R: Rng + ?Sized>(rng: &mut R, n: usize) -> Vec<i64> {
    (0..n).map(|_| rng.gen_range(-1i64..=1)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn gaussian_moments_and_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let xs = gaussian_vec(&mut rng, 200_000);
        let mean = xs.iter().sum::<i64>() as f64 / xs.len() as f64;
        let var = xs.iter().map(|&x| (x as f64 - mean).powi(2)).sum::<f64>() / xs.len() as f64;
        assert!(mean.abs() < 0.05);
        // Rounding adds 1/12 to the variance of the continuous Gaussian.
        assert!((var - (SIGMA * SIGMA + 1.0 / 12.0)).abs() < 0.3, "var {var}");
        assert!(xs.iter().all(|x| x.abs() <= NOISE_BOUND));
    }
}
