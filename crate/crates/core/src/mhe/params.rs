//! Ring parameters and the security table.

use serde::{Deserialize, Serialize};

use super::error::{MheError, Result};
use crate::math::modarith::{balanced_primes, is_prime, ntt_primes};

/// Maximum `log2 Q` per ring dimension for classical 128/192/256-bit security
/// with ternary secrets (homomorphic encryption standard tables).
pub const SECURITY_TABLE: [(usize, [u32; 3]); 6] = [
    (1024, [27, 19, 14]),
    (2048, [54, 37, 29]),
    (4096, [109, 75, 58]),
    (8192, [218, 152, 118]),
    (16384, [438, 305, 237]),
    (32768, [881, 611, 476]),
];

fn lambda_column(lambda: u32) -> Option<usize> {
    match lambda {
        128 => Some(0),
        192 => Some(1),
        256 => Some(2),
        _ => None,
    }
}

/// Largest `log2 Q` admissible for `ring_dim` at security `lambda`.
pub fn max_log_q(ring_dim: usize, lambda: u32) -> Option<u32> {
    let col = lambda_column(lambda)?;
    SECURITY_TABLE.iter().find(|(n, _)| *n == ring_dim).map(|(_, row)| row[col])
}

/// Smallest tabulated ring dimension admitting a modulus of `log_q` bits.
pub fn min_ring_dim(log_q: f64, lambda: u32) -> Option<usize> {
    let col = lambda_column(lambda)?;
    SECURITY_TABLE.iter().find(|(_, row)| row[col] as f64 >= log_q).map(|(n, _)| *n)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RingParams {
    pub ring_dim: usize,
    /// `q_0 .. q_L`; `q_0` is the base prime, the rest are rescaling primes.
    pub modulus_chain: Vec<u64>,
    /// Auxiliary prime used only inside key switching.
    pub special_prime: u64,
    pub initial_level: usize,
    pub initial_scale: f64,
    /// Security level in bits; also the statistical masking parameter of bootstrapping.
    pub security_level: u32,
    pub toy_mode: bool,
}

/// Recipe for a modulus chain.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChainSpec {
    pub log_ring_dim: u32,
    pub levels: usize,
    pub base_bits: u32,
    pub scale_bits: u32,
    pub special_bits: u32,
    pub security_level: u32,
    pub toy_mode: bool,
}

impl ChainSpec {
    /// Small insecure ring used by tests and the simulator.
    pub fn toy(log_ring_dim: u32, levels: usize) -> Self {
        ChainSpec {
            log_ring_dim,
            levels,
            base_bits: 55,
            scale_bits: 32,
            special_bits: 61,
            security_level: 32,
            toy_mode: true,
        }
    }

    pub fn build(&self) -> Result<RingParams> {
        let n = 1usize << self.log_ring_dim;
        let two_n = 2 * n as u64;
        let special = ntt_primes(self.special_bits, two_n, 1, false, &[])[0];
        let base = ntt_primes(self.base_bits, two_n, 1, false, &[special])[0];
        let mut chain = vec![base];
        chain.extend(balanced_primes(self.scale_bits, two_n, self.levels, &[special, base]));
        let p = RingParams {
            ring_dim: n,
            modulus_chain: chain,
            special_prime: special,
            initial_level: self.levels,
            initial_scale: 2f64.powi(self.scale_bits as i32),
            security_level: self.security_level,
            toy_mode: self.toy_mode,
        };
        p.validate()?;
        Ok(p)
    }
}

impl RingParams {
    pub fn slots(&self) -> usize {
        self.ring_dim / 2
    }

    pub fn max_level(&self) -> usize {
        self.initial_level
    }

    /// `log2 Q_level`.
    pub fn log_q(&self, level: usize) -> f64 {
        self.modulus_chain[..=level].iter().map(|&q| (q as f64).log2()).sum()
    }

    pub fn scale_bits(&self) -> u32 {
        self.initial_scale.log2().round() as u32
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.ring_dim;
        if !n.is_power_of_two() || n < 4 {
            return Err(MheError::InvalidParams(format!("ring dimension {n} is not a power of two >= 4")));
        }
        if self.modulus_chain.len() != self.initial_level + 1 {
            return Err(MheError::InvalidParams("chain length must be initial_level + 1".into()));
        }
        let mut all = self.modulus_chain.clone();
        all.push(self.special_prime);
        for (i, &q) in all.iter().enumerate() {
            if !is_prime(q) || (q - 1) % (2 * n as u64) != 0 {
                return Err(MheError::InvalidParams(format!("{q} is not an NTT prime for ring {n}")));
            }
            if q >= 1 << 62 {
                return Err(MheError::InvalidParams(format!("{q} exceeds 62 bits")));
            }
            if all[..i].contains(&q) {
                return Err(MheError::InvalidParams(format!("duplicate prime {q}")));
            }
        }
        if self.special_prime < *self.modulus_chain.iter().max().unwrap() {
            return Err(MheError::InvalidParams("special prime must dominate every chain prime".into()));
        }
        if !self.toy_mode {
            let log_qp = self.log_q(self.initial_level) + (self.special_prime as f64).log2();
            match max_log_q(n, self.security_level) {
                Some(bound) if log_qp <= bound as f64 => {}
                Some(bound) => {
                    return Err(MheError::InvalidParams(format!(
                        "log2(QP) = {log_qp:.1} exceeds {bound} for ring {n} at lambda {}",
                        self.security_level
                    )))
                }
                None => {
                    return Err(MheError::InvalidParams(format!(
                        "no security entry for ring {n} at lambda {}",
                        self.security_level
                    )))
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toy_chain_is_valid() {
        let p = ChainSpec::toy(4, 3).build().unwrap();
        assert_eq!(p.ring_dim, 16);
        assert_eq!(p.slots(), 8);
        assert_eq!(p.modulus_chain.len(), 4);
        assert!(p.special_prime > p.modulus_chain[0]);
    }

    #[test]
    fn slot_capacity_of_8192_ring() {
        let p = RingParams { ring_dim: 8192, ..ChainSpec::toy(4, 1).build().unwrap() };
        assert_eq!(p.slots(), 4096);
    }

    #[test]
    fn secure_mode_enforces_table() {
        let mut spec = ChainSpec::toy(11, 3);
        spec.toy_mode = false;
        spec.security_level = 128;
        assert!(spec.build().is_err());
        let mut ok = ChainSpec::toy(13, 5);
        ok.toy_mode = false;
        ok.security_level = 128;
        ok.base_bits = 40;
        ok.special_bits = 41;
        ok.scale_bits = 26;
        assert!(ok.build().is_ok());
    }

    #[test]
    fn table_lookup() {
        assert_eq!(max_log_q(8192, 128), Some(218));
        assert_eq!(min_ring_dim(200.0, 128), Some(8192));
        assert_eq!(min_ring_dim(219.0, 128), Some(16384));
        assert_eq!(min_ring_dim(10.0, 100), None);
    }
}
