//! Exact negacyclic convolution of signed big-integer polynomials.
//!
//! Residues modulo enough 61-bit NTT primes to cover the output magnitude are
//! convolved independently and recombined by CRT into centered integers.

use num_bigint::{BigInt, BigUint, Sign};
use num_traits::{One, Zero};

use super::modarith::{inv_mod, mul_mod, ntt_primes};
use super::ntt::NttTable;

pub struct CrtConvolver {
    n: usize,
    tables: Vec<NttTable>,
    modulus: BigUint,
    // (Q/q_i) * [(Q/q_i)^{-1}]_{q_i}
    basis: Vec<BigUint>,
}

impl CrtConvolver {
    /// Builds a convolver whose modulus exceeds `2^(out_bits + 1)`.
    pub fn new(n: usize, out_bits: u64) -> Self {
        let count = ((out_bits + 2) / 60 + 1) as usize;
        let primes = ntt_primes(61, 2 * n as u64, count, false, &[]);
        let tables: Vec<NttTable> = primes.iter().map(|&q| NttTable::new(q, n)).collect();
        let modulus: BigUint = primes.iter().fold(BigUint::one(), |acc, &q| acc * q);
        let basis = primes
            .iter()
            .map(|&q| {
                let qi = &modulus / q;
                let r = (&qi % q).to_u64_digits().first().copied().unwrap_or(0);
                qi * inv_mod(r, q)
            })
            .collect();
        CrtConvolver { n, tables, modulus, basis }
    }

    fn residues(&self, a: &[BigInt], q: u64) -> Vec<u64> {
        a.iter().map(|x| big_mod_u64(x, q)).collect()
    }

    /// `a * b mod (X^n + 1)` over the integers; caller guarantees the output
    /// magnitude fits the bit budget given at construction.
    pub fn convolve(&self, a: &[BigInt], b: &[BigInt]) -> Vec<BigInt> {
        assert_eq!(a.len(), self.n);
        assert_eq!(b.len(), self.n);
        let mut per_prime = Vec::with_capacity(self.tables.len());
        for t in &self.tables {
            let mut ra = self.residues(a, t.q);
            let mut rb = self.residues(b, t.q);
            t.forward(&mut ra);
            t.forward(&mut rb);
            for (x, y) in ra.iter_mut().zip(&rb) {
                *x = mul_mod(*x, *y, t.q);
            }
            t.inverse(&mut ra);
            per_prime.push(ra);
        }
        let half = &self.modulus >> 1;
        (0..self.n)
            .map(|k| {
                let mut acc = BigUint::zero();
                for (i, res) in per_prime.iter().enumerate() {
                    acc += &self.basis[i] * res[k];
                }
                acc %= &self.modulus;
                if acc > half {
                    BigInt::from_biguint(Sign::Minus, &self.modulus - acc)
                } else {
                    BigInt::from_biguint(Sign::Plus, acc)
                }
            })
            .collect()
    }
}

/// `x mod q` in `[0, q)` for a signed big integer.
pub fn big_mod_u64(x: &BigInt, q: u64) -> u64 {
    let m = x.magnitude() % q;
    let r = m.to_u64_digits().first().copied().unwrap_or(0);
    if x.sign() == Sign::Minus && r != 0 {
        q - r
    } else {
        r
    }
}

/// Rounded division by `2^bits` (ties away from zero).
pub fn round_shift(x: &BigInt, bits: u32) -> BigInt {
    if bits == 0 {
        return x.clone();
    }
    let half = BigInt::one() << (bits - 1);
    if x.sign() == Sign::Minus {
        -((-x + &half) >> bits)
    } else {
        (x + &half) >> bits
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn schoolbook(a: &[BigInt], b: &[BigInt]) -> Vec<BigInt> {
        let n = a.len();
        let mut out = vec![BigInt::zero(); n];
        for i in 0..n {
            for j in 0..n {
                let p = &a[i] * &b[j];
                if i + j < n {
                    out[i + j] += p;
                } else {
                    out[i + j - n] -= p;
                }
            }
        }
        out
    }

    fn random_big(rng: &mut ChaCha8Rng, bits: u64) -> BigInt {
        let words = (bits / 32 + 1) as usize;
        let digits: Vec<u32> = (0..words).map(|_| rng.gen()).collect();
        let mag = BigUint::new(digits) >> ((words as u64 * 32) - bits);
        if rng.gen() {
            BigInt::from_biguint(Sign::Minus, mag)
        } else {
            BigInt::from_biguint(Sign::Plus, mag)
        }
    }

    #[test]
    fn matches_schoolbook() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 16;
        let conv = CrtConvolver::new(n, 200 + 60 + 5);
        for _ in 0..5 {
            let a: Vec<BigInt> = (0..n).map(|_| random_big(&mut rng, 200)).collect();
            let b: Vec<BigInt> = (0..n).map(|_| random_big(&mut rng, 60)).collect();
            assert_eq!(conv.convolve(&a, &b), schoolbook(&a, &b));
        }
    }

    #[test]
    fn shifting_rounds_to_nearest() {
        assert_eq!(round_shift(&BigInt::from(5), 1), BigInt::from(3));
        assert_eq!(round_shift(&BigInt::from(-5), 1), BigInt::from(-3));
        assert_eq!(round_shift(&BigInt::from(9), 2), BigInt::from(2));
        assert_eq!(round_shift(&BigInt::from(-9), 2), BigInt::from(-2));
        assert_eq!(big_mod_u64(&BigInt::from(-1), 7), 6);
    }
}
