//! Word-sized modular arithmetic for moduli below 2^62.

#[inline]
pub fn add_mod(a: u64, b: u64, q: u64) -> u64 {
    let s = a + b;
    if s >= q {
        s - q
    } else {
        s
    }
}

#[inline]
pub fn sub_mod(a: u64, b: u64, q: u64) -> u64 {
    if a >= b {
        a - b
    } else {
        a + q - b
    }
}

#[inline]
pub fn neg_mod(a: u64, q: u64) -> u64 {
    if a == 0 {
        0
    } else {
        q - a
    }
}

#[inline]
pub fn mul_mod(a: u64, b: u64, q: u64) -> u64 {
    ((a as u128 * b as u128) % q as u128) as u64
}

pub fn pow_mod(mut base: u64, mut exp: u64, q: u64) -> u64 {
    let mut acc = 1 % q;
    base %= q;
    while exp > 0 {
        if exp & 1 == 1 {
            acc = mul_mod(acc, base, q);
        }
        base = mul_mod(base, base, q);
        exp >>= 1;
    }
    acc
}

/// Inverse modulo a prime `q` via Fermat.
pub fn inv_mod(a: u64, q: u64) -> u64 {
    debug_assert!(a % q != 0);
    pow_mod(a, q - 2, q)
}

/// Reduces a signed 128-bit integer into `[0, q)`.
#[inline]
pub fn reduce_i128(x: i128, q: u64) -> u64 {
    let r = x % q as i128;
    if r < 0 {
        (r + q as i128) as u64
    } else {
        r as u64
    }
}

/// Maps a residue in `[0, q)` to the centered representative in `(-q/2, q/2]`.
#[inline]
pub fn center(x: u64, q: u64) -> i64 {
    if x > q / 2 {
        x as i64 - q as i64
    } else {
        x as i64
    }
}

/// Deterministic Miller-Rabin for all 64-bit integers.
pub fn is_prime(n: u64) -> bool {
    if n < 2 {
        return false;
    }
    const BASES: [u64; 12] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37];
    for &p in &BASES {
        if n % p == 0 {
            return n == p;
        }
    }
    let mut d = n - 1;
    let mut r = 0;
    while d % 2 == 0 {
        d /= 2;
        r += 1;
    }
    'outer: for &a in &BASES {
        let mut x = pow_mod(a, d, n);
        if x == 1 || x == n - 1 {
            continue;
        }
        for _ in 1..r {
            x = mul_mod(x, x, n);
            if x == n - 1 {
                continue 'outer;
            }
        }
        return false;
    }
    true
}

/// Primes `q ≡ 1 (mod 2n)` found by scanning from `2^bits` in the given direction,
/// skipping anything in `exclude`.
pub fn ntt_primes(bits: u32, two_n: u64, count: usize, upward: bool, exclude: &[u64]) -> Vec<u64> {
    assert!(bits >= 8 && bits <= 62);
    let mut out = Vec::with_capacity(count);
    let base = 1u64 << bits;
    let mut k: u64 = if upward { base / two_n + 1 } else { base / two_n };
    while out.len() < count {
        let q = k * two_n + 1;
        if q < (1u64 << 62) && is_prime(q) && !exclude.contains(&q) && !out.contains(&q) {
            out.push(q);
        }
        if upward {
            k += 1;
        } else {
            assert!(k > 1, "prime search exhausted");
            k -= 1;
        }
    }
    out
}

/// Primes near `2^bits` alternating above and below, closest first. Keeps the
/// running product of rescaling primes close to a power of two.
pub fn balanced_primes(bits: u32, two_n: u64, count: usize, exclude: &[u64]) -> Vec<u64> {
    let up = ntt_primes(bits, two_n, count.div_ceil(2) + 1, true, exclude);
    let down = ntt_primes(bits, two_n, count.div_ceil(2) + 1, false, exclude);
    let mut out = Vec::with_capacity(count);
    let (mut i, mut j) = (0, 0);
    while out.len() < count {
        if out.len() % 2 == 0 {
            out.push(up[i]);
            i += 1;
        } else {
            out.push(down[j]);
            j += 1;
        }
    }
    out
}

/// A primitive `2n`-th root of unity modulo prime `q` (requires `2n | q-1`).
pub fn primitive_root_2n(q: u64, two_n: u64) -> u64 {
    assert_eq!((q - 1) % two_n, 0);
    let exp = (q - 1) / two_n;
    for g in 2..q {
        let psi = pow_mod(g, exp, q);
        if pow_mod(psi, two_n / 2, q) == q - 1 {
            return psi;
        }
    }
    unreachable!("no primitive root found")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn primality_small_table() {
        let primes: Vec<u64> = (0..100).filter(|&n| is_prime(n)).collect();
        assert_eq!(
            primes,
            vec![2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53, 59, 61, 67, 71, 73, 79, 83, 89, 97]
        );
        // Mersenne prime and a strong pseudoprime to base 2.
        assert!(is_prime((1 << 61) - 1));
        assert!(!is_prime(2047));
        assert!(!is_prime(3_215_031_751));
    }

    #[test]
    fn ntt_primes_are_congruent() {
        for q in ntt_primes(40, 64, 5, false, &[]) {
            assert!(is_prime(q));
            assert_eq!(q % 64, 1);
            assert!(q < 1 << 40);
        }
        let b = balanced_primes(32, 2048, 6, &[]);
        assert_eq!(b.len(), 6);
        let mut s = b.clone();
        s.dedup();
        assert_eq!(s.len(), 6);
    }

    #[test]
    fn root_has_exact_order() {
        let q = ntt_primes(30, 32, 1, false, &[])[0];
        let psi = primitive_root_2n(q, 32);
        assert_eq!(pow_mod(psi, 32, q), 1);
        assert_eq!(pow_mod(psi, 16, q), q - 1);
    }

    #[test]
    fn inverse_and_centering() {
        let q = 97;
        for a in 1..97 {
            assert_eq!(mul_mod(a, inv_mod(a, q), q), 1);
        }
        assert_eq!(center(96, 97), -1);
        assert_eq!(center(48, 97), 48);
        assert_eq!(reduce_i128(-5, 97), 92);
    }
}
