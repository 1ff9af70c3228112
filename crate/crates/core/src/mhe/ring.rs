//! RNS polynomials over the modulus chain, optionally extended by the special prime.

use num_bigint::{BigInt, BigUint, Sign};
use num_traits::{One, Zero};
use rand::Rng;
use std::sync::Arc;

use super::params::RingParams;
use crate::math::bigconv::big_mod_u64;
use crate::math::modarith::{add_mod, center, inv_mod, mul_mod, neg_mod, reduce_i128, sub_mod};
use crate::math::ntt::NttTable;

/// Precomputed tables for a parameter set.
#[derive(Debug)]
pub struct RnsContext {
    pub params: RingParams,
    pub tables: Vec<NttTable>,
    pub special: NttTable,
    /// `[Q_level]` as big integers, index = level.
    q_products: Vec<BigUint>,
}

pub type Ctx = Arc<RnsContext>;

impl RnsContext {
    pub fn new(params: RingParams) -> Ctx {
        let n = params.ring_dim;
        let tables = params.modulus_chain.iter().map(|&q| NttTable::new(q, n)).collect();
        let special = NttTable::new(params.special_prime, n);
        let mut q_products = Vec::new();
        let mut acc = BigUint::one();
        for &q in &params.modulus_chain {
            acc *= q;
            q_products.push(acc.clone());
        }
        Arc::new(RnsContext { params, tables, special, q_products })
    }

    pub fn n(&self) -> usize {
        self.params.ring_dim
    }

    pub fn q(&self, i: usize) -> u64 {
        self.params.modulus_chain[i]
    }

    pub fn q_product(&self, level: usize) -> &BigUint {
        &self.q_products[level]
    }

    fn table(&self, limb: usize, special: bool, limbs: usize) -> &NttTable {
        if special && limb == limbs - 1 {
            &self.special
        } else {
            &self.tables[limb]
        }
    }
}

/// Residues of one polynomial. Limb `i < chain_limbs` is modulo `q_i`; when
/// `special` is set, the last limb is modulo the special prime.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RnsPoly {
    pub limbs: Vec<Vec<u64>>,
    pub special: bool,
    pub ntt: bool,
}

impl RnsPoly {
    pub fn zero(ctx: &RnsContext, level: usize, special: bool, ntt: bool) -> Self {
        let count = level + 1 + special as usize;
        RnsPoly { limbs: vec![vec![0; ctx.n()]; count], special, ntt }
    }

    /// Number of chain primes, i.e. `level + 1`.
    pub fn chain_limbs(&self) -> usize {
        self.limbs.len() - self.special as usize
    }

    pub fn level(&self) -> usize {
        self.chain_limbs() - 1
    }

    pub fn modulus(&self, ctx: &RnsContext, i: usize) -> u64 {
        ctx.table(i, self.special, self.limbs.len()).q
    }

    pub fn from_signed(ctx: &RnsContext, coeffs: &[i64], level: usize, special: bool) -> Self {
        let mut p = RnsPoly::zero(ctx, level, special, false);
        for i in 0..p.limbs.len() {
            let q = p.modulus(ctx, i);
            for (dst, &c) in p.limbs[i].iter_mut().zip(coeffs) {
                *dst = reduce_i128(c as i128, q);
            }
        }
        p
    }

    pub fn from_i128(ctx: &RnsContext, coeffs: &[i128], level: usize, special: bool) -> Self {
        let mut p = RnsPoly::zero(ctx, level, special, false);
        for i in 0..p.limbs.len() {
            let q = p.modulus(ctx, i);
            for (dst, &c) in p.limbs[i].iter_mut().zip(coeffs) {
                *dst = reduce_i128(c, q);
            }
        }
        p
    }

    pub fn from_bigint(ctx: &RnsContext, coeffs: &[BigInt], level: usize, special: bool) -> Self {
        let mut p = RnsPoly::zero(ctx, level, special, false);
        for i in 0..p.limbs.len() {
            let q = p.modulus(ctx, i);
            for (dst, c) in p.limbs[i].iter_mut().zip(coeffs) {
                *dst = big_mod_u64(c, q);
            }
        }
        p
    }

    pub fn uniform<R: Rng + ?Sized>(ctx: &RnsContext, level: usize, special: bool, rng: &mut R) -> Self {
        let mut p = RnsPoly::zero(ctx, level, special, true);
        for i in 0..p.limbs.len() {
            let q = p.modulus(ctx, i);
            for x in p.limbs[i].iter_mut() {
                *x = rng.gen_range(0..q);
            }
        }
        p
    }

    pub fn to_ntt(&mut self, ctx: &RnsContext) {
        if self.ntt {
            return;
        }
        let count = self.limbs.len();
        for (i, limb) in self.limbs.iter_mut().enumerate() {
            ctx.table(i, self.special, count).forward(limb);
        }
        self.ntt = true;
    }

    pub fn to_coeff(&mut self, ctx: &RnsContext) {
        if !self.ntt {
            return;
        }
        let count = self.limbs.len();
        for (i, limb) in self.limbs.iter_mut().enumerate() {
            ctx.table(i, self.special, count).inverse(limb);
        }
        self.ntt = false;
    }

    pub fn ntt_form(mut self, ctx: &RnsContext) -> Self {
        self.to_ntt(ctx);
        self
    }

    pub fn coeff_form(mut self, ctx: &RnsContext) -> Self {
        self.to_coeff(ctx);
        self
    }

    fn zip_with(&self, other: &RnsPoly, ctx: &RnsContext, f: impl Fn(u64, u64, u64) -> u64) -> RnsPoly {
        assert_eq!(self.limbs.len(), other.limbs.len(), "limb count mismatch");
        assert_eq!(self.special, other.special);
        assert_eq!(self.ntt, other.ntt, "domain mismatch");
        let mut out = self.clone();
        for i in 0..out.limbs.len() {
            let q = self.modulus(ctx, i);
            for (x, &y) in out.limbs[i].iter_mut().zip(&other.limbs[i]) {
                *x = f(*x, y, q);
            }
        }
        out
    }

    pub fn add(&self, other: &RnsPoly, ctx: &RnsContext) -> RnsPoly {
        self.zip_with(other, ctx, add_mod)
    }

    pub fn sub(&self, other: &RnsPoly, ctx: &RnsContext) -> RnsPoly {
        self.zip_with(other, ctx, sub_mod)
    }

    /// Pointwise product; both operands must be in the NTT domain.
    pub fn mul(&self, other: &RnsPoly, ctx: &RnsContext) -> RnsPoly {
        assert!(self.ntt && other.ntt, "multiplication requires NTT form");
        self.zip_with(other, ctx, mul_mod)
    }

    pub fn neg(&self, ctx: &RnsContext) -> RnsPoly {
        let mut out = self.clone();
        for i in 0..out.limbs.len() {
            let q = self.modulus(ctx, i);
            for x in out.limbs[i].iter_mut() {
                *x = neg_mod(*x, q);
            }
        }
        out
    }

    /// Multiplies by a signed integer constant.
    pub fn mul_scalar(&self, c: i128, ctx: &RnsContext) -> RnsPoly {
        let mut out = self.clone();
        for i in 0..out.limbs.len() {
            let q = self.modulus(ctx, i);
            let cq = reduce_i128(c, q);
            for x in out.limbs[i].iter_mut() {
                *x = mul_mod(*x, cq, q);
            }
        }
        out
    }

    /// Multiplies by a big integer constant.
    pub fn mul_big_scalar(&self, c: &BigInt, ctx: &RnsContext) -> RnsPoly {
        let mut out = self.clone();
        for i in 0..out.limbs.len() {
            let q = self.modulus(ctx, i);
            let cq = big_mod_u64(c, q);
            for x in out.limbs[i].iter_mut() {
                *x = mul_mod(*x, cq, q);
            }
        }
        out
    }

    /// Keeps only chain primes `q_0..q_level` (and the special limb if present).
    pub fn drop_to_level(&self, level: usize) -> RnsPoly {
        assert!(level <= self.level());
        let mut limbs: Vec<Vec<u64>> = self.limbs[..=level].to_vec();
        if self.special {
            limbs.push(self.limbs.last().unwrap().clone());
        }
        RnsPoly { limbs, special: self.special, ntt: self.ntt }
    }

    /// Removes the special limb without dividing.
    pub fn without_special(&self) -> RnsPoly {
        assert!(self.special);
        RnsPoly { limbs: self.limbs[..self.limbs.len() - 1].to_vec(), special: false, ntt: self.ntt }
    }

    /// `X -> X^g` for odd `g`; result stays in coefficient form.
    pub fn automorphism(&self, g: usize, ctx: &RnsContext) -> RnsPoly {
        let n = ctx.n();
        let src = self.clone().coeff_form(ctx);
        let mut out = RnsPoly::zero(ctx, self.level(), self.special, false);
        for i in 0..src.limbs.len() {
            let q = src.modulus(ctx, i);
            for (j, &c) in src.limbs[i].iter().enumerate() {
                let idx = (j * g) % (2 * n);
                if idx < n {
                    out.limbs[i][idx] = c;
                } else {
                    out.limbs[i][idx - n] = neg_mod(c, q);
                }
            }
        }
        out
    }

    /// Exact division by the last chain prime with rounding, dropping one level.
    pub fn rescale(&self, ctx: &RnsContext) -> RnsPoly {
        assert!(!self.special);
        let level = self.level();
        assert!(level >= 1);
        let was_ntt = self.ntt;
        let src = self.clone().coeff_form(ctx);
        let ql = ctx.q(level);
        let last = &src.limbs[level];
        let mut out = RnsPoly::zero(ctx, level - 1, false, false);
        for i in 0..level {
            let q = ctx.q(i);
            let inv = inv_mod(ql % q, q);
            for j in 0..ctx.n() {
                let r = reduce_i128(center(last[j], ql) as i128, q);
                out.limbs[i][j] = mul_mod(sub_mod(src.limbs[i][j], r, q), inv, q);
            }
        }
        if was_ntt {
            out.to_ntt(ctx);
        }
        out
    }

    /// Divides by the special prime with rounding and removes its limb.
    pub fn mod_down(&self, ctx: &RnsContext) -> RnsPoly {
        assert!(self.special);
        let was_ntt = self.ntt;
        let src = self.clone().coeff_form(ctx);
        let p = ctx.special.q;
        let last = src.limbs.last().unwrap();
        let chain = src.chain_limbs();
        let mut out = RnsPoly::zero(ctx, chain - 1, false, false);
        for i in 0..chain {
            let q = ctx.q(i);
            let inv = inv_mod(p % q, q);
            for j in 0..ctx.n() {
                let r = reduce_i128(center(last[j], p) as i128, q);
                out.limbs[i][j] = mul_mod(sub_mod(src.limbs[i][j], r, q), inv, q);
            }
        }
        if was_ntt {
            out.to_ntt(ctx);
        }
        out
    }

    /// Centered integer coefficients modulo `Q_level` (chain limbs only).
    pub fn to_bigint_centered(&self, ctx: &RnsContext) -> Vec<BigInt> {
        let src = self.clone().coeff_form(ctx);
        let level = src.level();
        let qprod = ctx.q_product(level);
        let half = qprod >> 1;
        let basis: Vec<BigUint> = (0..=level)
            .map(|i| {
                let q = ctx.q(i);
                let qi = qprod / q;
                let r = (&qi % q).to_u64_digits().first().copied().unwrap_or(0);
                qi * inv_mod(r, q)
            })
            .collect();
        (0..ctx.n())
            .map(|j| {
                let mut acc = BigUint::zero();
                for i in 0..=level {
                    acc += &basis[i] * src.limbs[i][j];
                }
                acc %= qprod;
                if acc > half {
                    BigInt::from_biguint(Sign::Minus, qprod - acc)
                } else {
                    BigInt::from_biguint(Sign::Plus, acc)
                }
            })
            .collect()
    }

    /// Centered coefficients as `f64`, exact whenever magnitudes are below 2^53.
    pub fn to_f64_centered(&self, ctx: &RnsContext) -> Vec<f64> {
        if self.level() == 0 {
            let src = self.clone().coeff_form(ctx);
            let q = ctx.q(0);
            return src.limbs[0].iter().map(|&x| center(x, q) as f64).collect();
        }
        self.to_bigint_centered(ctx).iter().map(bigint_to_f64).collect()
    }
}

pub fn bigint_to_f64(x: &BigInt) -> f64 {
    let bits = x.bits();
    if bits <= 62 {
        let digits = x.magnitude().to_u64_digits();
        let m = digits.first().copied().unwrap_or(0) as f64;
        return if x.sign() == Sign::Minus { -m } else { m };
    }
    let shift = bits - 62;
    let top = x.magnitude() >> shift;
    let m = top.to_u64_digits().first().copied().unwrap_or(0) as f64 * 2f64.powi(shift as i32);
    if x.sign() == Sign::Minus {
        -m
    } else {
        m
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mhe::params::ChainSpec;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn crt_roundtrip_and_rescale() {
        let ctx = RnsContext::new(ChainSpec::toy(3, 2).build().unwrap());
        let coeffs: Vec<i128> = vec![5, -7, 1 << 70, -(1 << 68), 0, 3, -3, 123456789];
        let p = RnsPoly::from_i128(&ctx, &coeffs, 2, false);
        let back = p.to_bigint_centered(&ctx);
        for (a, b) in coeffs.iter().zip(&back) {
            assert_eq!(BigInt::from(*a), *b);
        }
        let q2 = ctx.q(2) as f64;
        let r = p.ntt_form(&ctx).rescale(&ctx);
        let vals = r.to_f64_centered(&ctx);
        for (a, b) in coeffs.iter().zip(&vals) {
            assert!((*a as f64 / q2 - b).abs() <= 0.5 + 1e-9 * b.abs());
        }
    }

    #[test]
    fn automorphism_composes() {
        let ctx = RnsContext::new(ChainSpec::toy(3, 1).build().unwrap());
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let p = RnsPoly::uniform(&ctx, 1, false, &mut rng).coeff_form(&ctx);
        let n2 = 2 * ctx.n();
        let a = p.automorphism(5, &ctx).automorphism(5, &ctx);
        let b = p.automorphism(25 % n2, &ctx);
        assert_eq!(a, b);
        assert_eq!(p.automorphism(1, &ctx), p);
    }

    #[test]
    fn bigint_float_conversion() {
        let x = BigInt::from(1u128 << 100) + BigInt::from(12345);
        assert!((bigint_to_f64(&x) / 2f64.powi(100) - 1.0).abs() < 1e-15);
        assert_eq!(bigint_to_f64(&BigInt::from(-42)), -42.0);
    }
}
