//! Collective key switching to an external key and masked refresh with an
//! embedded linear transform.
//!
//! Refresh, per party `i` holding `s_i` and a fresh mask `M_i` with coefficients
//! uniform in `[0, 2^(lambda+delta))`:
//!   `h0_i = s_i*c1 + M_i + e_i            (mod Q_level)`
//!   `h1_i = -s_i*a - F(M_i) + e'_i        (mod Q_L)`
//! The aggregator lifts `c0 + sum h0_i` exactly to the integers (the sum of
//! masks keeps it inside a window that does not wrap when
//! `Q_level > (N+1) * 2^delta * 2^lambda`) and outputs `(F(lift) + sum h1_i, a)`.
//! `F` is an integer-linear map up to one final rounding, so masks cancel to
//! within `N + 1` units.

use num_bigint::{BigInt, BigUint, RandBigInt};
use num_traits::{One, Signed, Zero};
use rand::Rng;

use super::ciphertext::Ciphertext;
use super::encoding::Encoder;
use super::error::{MheError, Result};
use super::keys::{PublicKey, SecretShare};
use super::params::RingParams;
use super::ring::{RnsContext, RnsPoly};
use super::transform::LinearTransform;
use crate::math::bigconv::{round_shift, CrtConvolver};
use crate::math::sampling::{gaussian_vec, ternary_vec};

/// Fractional bits kept when the transform's diagonals are encoded as integers.
pub const TRANSFORM_PRECISION_BITS: u32 = 50;

/// Mask sizing for `n_parties` with message bound `2^delta` and statistical parameter `lambda`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MaskSizing {
    pub n_parties: usize,
    pub delta: u32,
    pub lambda: u32,
}

impl MaskSizing {
    /// Masks are drawn below `2^mask_bits`.
    pub fn mask_bits(&self) -> u32 {
        self.lambda + self.delta
    }

    /// `(N+1) * 2^delta * 2^lambda`; the modulus must strictly exceed it.
    pub fn modulus_bound(&self) -> BigUint {
        BigUint::from(self.n_parties as u64 + 1) << self.mask_bits()
    }

    pub fn log2_modulus_bound(&self) -> f64 {
        ((self.n_parties + 1) as f64).log2() + self.mask_bits() as f64
    }

    pub fn admits(&self, ctx: &RnsContext, level: usize) -> bool {
        ctx.q_product(level) > &self.modulus_bound()
    }

    pub fn check(&self, ctx: &RnsContext, level: usize) -> Result<()> {
        if self.admits(ctx, level) {
            Ok(())
        } else {
            Err(MheError::BootstrapConstraint {
                level,
                log_q: ctx.params.log_q(level),
                log_bound: self.log2_modulus_bound(),
            })
        }
    }

    /// Lowest level at which a refresh is permitted.
    pub fn min_level(&self, ctx: &RnsContext) -> Option<usize> {
        (0..=ctx.params.max_level()).find(|&l| self.admits(ctx, l))
    }

    /// As [`MaskSizing::min_level`], from the chain alone.
    pub fn min_level_for(&self, params: &RingParams) -> Option<usize> {
        let bound = self.modulus_bound();
        let mut q = BigUint::one();
        for (l, &p) in params.modulus_chain.iter().enumerate() {
            q *= p;
            if q > bound {
                return Some(l);
            }
        }
        None
    }
}

enum Term {
    Scalar(BigInt),
    Poly(Vec<BigInt>),
}

/// `F`: integer version of `Encode_S(phi(Decode_Sc(.)))` in the coefficient domain.
pub struct CompiledTransform {
    terms: Vec<(usize, Term)>,
    precision: u32,
    n: usize,
    term_bits: u64,
}

impl CompiledTransform {
    /// `ratio = S_out / S_in`.
    pub fn new(enc: &Encoder, n: usize, phi: &LinearTransform, ratio: f64) -> Self {
        let slots = n / 2;
        let precision = TRANSFORM_PRECISION_BITS;
        let unit = ratio * 2f64.powi(precision as i32);
        let mut terms = Vec::new();
        let mut term_bits = 0u64;
        for (shift, diag) in phi.diagonals(slots) {
            let g = enc.galois_element(shift);
            let first = diag[0];
            let term = if diag.iter().all(|&x| x == first) {
                let c = BigInt::from((first * unit).round() as i128);
                term_bits = term_bits.max(c.bits());
                Term::Scalar(c)
            } else {
                let coeffs = enc.slots_to_coeffs(&diag);
                let ints: Vec<BigInt> = coeffs.iter().map(|c| BigInt::from((c * unit).round() as i128)).collect();
                term_bits = term_bits.max(ints.iter().map(|x| x.bits()).max().unwrap_or(0));
                Term::Poly(ints)
            };
            terms.push((g, term));
        }
        CompiledTransform { terms, precision, n, term_bits }
    }

    fn automorphism(x: &[BigInt], g: usize) -> Vec<BigInt> {
        let n = x.len();
        let mut out = vec![BigInt::zero(); n];
        for (j, c) in x.iter().enumerate() {
            let idx = j * g % (2 * n);
            if idx < n {
                out[idx] = c.clone();
            } else {
                out[idx - n] = -c;
            }
        }
        out
    }

    /// Applies `F` to integer coefficients.
    pub fn apply(&self, x: &[BigInt]) -> Vec<BigInt> {
        let n = self.n;
        let x_bits = x.iter().map(|v| v.bits()).max().unwrap_or(0);
        let out_bits = x_bits + self.term_bits + (n as u64).trailing_zeros() as u64 + 8;
        let mut conv: Option<CrtConvolver> = None;
        let mut acc = vec![BigInt::zero(); n];
        for (g, term) in &self.terms {
            let prod: Vec<BigInt> = match term {
                Term::Scalar(c) => x.iter().map(|v| v * c).collect(),
                Term::Poly(p) => conv.get_or_insert_with(|| CrtConvolver::new(n, out_bits)).convolve(x, p),
            };
            let rotated = if *g == 1 { prod } else { Self::automorphism(&prod, *g) };
            for (a, r) in acc.iter_mut().zip(rotated) {
                *a += r;
            }
        }
        acc.iter().map(|v| round_shift(v, self.precision)).collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RefreshShare {
    pub h0: RnsPoly,
    pub h1: RnsPoly,
}

fn noise<R: Rng + ?Sized>(ctx: &RnsContext, level: usize, rng: &mut R) -> RnsPoly {
    RnsPoly::from_signed(ctx, &gaussian_vec(rng, ctx.n()), level, false).ntt_form(ctx)
}

pub fn refresh_share<R: Rng + ?Sized>(
    ctx: &RnsContext,
    c: &Ciphertext,
    sk: &SecretShare,
    f: &CompiledTransform,
    crs_a: &RnsPoly,
    sizing: &MaskSizing,
    rng: &mut R,
) -> RefreshShare {
    let n = ctx.n();
    let top = ctx.params.max_level();
    let bound = BigUint::one() << sizing.mask_bits();
    let mask: Vec<BigInt> = (0..n).map(|_| BigInt::from(rng.gen_biguint_below(&bound))).collect();
    let m_poly = RnsPoly::from_bigint(ctx, &mask, c.level, false).ntt_form(ctx);
    let h0 = c.parts[1].mul(&sk.at_level(c.level), ctx).add(&m_poly, ctx).add(&noise(ctx, c.level, rng), ctx);
    let fm = RnsPoly::from_bigint(ctx, &f.apply(&mask), top, false).ntt_form(ctx);
    let h1 = noise(ctx, top, rng).sub(&crs_a.mul(&sk.at_level(top), ctx), ctx).sub(&fm, ctx);
    RefreshShare { h0, h1 }
}

pub fn refresh_combine(
    ctx: &RnsContext,
    c: &Ciphertext,
    shares: &[RefreshShare],
    f: &CompiledTransform,
    crs_a: &RnsPoly,
    sizing: &MaskSizing,
    out_scale: f64,
) -> Ciphertext {
    let top = ctx.params.max_level();
    let mut v = c.parts[0].clone();
    for s in shares {
        v = v.add(&s.h0, ctx);
    }
    let q = BigInt::from(ctx.q_product(c.level).clone());
    let window = BigInt::one() << sizing.mask_bits();
    // Centered lift gives (-Q/2, Q/2]; shift into [-2^(lambda+delta), Q - 2^(lambda+delta)).
    let lifted: Vec<BigInt> = v
        .to_bigint_centered(ctx)
        .into_iter()
        .map(|x| {
            let x = if x.is_negative() { x + &q } else { x };
            if x >= &q - &window {
                x - &q
            } else {
                x
            }
        })
        .collect();
    let mut c0 = RnsPoly::from_bigint(ctx, &f.apply(&lifted), top, false).ntt_form(ctx);
    for s in shares {
        c0 = c0.add(&s.h1, ctx);
    }
    Ciphertext { parts: vec![c0, crs_a.clone()], level: top, scale: out_scale }
}

/// Public-key switch share towards `target`.
#[derive(Clone, Debug, PartialEq)]
pub struct SwitchShare {
    pub h0: RnsPoly,
    pub h1: RnsPoly,
}

pub fn pcks_share<R: Rng + ?Sized>(
    ctx: &RnsContext,
    c: &Ciphertext,
    sk: &SecretShare,
    target: &PublicKey,
    rng: &mut R,
) -> SwitchShare {
    let l = c.level;
    let u = RnsPoly::from_signed(ctx, &ternary_vec(rng, ctx.n()), l, false).ntt_form(ctx);
    let h0 = c.parts[1]
        .mul(&sk.at_level(l), ctx)
        .add(&u.mul(&target.b.drop_to_level(l), ctx), ctx)
        .add(&noise(ctx, l, rng), ctx);
    let h1 = u.mul(&target.a.drop_to_level(l), ctx).add(&noise(ctx, l, rng), ctx);
    SwitchShare { h0, h1 }
}

pub fn pcks_combine(ctx: &RnsContext, c: &Ciphertext, shares: &[SwitchShare]) -> Ciphertext {
    let mut c0 = c.parts[0].clone();
    let mut c1 = RnsPoly::zero(ctx, c.level, false, true);
    for s in shares {
        c0 = c0.add(&s.h0, ctx);
        c1 = c1.add(&s.h1, ctx);
    }
    Ciphertext { parts: vec![c0, c1], level: c.level, scale: c.scale }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mhe::eval::{d_decrypt, decode, encode, encrypt};
    use crate::mhe::keys::{d_key_gen, sec_key_gen, single_key_pk, Crs};
    use crate::mhe::params::ChainSpec;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    #[test]
    fn sizing_matches_worked_example() {
        let s = MaskSizing { n_parties: 10, delta: 55, lambda: 128 };
        assert_eq!(s.mask_bits(), 183);
        assert_eq!(s.modulus_bound(), BigUint::from(11u32) << 183);
    }

    #[test]
    fn refresh_applies_transform_and_resets_level() {
        let ctx = RnsContext::new(ChainSpec::toy(4, 3).build().unwrap());
        let enc = Encoder::new(ctx.n());
        let shares = sec_key_gen(&ctx, 3, 1).unwrap();
        let keys = d_key_gen(&ctx, &shares, &[], &Crs { seed: 4 }, 5).unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(6);
        let v: Vec<f64> = (0..8).map(|i| (i as f64 - 3.5) / 2.0).collect();
        let s = ctx.params.initial_scale;
        let fresh = encrypt(&ctx, &keys.pk, &encode(&ctx, &enc, &v, 1, s * 1.5).unwrap(), &mut rng);
        let sizing = MaskSizing { n_parties: 3, delta: 40, lambda: 32 };
        sizing.check(&ctx, 1).unwrap();
        let phi = LinearTransform::Compose(vec![LinearTransform::Rotation(3), LinearTransform::Rotation(2)]);
        let f = CompiledTransform::new(&enc, ctx.n(), &phi, s / fresh.scale);
        let a = Crs { seed: 4 }.poly(&ctx, "refresh", 0, ctx.params.max_level(), false);
        let rs: Vec<RefreshShare> =
            shares.iter().map(|sk| refresh_share(&ctx, &fresh, sk, &f, &a, &sizing, &mut rng)).collect();
        let out = refresh_combine(&ctx, &fresh, &rs, &f, &a, &sizing, s);
        assert_eq!(out.level, 3);
        let dec = decode(&ctx, &enc, &d_decrypt(&ctx, &out, &shares, &mut rng).unwrap());
        for i in 0..8 {
            assert!((dec[i] - v[(i + 5) % 8]).abs() < 1e-6, "{i}: {} vs {}", dec[i], v[(i + 5) % 8]);
        }
    }

    #[test]
    fn switch_to_querier_key() {
        let ctx = RnsContext::new(ChainSpec::toy(4, 2).build().unwrap());
        let enc = Encoder::new(ctx.n());
        let shares = sec_key_gen(&ctx, 3, 1).unwrap();
        let crs = Crs { seed: 4 };
        let keys = d_key_gen(&ctx, &shares, &[], &crs, 5).unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(6);
        let querier = sec_key_gen(&ctx, 1, 99).unwrap();
        let qpk = single_key_pk(&ctx, &querier[0], &Crs { seed: 77 }, &mut rng);
        let v = vec![0.5, -1.25, 2.0];
        let c = encrypt(&ctx, &keys.pk, &encode(&ctx, &enc, &v, 2, ctx.params.initial_scale).unwrap(), &mut rng);
        let sw: Vec<SwitchShare> = shares.iter().map(|sk| pcks_share(&ctx, &c, sk, &qpk, &mut rng)).collect();
        let out = pcks_combine(&ctx, &c, &sw);
        let dec = decode(&ctx, &enc, &d_decrypt(&ctx, &out, &querier, &mut rng).unwrap());
        for i in 0..3 {
            assert!((dec[i] - v[i]).abs() < 1e-6);
        }
        let wrong = decode(&ctx, &enc, &d_decrypt(&ctx, &out, &shares, &mut rng).unwrap());
        assert!((wrong[0] - v[0]).abs() > 1.0);
    }
}
