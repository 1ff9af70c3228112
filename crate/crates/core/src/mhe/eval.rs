//! Ciphertext-level arithmetic: encoding, encryption, products, rescaling,
//! key switching and rotations. Bookkeeping of (level, scale) is the caller's.

use rand::Rng;

use super::ciphertext::{Ciphertext, Plaintext};
use super::encoding::Encoder;
use super::error::{MheError, Result};
use super::keys::{CollectiveKeys, PublicKey, SecretShare, SwitchingKey};
use super::ring::{RnsContext, RnsPoly};
use crate::math::modarith::{center, reduce_i128};
use crate::math::sampling::{gaussian_vec, ternary_vec};

pub fn encode(ctx: &RnsContext, enc: &Encoder, v: &[f64], level: usize, scale: f64) -> Result<Plaintext> {
    if v.len() > enc.slots() {
        return Err(MheError::TooManySlots { len: v.len(), slots: enc.slots() });
    }
    let coeffs = enc.encode_i128(v, scale).ok_or(MheError::ScaleOverflow { level })?;
    let log_q = ctx.params.log_q(level);
    let max = coeffs.iter().map(|c| c.unsigned_abs()).max().unwrap_or(0);
    if max > 0 && (max as f64).log2() + 1.0 >= log_q {
        return Err(MheError::ScaleOverflow { level });
    }
    let poly = RnsPoly::from_i128(ctx, &coeffs, level, false).ntt_form(ctx);
    Ok(Plaintext { poly, level, scale })
}

pub fn decode(ctx: &RnsContext, enc: &Encoder, p: &Plaintext) -> Vec<f64> {
    let coeffs: Vec<f64> = p.poly.to_f64_centered(ctx).iter().map(|c| c / p.scale).collect();
    enc.coeffs_to_slots(&coeffs)
}

pub fn encrypt<R: Rng + ?Sized>(ctx: &RnsContext, pk: &PublicKey, p: &Plaintext, rng: &mut R) -> Ciphertext {
    let level = p.level;
    let n = ctx.n();
    let u = RnsPoly::from_signed(ctx, &ternary_vec(rng, n), level, false).ntt_form(ctx);
    let e0 = RnsPoly::from_signed(ctx, &gaussian_vec(rng, n), level, false).ntt_form(ctx);
    let e1 = RnsPoly::from_signed(ctx, &gaussian_vec(rng, n), level, false).ntt_form(ctx);
    let b = pk.b.drop_to_level(level);
    let a = pk.a.drop_to_level(level);
    let c0 = u.mul(&b, ctx).add(&e0, ctx).add(&p.poly, ctx);
    let c1 = u.mul(&a, ctx).add(&e1, ctx);
    Ciphertext { parts: vec![c0, c1], level, scale: p.scale }
}

/// Per-party decryption share `s_i * c1 + e_i`.
pub fn decrypt_share<R: Rng + ?Sized>(ctx: &RnsContext, c: &Ciphertext, sk: &SecretShare, rng: &mut R) -> RnsPoly {
    let e = RnsPoly::from_signed(ctx, &gaussian_vec(rng, ctx.n()), c.level, false).ntt_form(ctx);
    c.parts[1].mul(&sk.at_level(c.level), ctx).add(&e, ctx)
}

pub fn decrypt_combine(ctx: &RnsContext, c: &Ciphertext, shares: &[RnsPoly]) -> Plaintext {
    let mut m = c.parts[0].clone();
    for s in shares {
        m = m.add(s, ctx);
    }
    Plaintext { poly: m, level: c.level, scale: c.scale }
}

/// Collective decryption with whichever shares are supplied; a strict subset
/// of the parties yields a uniformly masked result.
pub fn d_decrypt<R: Rng + ?Sized>(
    ctx: &RnsContext,
    c: &Ciphertext,
    shares: &[SecretShare],
    rng: &mut R,
) -> Result<Plaintext> {
    if !c.is_relinearized() {
        return Err(MheError::NotRelinearized);
    }
    let ds: Vec<RnsPoly> = shares.iter().map(|s| decrypt_share(ctx, c, s, rng)).collect();
    Ok(decrypt_combine(ctx, c, &ds))
}

pub fn add(ctx: &RnsContext, a: &Ciphertext, b: &Ciphertext) -> Ciphertext {
    debug_assert_eq!(a.level, b.level);
    let len = a.parts.len().max(b.parts.len());
    let parts = (0..len)
        .map(|i| match (a.parts.get(i), b.parts.get(i)) {
            (Some(x), Some(y)) => x.add(y, ctx),
            (Some(x), None) | (None, Some(x)) => x.clone(),
            _ => unreachable!(),
        })
        .collect();
    Ciphertext { parts, level: a.level, scale: a.scale }
}

pub fn neg(ctx: &RnsContext, a: &Ciphertext) -> Ciphertext {
    Ciphertext { parts: a.parts.iter().map(|p| p.neg(ctx)).collect(), level: a.level, scale: a.scale }
}

pub fn add_plain(ctx: &RnsContext, a: &Ciphertext, p: &Plaintext) -> Ciphertext {
    let mut out = a.clone();
    out.parts[0] = out.parts[0].add(&p.poly, ctx);
    out
}

pub fn mul_plain(ctx: &RnsContext, a: &Ciphertext, p: &Plaintext) -> Ciphertext {
    Ciphertext {
        parts: a.parts.iter().map(|x| x.mul(&p.poly, ctx)).collect(),
        level: a.level,
        scale: a.scale * p.scale,
    }
}

pub fn mul_int(ctx: &RnsContext, a: &Ciphertext, k: i128) -> Ciphertext {
    Ciphertext { parts: a.parts.iter().map(|x| x.mul_scalar(k, ctx)).collect(), level: a.level, scale: a.scale }
}

/// Tensor product without relinearization.
pub fn tensor(ctx: &RnsContext, a: &Ciphertext, b: &Ciphertext) -> Ciphertext {
    debug_assert_eq!(a.level, b.level);
    let (a0, a1, b0, b1) = (&a.parts[0], &a.parts[1], &b.parts[0], &b.parts[1]);
    let d0 = a0.mul(b0, ctx);
    let d1 = a0.mul(b1, ctx).add(&a1.mul(b0, ctx), ctx);
    let d2 = a1.mul(b1, ctx);
    Ciphertext { parts: vec![d0, d1, d2], level: a.level, scale: a.scale * b.scale }
}

pub fn drop_to_level(a: &Ciphertext, level: usize) -> Ciphertext {
    Ciphertext { parts: a.parts.iter().map(|p| p.drop_to_level(level)).collect(), level, scale: a.scale }
}

pub fn rescale(ctx: &RnsContext, a: &Ciphertext) -> Result<Ciphertext> {
    if a.level == 0 {
        return Err(MheError::LevelExhausted { needed: 1, level: 0 });
    }
    let q = ctx.q(a.level) as f64;
    Ok(Ciphertext {
        parts: a.parts.iter().map(|p| p.rescale(ctx)).collect(),
        level: a.level - 1,
        scale: a.scale / q,
    })
}

/// Hybrid key switch of `d` (multiplied by the key's source secret) to the
/// target secret. Returns `(k0, k1)` at `d`'s level with `k0 + k1*s ≈ d*s_src`.
pub fn key_switch_core(ctx: &RnsContext, d: &RnsPoly, key: &SwitchingKey) -> (RnsPoly, RnsPoly) {
    let level = d.level();
    let src = d.clone().coeff_form(ctx);
    let mut acc0 = RnsPoly::zero(ctx, level, true, true);
    let mut acc1 = RnsPoly::zero(ctx, level, true, true);
    for i in 0..=level {
        let qi = ctx.q(i);
        let centered: Vec<i128> = src.limbs[i].iter().map(|&x| center(x, qi) as i128).collect();
        let mut digit = RnsPoly::zero(ctx, level, true, false);
        for j in 0..digit.limbs.len() {
            let q = digit.modulus(ctx, j);
            for (dst, &c) in digit.limbs[j].iter_mut().zip(&centered) {
                *dst = reduce_i128(c, q);
            }
        }
        digit.to_ntt(ctx);
        acc0 = acc0.add(&digit.mul(&key.b[i].drop_to_level(level), ctx), ctx);
        acc1 = acc1.add(&digit.mul(&key.a[i].drop_to_level(level), ctx), ctx);
    }
    (acc0.mod_down(ctx), acc1.mod_down(ctx))
}

pub fn relinearize(ctx: &RnsContext, a: &Ciphertext, keys: &CollectiveKeys) -> Result<Ciphertext> {
    if a.parts.len() == 2 {
        return Ok(a.clone());
    }
    let rlk = keys.rlk.as_ref().ok_or(MheError::MissingRelinKey)?;
    let (k0, k1) = key_switch_core(ctx, &a.parts[2], rlk);
    Ok(Ciphertext {
        parts: vec![a.parts[0].add(&k0, ctx), a.parts[1].add(&k1, ctx)],
        level: a.level,
        scale: a.scale,
    })
}

/// Applies `X -> X^g` and switches back to the collective key.
pub fn apply_galois(ctx: &RnsContext, a: &Ciphertext, g: usize, keys: &CollectiveKeys, offset: usize) -> Result<Ciphertext> {
    if g == 1 {
        return Ok(a.clone());
    }
    let key = keys.rot.get(&g).ok_or(MheError::MissingRotationKey(offset))?;
    let c0 = a.parts[0].automorphism(g, ctx).ntt_form(ctx);
    let c1 = a.parts[1].automorphism(g, ctx);
    let (k0, k1) = key_switch_core(ctx, &c1, key);
    Ok(Ciphertext { parts: vec![c0.add(&k0, ctx), k1], level: a.level, scale: a.scale })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mhe::keys::{d_key_gen, sec_key_gen, Crs};
    use crate::mhe::params::ChainSpec;
    use crate::mhe::ring::RnsContext;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn setup(log_n: u32, levels: usize, parties: usize) -> (std::sync::Arc<RnsContext>, Encoder, Vec<SecretShare>, CollectiveKeys) {
        let ctx = RnsContext::new(ChainSpec::toy(log_n, levels).build().unwrap());
        let enc = Encoder::new(ctx.n());
        let shares = sec_key_gen(&ctx, parties, 7).unwrap();
        let gal: Vec<usize> = (0..enc.slots()).map(|k| enc.galois_element(k)).collect();
        let keys = d_key_gen(&ctx, &shares, &gal, &Crs { seed: 1 }, 2).unwrap();
        (ctx, enc, shares, keys)
    }

    fn max_err(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
    }

    #[test]
    fn encrypt_decrypt_mul_rotate() {
        let (ctx, enc, shares, keys) = setup(4, 3, 3);
        let mut rng = ChaCha20Rng::seed_from_u64(9);
        let s = ctx.params.initial_scale;
        let l = ctx.params.max_level();
        let a: Vec<f64> = (0..8).map(|i| i as f64 * 0.25 - 1.0).collect();
        let b: Vec<f64> = (0..8).map(|i| 1.5 - i as f64 * 0.1).collect();
        let ca = encrypt(&ctx, &keys.pk, &encode(&ctx, &enc, &a, l, s).unwrap(), &mut rng);
        let cb = encrypt(&ctx, &keys.pk, &encode(&ctx, &enc, &b, l, s).unwrap(), &mut rng);
        let dec = |c: &Ciphertext, rng: &mut ChaCha20Rng| decode(&ctx, &enc, &d_decrypt(&ctx, c, &shares, rng).unwrap());
        assert!(max_err(&dec(&ca, &mut rng), &a) < 1e-6);
        let prod = rescale(&ctx, &relinearize(&ctx, &tensor(&ctx, &ca, &cb), &keys).unwrap()).unwrap();
        let want: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x * y).collect();
        assert!(max_err(&dec(&prod, &mut rng), &want) < 1e-6);
        let rot = apply_galois(&ctx, &ca, enc.galois_element(1), &keys, 1).unwrap();
        let want: Vec<f64> = (0..8).map(|i| a[(i + 1) % 8]).collect();
        assert!(max_err(&dec(&rot, &mut rng), &want) < 1e-6);
        // A strict subset of shares yields garbage.
        let partial = decode(&ctx, &enc, &d_decrypt(&ctx, &ca, &shares[..2], &mut rng).unwrap());
        assert!(max_err(&partial, &a) > 1e3);
    }
}
