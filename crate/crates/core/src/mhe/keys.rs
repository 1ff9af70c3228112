//! Secret shares, collective public/evaluation keys and their generation rounds.
//!
//! Every protocol is split into a per-party share function and a public
//! aggregation so the simulator can put shares on the wire.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use std::collections::BTreeMap;

use super::error::{MheError, Result};
use super::params::RingParams;
use super::ring::{Ctx, RnsContext, RnsPoly};
use crate::math::modarith::mul_mod;
use crate::math::sampling::{gaussian_vec, ternary_vec};

#[derive(Clone, Debug, PartialEq)]
pub struct SecretShare {
    pub party: usize,
    pub params: RingParams,
    /// Ternary coefficients.
    pub coeffs: Vec<i64>,
    /// NTT form over the full chain plus the special prime.
    pub poly: RnsPoly,
}

impl SecretShare {
    pub fn sample<R: Rng + ?Sized>(ctx: &RnsContext, party: usize, rng: &mut R) -> Self {
        let coeffs = ternary_vec(rng, ctx.n());
        let poly = RnsPoly::from_signed(ctx, &coeffs, ctx.params.max_level(), true).ntt_form(ctx);
        SecretShare { party, params: ctx.params.clone(), coeffs, poly }
    }

    /// Share restricted to chain primes `q_0..q_level`.
    pub fn at_level(&self, level: usize) -> RnsPoly {
        self.poly.drop_to_level(level).without_special()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PublicKey {
    pub b: RnsPoly,
    pub a: RnsPoly,
}

/// Key-switching key with one RNS digit per chain prime, over `Q_L * P`.
#[derive(Clone, Debug, PartialEq)]
pub struct SwitchingKey {
    pub b: Vec<RnsPoly>,
    pub a: Vec<RnsPoly>,
}

#[derive(Clone, Debug)]
pub struct CollectiveKeys {
    pub n_parties: usize,
    pub pk: PublicKey,
    pub rlk: Option<SwitchingKey>,
    /// Keyed by Galois element.
    pub rot: BTreeMap<usize, SwitchingKey>,
}

/// Common reference string: public uniform polynomials derived from a seed.
#[derive(Clone, Debug)]
pub struct Crs {
    pub seed: u64,
}

impl Crs {
    pub fn rng(&self, tag: &str, index: u64) -> ChaCha20Rng {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for b in tag.bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x100_0000_01b3);
        }
        ChaCha20Rng::seed_from_u64(self.seed ^ h ^ index.wrapping_mul(0x9e37_79b9_7f4a_7c15))
    }

    pub fn poly(&self, ctx: &RnsContext, tag: &str, index: u64, level: usize, special: bool) -> RnsPoly {
        RnsPoly::uniform(ctx, level, special, &mut self.rng(tag, index))
    }
}

pub fn sec_key_gen(ctx: &RnsContext, n_parties: usize, seed: u64) -> Result<Vec<SecretShare>> {
    if n_parties == 0 {
        return Err(MheError::InvalidParams("at least one party is required".into()));
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    Ok((0..n_parties).map(|i| SecretShare::sample(ctx, i, &mut rng)).collect())
}

fn noise_poly<R: Rng + ?Sized>(ctx: &RnsContext, level: usize, special: bool, rng: &mut R) -> RnsPoly {
    RnsPoly::from_signed(ctx, &gaussian_vec(rng, ctx.n()), level, special).ntt_form(ctx)
}

fn small_poly<R: Rng + ?Sized>(ctx: &RnsContext, level: usize, special: bool, rng: &mut R) -> RnsPoly {
    RnsPoly::from_signed(ctx, &ternary_vec(rng, ctx.n()), level, special).ntt_form(ctx)
}

/// `P * g_digit * s`: the gadget vector only touches limb `digit` (and never the special limb).
fn gadget_times(ctx: &RnsContext, s: &RnsPoly, digit: usize) -> RnsPoly {
    let mut out = RnsPoly::zero(ctx, s.level(), true, true);
    let q = ctx.q(digit);
    let p = ctx.special.q % q;
    for (d, &x) in out.limbs[digit].iter_mut().zip(&s.limbs[digit]) {
        *d = mul_mod(x, p, q);
    }
    out
}

fn digits(ctx: &RnsContext) -> usize {
    ctx.params.max_level() + 1
}

// ---------- public key ----------

pub fn pk_share<R: Rng + ?Sized>(ctx: &RnsContext, sk: &SecretShare, crs: &Crs, rng: &mut R) -> RnsPoly {
    let l = ctx.params.max_level();
    let a = crs.poly(ctx, "pk", 0, l, false);
    let e = noise_poly(ctx, l, false, rng);
    e.sub(&a.mul(&sk.at_level(l), ctx), ctx)
}

pub fn pk_aggregate(ctx: &RnsContext, shares: &[RnsPoly], crs: &Crs) -> PublicKey {
    let l = ctx.params.max_level();
    let mut b = RnsPoly::zero(ctx, l, false, true);
    for s in shares {
        b = b.add(s, ctx);
    }
    PublicKey { b, a: crs.poly(ctx, "pk", 0, l, false) }
}

// ---------- rotation keys (single round) ----------

pub fn rot_key_share<R: Rng + ?Sized>(
    ctx: &RnsContext,
    sk: &SecretShare,
    galois: usize,
    crs: &Crs,
    rng: &mut R,
) -> Vec<RnsPoly> {
    let l = ctx.params.max_level();
    let s_rot = sk.poly.automorphism(galois, ctx).ntt_form(ctx);
    (0..digits(ctx))
        .map(|d| {
            let a = crs.poly(ctx, "rot", (galois as u64) << 16 | d as u64, l, true);
            let e = noise_poly(ctx, l, true, rng);
            e.sub(&a.mul(&sk.poly, ctx), ctx).add(&gadget_times(ctx, &s_rot, d), ctx)
        })
        .collect()
}

pub fn rot_key_aggregate(ctx: &RnsContext, shares: &[Vec<RnsPoly>], galois: usize, crs: &Crs) -> SwitchingKey {
    let l = ctx.params.max_level();
    let b = (0..digits(ctx))
        .map(|d| shares.iter().fold(RnsPoly::zero(ctx, l, true, true), |acc, s| acc.add(&s[d], ctx)))
        .collect();
    let a = (0..digits(ctx)).map(|d| crs.poly(ctx, "rot", (galois as u64) << 16 | d as u64, l, true)).collect();
    SwitchingKey { b, a }
}

// ---------- relinearization key (two rounds) ----------

/// Round-1 share plus the party's ephemeral secret, which never leaves the party.
pub struct RlkEphemeral {
    pub u: RnsPoly,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RlkRound1Share {
    pub h0: Vec<RnsPoly>,
    pub h1: Vec<RnsPoly>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RlkRound2Share {
    pub h0: Vec<RnsPoly>,
    pub h1: Vec<RnsPoly>,
}

pub fn rlk_round1<R: Rng + ?Sized>(
    ctx: &RnsContext,
    sk: &SecretShare,
    crs: &Crs,
    rng: &mut R,
) -> (RlkEphemeral, RlkRound1Share) {
    let l = ctx.params.max_level();
    let u = small_poly(ctx, l, true, rng);
    let mut h0 = Vec::new();
    let mut h1 = Vec::new();
    for d in 0..digits(ctx) {
        let a = crs.poly(ctx, "rlk", d as u64, l, true);
        let e0 = noise_poly(ctx, l, true, rng);
        let e1 = noise_poly(ctx, l, true, rng);
        h0.push(gadget_times(ctx, &sk.poly, d).sub(&u.mul(&a, ctx), ctx).add(&e0, ctx));
        h1.push(sk.poly.mul(&a, ctx).add(&e1, ctx));
    }
    (RlkEphemeral { u }, RlkRound1Share { h0, h1 })
}

pub fn rlk_aggregate1(ctx: &RnsContext, shares: &[RlkRound1Share]) -> RlkRound1Share {
    let l = ctx.params.max_level();
    let z = || RnsPoly::zero(ctx, l, true, true);
    let h0 = (0..digits(ctx)).map(|d| shares.iter().fold(z(), |acc, s| acc.add(&s.h0[d], ctx))).collect();
    let h1 = (0..digits(ctx)).map(|d| shares.iter().fold(z(), |acc, s| acc.add(&s.h1[d], ctx))).collect();
    RlkRound1Share { h0, h1 }
}

pub fn rlk_round2<R: Rng + ?Sized>(
    ctx: &RnsContext,
    sk: &SecretShare,
    eph: &RlkEphemeral,
    agg1: &RlkRound1Share,
    rng: &mut R,
) -> RlkRound2Share {
    let l = ctx.params.max_level();
    let u_minus_s = eph.u.sub(&sk.poly, ctx);
    let mut h0 = Vec::new();
    let mut h1 = Vec::new();
    for d in 0..digits(ctx) {
        let e0 = noise_poly(ctx, l, true, rng);
        let e1 = noise_poly(ctx, l, true, rng);
        h0.push(sk.poly.mul(&agg1.h0[d], ctx).add(&e0, ctx));
        h1.push(u_minus_s.mul(&agg1.h1[d], ctx).add(&e1, ctx));
    }
    RlkRound2Share { h0, h1 }
}

pub fn rlk_aggregate2(ctx: &RnsContext, agg1: &RlkRound1Share, shares: &[RlkRound2Share]) -> SwitchingKey {
    let l = ctx.params.max_level();
    let b = (0..digits(ctx))
        .map(|d| {
            shares
                .iter()
                .fold(RnsPoly::zero(ctx, l, true, true), |acc, s| acc.add(&s.h0[d], ctx).add(&s.h1[d], ctx))
        })
        .collect();
    SwitchingKey { b, a: agg1.h1.clone() }
}

/// Runs every key-generation round in-process.
pub fn d_key_gen(
    ctx: &Ctx,
    shares: &[SecretShare],
    rotations: &[usize],
    crs: &Crs,
    seed: u64,
) -> Result<CollectiveKeys> {
    if shares.is_empty() {
        return Err(MheError::ShareCount { expected: 1, got: 0 });
    }
    if shares.iter().any(|s| s.params != ctx.params) {
        return Err(MheError::RingMismatch);
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let pk_shares: Vec<RnsPoly> = shares.iter().map(|s| pk_share(ctx, s, crs, &mut rng)).collect();
    let pk = pk_aggregate(ctx, &pk_shares, crs);
    let round1: Vec<(RlkEphemeral, RlkRound1Share)> =
        shares.iter().map(|s| rlk_round1(ctx, s, crs, &mut rng)).collect();
    let agg1 = rlk_aggregate1(ctx, &round1.iter().map(|r| r.1.clone()).collect::<Vec<_>>());
    let round2: Vec<RlkRound2Share> =
        shares.iter().zip(&round1).map(|(s, r)| rlk_round2(ctx, s, &r.0, &agg1, &mut rng)).collect();
    let rlk = rlk_aggregate2(ctx, &agg1, &round2);
    let mut rot = BTreeMap::new();
    for &g in rotations {
        if rot.contains_key(&g) {
            continue;
        }
        let rs: Vec<Vec<RnsPoly>> = shares.iter().map(|s| rot_key_share(ctx, s, g, crs, &mut rng)).collect();
        rot.insert(g, rot_key_aggregate(ctx, &rs, g, crs));
    }
    Ok(CollectiveKeys { n_parties: shares.len(), pk, rlk: Some(rlk), rot })
}

/// Single-key public key, used by the querier in oblivious prediction.
pub fn single_key_pk<R: Rng + ?Sized>(ctx: &RnsContext, sk: &SecretShare, crs: &Crs, rng: &mut R) -> PublicKey {
    let share = pk_share(ctx, sk, crs, rng);
    pk_aggregate(ctx, &[share], crs)
}
