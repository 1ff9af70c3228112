//! Lattice-based backend: every operation runs on RNS ciphertexts and every
//! collective protocol is executed share by share in-process.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;

use super::backend::{default_rotation_offsets, Instrumentation, RawOps};
use super::ciphertext::Ciphertext;
use super::encoding::Encoder;
use super::error::{MheError, Result};
use super::eval;
use super::keys::{d_key_gen, sec_key_gen, single_key_pk, CollectiveKeys, Crs, PublicKey, SecretShare};
use super::ledger::Ledger;
use super::params::RingParams;
use super::protocols::{
    pcks_combine, pcks_share, refresh_combine, refresh_share, CompiledTransform, MaskSizing, RefreshShare,
    SwitchShare,
};
use super::ring::{Ctx, RnsContext};
use super::serialize;
use super::transform::LinearTransform;

pub struct RealBackend {
    ctx: Ctx,
    enc: Encoder,
    shares: Vec<SecretShare>,
    keys: CollectiveKeys,
    crs: Crs,
    sizing: MaskSizing,
    rng: Mutex<ChaCha20Rng>,
    refresh_index: AtomicU64,
    instr: Instrumentation,
}

/// Querier key pair; the secret never leaves the querier.
pub struct RealQuerier {
    sk: SecretShare,
    pub pk: PublicKey,
}

/// Default declared message bound: `2^(scale_bits + 8)`.
pub fn default_delta(params: &RingParams) -> u32 {
    params.scale_bits() + 8
}

impl RealBackend {
    /// Runs key generation for `n_parties` with rotation keys for `±2^j`.
    pub fn new(params: RingParams, n_parties: usize, seed: u64) -> Result<Self> {
        let delta = default_delta(&params);
        Self::with_delta(params, n_parties, seed, delta)
    }

    pub fn with_delta(params: RingParams, n_parties: usize, seed: u64, delta: u32) -> Result<Self> {
        params.validate()?;
        if n_parties == 0 {
            return Err(MheError::ShareCount { expected: 1, got: 0 });
        }
        let ctx = RnsContext::new(params);
        let enc = Encoder::new(ctx.n());
        let shares = sec_key_gen(&ctx, n_parties, seed)?;
        let crs = Crs { seed: seed ^ 0x5eed_c125 };
        let galois: Vec<usize> =
            default_rotation_offsets(enc.slots()).into_iter().map(|k| enc.galois_element(k)).collect();
        let keys = d_key_gen(&ctx, &shares, &galois, &crs, seed.wrapping_add(1))?;
        let sizing = MaskSizing { n_parties, delta, lambda: ctx.params.security_level };
        Ok(RealBackend {
            ctx,
            enc,
            shares,
            keys,
            crs,
            sizing,
            rng: Mutex::new(ChaCha20Rng::seed_from_u64(seed.wrapping_add(2))),
            refresh_index: AtomicU64::new(0),
            instr: Instrumentation::default(),
        })
    }

    pub fn context(&self) -> &RnsContext {
        &self.ctx
    }

    pub fn keys(&self) -> &CollectiveKeys {
        &self.keys
    }

    pub fn shares(&self) -> &[SecretShare] {
        &self.shares
    }

    /// Decrypts with only the listed parties' shares.
    pub fn decrypt_with(&self, c: &Ciphertext, parties: &[usize]) -> Result<Vec<f64>> {
        let subset: Vec<SecretShare> = parties.iter().map(|&i| self.shares[i].clone()).collect();
        let pt = eval::d_decrypt(&self.ctx, c, &subset, &mut *self.rng.lock().unwrap())?;
        Ok(eval::decode(&self.ctx, &self.enc, &pt))
    }

    fn encode(&self, v: &[f64], level: usize, scale: f64) -> Result<super::ciphertext::Plaintext> {
        eval::encode(&self.ctx, &self.enc, v, level, scale)
    }
}

impl RawOps for RealBackend {
    type Ct = Ciphertext;
    type Querier = RealQuerier;

    fn params(&self) -> &RingParams {
        &self.ctx.params
    }
    fn n_parties(&self) -> usize {
        self.shares.len()
    }
    fn sizing(&self) -> MaskSizing {
        self.sizing
    }
    fn instr(&self) -> &Instrumentation {
        &self.instr
    }
    fn raw_ledger(&self, c: &Ciphertext) -> Ledger {
        Ledger { level: c.level, scale: c.scale }
    }
    fn raw_relabel(&self, mut c: Ciphertext, scale: f64) -> Ciphertext {
        c.scale = scale;
        c
    }
    fn raw_encrypt(&self, v: &[f64], level: usize, scale: f64) -> Result<Ciphertext> {
        let pt = self.encode(v, level, scale)?;
        Ok(eval::encrypt(&self.ctx, &self.keys.pk, &pt, &mut *self.rng.lock().unwrap()))
    }
    fn raw_decrypt(&self, c: &Ciphertext) -> Result<Vec<f64>> {
        self.decrypt_with(c, &(0..self.shares.len()).collect::<Vec<_>>())
    }
    fn raw_add(&self, a: &Ciphertext, b: &Ciphertext) -> Ciphertext {
        eval::add(&self.ctx, a, b)
    }
    fn raw_neg(&self, a: &Ciphertext) -> Ciphertext {
        eval::neg(&self.ctx, a)
    }
    fn raw_add_plain(&self, a: &Ciphertext, v: &[f64]) -> Result<Ciphertext> {
        let pt = self.encode(v, a.level, a.scale)?;
        Ok(eval::add_plain(&self.ctx, a, &pt))
    }
    fn raw_mul_plain(&self, a: &Ciphertext, v: &[f64], scale: f64) -> Result<Ciphertext> {
        let pt = self.encode(v, a.level, scale)?;
        Ok(eval::mul_plain(&self.ctx, a, &pt))
    }
    fn raw_mul_ct(&self, a: &Ciphertext, b: &Ciphertext) -> Result<Ciphertext> {
        eval::relinearize(&self.ctx, &eval::tensor(&self.ctx, a, b), &self.keys)
    }
    fn raw_mul_scalar(&self, a: &Ciphertext, _value: f64, k: i128, label_factor: f64) -> Ciphertext {
        let mut out = eval::mul_int(&self.ctx, a, k);
        out.scale *= label_factor;
        out
    }
    fn raw_rescale(&self, a: &Ciphertext) -> Result<Ciphertext> {
        eval::rescale(&self.ctx, a)
    }
    fn raw_drop(&self, a: &Ciphertext, level: usize) -> Ciphertext {
        eval::drop_to_level(a, level)
    }
    fn raw_rotate(&self, a: &Ciphertext, k: usize) -> Result<Ciphertext> {
        eval::apply_galois(&self.ctx, a, self.enc.galois_element(k), &self.keys, k)
    }
    fn raw_refresh(&self, a: &Ciphertext, phi: &LinearTransform) -> Result<(Ciphertext, usize)> {
        self.sizing.check(&self.ctx, a.level)?;
        let top = self.ctx.params.max_level();
        let out_scale = self.ctx.params.initial_scale;
        let f = CompiledTransform::new(&self.enc, self.ctx.n(), phi, out_scale / a.scale);
        let idx = self.refresh_index.fetch_add(1, Ordering::Relaxed);
        let crs_a = self.crs.poly(&self.ctx, "refresh", idx, top, false);
        let shares: Vec<RefreshShare> = {
            let mut rng = self.rng.lock().unwrap();
            self.shares.iter().map(|sk| refresh_share(&self.ctx, a, sk, &f, &crs_a, &self.sizing, &mut *rng)).collect()
        };
        let out = refresh_combine(&self.ctx, a, &shares, &f, &crs_a, &self.sizing, out_scale);
        Ok((out, serialize::refresh_share_bytes(self.ctx.n(), a.level, top)))
    }
    fn new_querier(&self, seed: u64) -> RealQuerier {
        let sk = sec_key_gen(&self.ctx, 1, seed).expect("single share").remove(0);
        let mut rng = ChaCha20Rng::seed_from_u64(seed ^ 0x9e37);
        let pk = single_key_pk(&self.ctx, &sk, &Crs { seed: seed ^ 0x71 }, &mut rng);
        RealQuerier { sk, pk }
    }
    fn raw_switch_to(&self, a: &Ciphertext, q: &RealQuerier) -> Result<(Ciphertext, usize)> {
        let sw: Vec<SwitchShare> = {
            let mut rng = self.rng.lock().unwrap();
            self.shares.iter().map(|sk| pcks_share(&self.ctx, a, sk, &q.pk, &mut *rng)).collect()
        };
        Ok((pcks_combine(&self.ctx, a, &sw), serialize::switch_share_bytes(self.ctx.n(), a.level)))
    }
    fn querier_decrypt(&self, q: &RealQuerier, c: &Ciphertext) -> Result<Vec<f64>> {
        let pt = eval::d_decrypt(&self.ctx, c, std::slice::from_ref(&q.sk), &mut *self.rng.lock().unwrap())?;
        Ok(eval::decode(&self.ctx, &self.enc, &pt))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mhe::backend::Backend;
    use crate::mhe::params::ChainSpec;

    fn backend(levels: usize) -> RealBackend {
        RealBackend::new(ChainSpec::toy(5, levels).build().unwrap(), 3, 11).unwrap()
    }

    fn close(a: &[f64], b: &[f64], tol: f64) {
        for (i, (x, y)) in a.iter().zip(b).enumerate() {
            assert!((x - y).abs() < tol, "slot {i}: {x} vs {y}");
        }
    }

    #[test]
    fn rotations_decompose_into_power_of_two_steps() {
        let be = backend(2);
        let v: Vec<f64> = (0..16).map(|i| i as f64 / 4.0).collect();
        let c = be.encrypt(&v).unwrap();
        let r = be.rot_left(&c, 7).unwrap();
        let want: Vec<f64> = (0..16).map(|i| v[(i + 7) % 16]).collect();
        close(&be.decrypt(&r).unwrap(), &want, 1e-6);
        // 7 = 8 - 1: two key switches.
        assert_eq!(be.instr().total().rotations, 2);
        let back = be.rot_right(&r, 7).unwrap();
        close(&be.decrypt(&back).unwrap(), &v, 1e-6);
    }

    #[test]
    fn scale_alignment_and_set_scale() {
        let be = backend(3);
        let s = be.default_scale();
        let a = be.encrypt(&[1.0, 2.0]).unwrap();
        let b = be.encrypt(&[0.5, 0.25]).unwrap();
        let p = be.mul_rs(&a, &b).unwrap();
        // Lower scale at the higher level: raised onto the other operand's scale.
        let lo = be.encrypt_at(&[1.0, 2.0], be.max_level(), s / 2.0).unwrap();
        let sum = be.add(&p, &lo).unwrap();
        assert_eq!(be.ledger(&sum), be.ledger(&p));
        close(&be.decrypt(&sum).unwrap(), &[1.5, 2.5], 1e-6);
        assert!(matches!(be.add(&p, &a), Err(MheError::ScaleMismatch(..))));
        let d = be.set_scale(&a, s * 100.0).unwrap();
        assert_eq!(be.scale(&d), s);
        close(&be.decrypt(&d).unwrap(), &[0.01, 0.02], 1e-7);
    }

    #[test]
    fn refresh_restores_level_and_applies_transform() {
        let be = backend(3);
        let v: Vec<f64> = (0..16).map(|i| (i as f64 - 8.0) / 8.0).collect();
        let c = be.encrypt(&v).unwrap();
        let low = be.drop_to(&be.mul_mask(&c, &vec![1.0; 16]).unwrap(), be.refresh_level());
        let out = be.refresh(&low, &LinearTransform::Rotation(3)).unwrap();
        assert_eq!(be.ledger(&out), Ledger { level: be.max_level(), scale: be.default_scale() });
        let want: Vec<f64> = (0..16).map(|i| v[(i + 3) % 16]).collect();
        close(&be.decrypt(&out).unwrap(), &want, 1e-6);
        let ev = be.instr().take_events();
        assert!(ev.iter().any(|e| e.kind == super::super::backend::EventKind::Refresh));
        if be.refresh_level() > 0 {
            let too_low = be.drop_to(&c, be.refresh_level() - 1);
            assert!(matches!(be.refresh(&too_low, &LinearTransform::Identity), Err(MheError::BootstrapConstraint { .. })));
        }
    }

    #[test]
    fn querier_switch() {
        let be = backend(2);
        let q = be.new_querier(5);
        let c = be.encrypt(&[0.75, -0.5]).unwrap();
        let sw = be.key_switch_to(&c, &q).unwrap();
        close(&be.querier_decrypt(&q, &sw).unwrap(), &[0.75, -0.5], 1e-6);
        let garbage = be.raw_decrypt(&sw).unwrap();
        assert!((garbage[0] - 0.75).abs() > 1.0);
    }
}
