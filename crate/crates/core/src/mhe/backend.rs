//! Backend abstraction: a real multiparty backend and a noiseless reference
//! share one interface. Ledger rules, counters and protocol events are
//! implemented once here on top of a small set of raw primitives, so both
//! backends carry bit-identical (level, scale) labels.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt::Debug;
use std::sync::Mutex;

use super::error::{MheError, Result};
use super::ledger::{mul_ledger, plan_add, rescale_ledger, scales_equal, AddPlan, Ledger};
use super::params::RingParams;
use super::serialize;
use super::protocols::MaskSizing;
use super::transform::LinearTransform;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Phase {
    Forward,
    Backward,
    Update,
    Other,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Tag {
    pub layer: usize,
    pub phase: Phase,
}

impl Default for Tag {
    fn default() -> Self {
        Tag { layer: 0, phase: Phase::Other }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    /// Key switches spent on slot rotations.
    pub rotations: u64,
    /// Rotations absorbed into a refresh transform instead of executed.
    pub embedded_rotations: u64,
    pub mul_ct: u64,
    pub mul_pt: u64,
    pub mul_const: u64,
    pub rescales: u64,
    pub bootstraps: u64,
}

impl Counts {
    pub fn add(&mut self, o: &Counts) {
        self.rotations += o.rotations;
        self.embedded_rotations += o.embedded_rotations;
        self.mul_ct += o.mul_ct;
        self.mul_pt += o.mul_pt;
        self.mul_const += o.mul_const;
        self.rescales += o.rescales;
        self.bootstraps += o.bootstraps;
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum EventKind {
    Refresh,
    Decrypt,
    KeySwitch,
}

/// A collective protocol run: every party but the aggregator ships one share.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProtocolEvent {
    pub kind: EventKind,
    pub level: usize,
    pub share_bytes: usize,
}

#[derive(Debug, Default)]
pub struct Instrumentation {
    state: Mutex<InstrState>,
}

#[derive(Debug, Default)]
struct InstrState {
    tag: Tag,
    counts: BTreeMap<Tag, Counts>,
    events: Vec<ProtocolEvent>,
}

impl Instrumentation {
    pub fn set_tag(&self, tag: Tag) -> Tag {
        let mut s = self.state.lock().unwrap();
        std::mem::replace(&mut s.tag, tag)
    }

    pub fn tag(&self) -> Tag {
        self.state.lock().unwrap().tag
    }

    pub fn bump(&self, f: impl FnOnce(&mut Counts)) {
        let mut s = self.state.lock().unwrap();
        let tag = s.tag;
        f(s.counts.entry(tag).or_default());
    }

    pub fn record(&self, e: ProtocolEvent) {
        self.state.lock().unwrap().events.push(e);
    }

    pub fn take_events(&self) -> Vec<ProtocolEvent> {
        std::mem::take(&mut self.state.lock().unwrap().events)
    }

    pub fn by_tag(&self) -> BTreeMap<Tag, Counts> {
        self.state.lock().unwrap().counts.clone()
    }

    pub fn total(&self) -> Counts {
        let mut t = Counts::default();
        for c in self.state.lock().unwrap().counts.values() {
            t.add(c);
        }
        t
    }

    pub fn reset(&self) {
        let mut s = self.state.lock().unwrap();
        s.counts.clear();
        s.events.clear();
    }
}

/// Decomposes a left rotation by `k` into key-switched steps of `±2^j`,
/// choosing the direction with fewer set bits. Each step is one key switch.
pub fn rotation_steps(k: usize, slots: usize) -> Vec<usize> {
    let k = k % slots;
    let right = (slots - k) % slots;
    let bits = |x: usize| (0..usize::BITS).filter(move |b| x >> b & 1 == 1).map(|b| 1usize << b);
    if k.count_ones() <= right.count_ones() {
        bits(k).collect()
    } else {
        bits(right).map(|r| slots - r).collect()
    }
}

/// Left rotation offsets whose keys the real backend generates: `±2^j`.
pub fn default_rotation_offsets(slots: usize) -> Vec<usize> {
    let mut out = Vec::new();
    let mut p = 1;
    while p < slots {
        out.push(p);
        out.push(slots - p);
        p <<= 1;
    }
    out.sort_unstable();
    out.dedup();
    out
}

/// Primitive operations each backend provides. They never touch counters and
/// never decide labels beyond what the caller passes in.
pub trait RawOps {
    type Ct: Clone + Debug + Send + Sync;
    type Querier;

    fn params(&self) -> &RingParams;
    fn n_parties(&self) -> usize;
    fn sizing(&self) -> MaskSizing;
    fn instr(&self) -> &Instrumentation;

    fn raw_ledger(&self, c: &Self::Ct) -> Ledger;
    fn raw_relabel(&self, c: Self::Ct, scale: f64) -> Self::Ct;
    fn raw_encrypt(&self, v: &[f64], level: usize, scale: f64) -> Result<Self::Ct>;
    fn raw_decrypt(&self, c: &Self::Ct) -> Result<Vec<f64>>;
    /// Operands share a level.
    fn raw_add(&self, a: &Self::Ct, b: &Self::Ct) -> Self::Ct;
    fn raw_neg(&self, a: &Self::Ct) -> Self::Ct;
    /// Adds `v` encoded at `a`'s level and scale.
    fn raw_add_plain(&self, a: &Self::Ct, v: &[f64]) -> Result<Self::Ct>;
    fn raw_mul_plain(&self, a: &Self::Ct, v: &[f64], scale: f64) -> Result<Self::Ct>;
    /// Operands share a level; result relinearized, not rescaled.
    fn raw_mul_ct(&self, a: &Self::Ct, b: &Self::Ct) -> Result<Self::Ct>;
    /// Slotwise scaling by `value`, realized with the integer `k` where the
    /// backend works on integers; the label is multiplied by `label_factor`.
    fn raw_mul_scalar(&self, a: &Self::Ct, value: f64, k: i128, label_factor: f64) -> Self::Ct;
    fn raw_rescale(&self, a: &Self::Ct) -> Result<Self::Ct>;
    fn raw_drop(&self, a: &Self::Ct, level: usize) -> Self::Ct;
    fn raw_rotate(&self, a: &Self::Ct, k: usize) -> Result<Self::Ct>;
    /// Refresh to `(L, S)` applying `phi`; returns per-party share size in bytes.
    fn raw_refresh(&self, a: &Self::Ct, phi: &LinearTransform) -> Result<(Self::Ct, usize)>;
    /// Fresh single-key recipient for oblivious prediction.
    fn new_querier(&self, seed: u64) -> Self::Querier;
    /// Collective switch to the querier's key; returns per-party share size in bytes.
    fn raw_switch_to(&self, a: &Self::Ct, q: &Self::Querier) -> Result<(Self::Ct, usize)>;
    /// Decryption by the querier alone.
    fn querier_decrypt(&self, q: &Self::Querier, c: &Self::Ct) -> Result<Vec<f64>>;
}

/// Ledger-checked, instrumented operations.
pub trait Backend: RawOps {
    fn slots(&self) -> usize {
        self.params().slots()
    }
    fn max_level(&self) -> usize {
        self.params().max_level()
    }
    fn default_scale(&self) -> f64 {
        self.params().initial_scale
    }
    fn prime(&self, level: usize) -> u64 {
        self.params().modulus_chain[level]
    }
    fn level(&self, c: &Self::Ct) -> usize {
        self.raw_ledger(c).level
    }
    fn scale(&self, c: &Self::Ct) -> f64 {
        self.raw_ledger(c).scale
    }
    fn ledger(&self, c: &Self::Ct) -> Ledger {
        self.raw_ledger(c)
    }
    /// Lowest level at which a refresh satisfies the masking constraint.
    fn refresh_level(&self) -> usize {
        self.sizing().min_level_for(self.params()).unwrap_or(self.max_level() + 1)
    }

    /// Serialized size of a ciphertext at `level`.
    fn ciphertext_bytes(&self, level: usize) -> usize {
        serialize::ciphertext_bytes(self.params().ring_dim, level)
    }

    fn encrypt(&self, v: &[f64]) -> Result<Self::Ct> {
        self.raw_encrypt(v, self.max_level(), self.default_scale())
    }
    fn encrypt_at(&self, v: &[f64], level: usize, scale: f64) -> Result<Self::Ct> {
        self.raw_encrypt(v, level, scale)
    }
    fn decrypt(&self, c: &Self::Ct) -> Result<Vec<f64>> {
        let out = self.raw_decrypt(c)?;
        self.instr().record(ProtocolEvent {
            kind: EventKind::Decrypt,
            level: self.level(c),
            share_bytes: serialize::decrypt_share_bytes(self.params().ring_dim, self.level(c)),
        });
        Ok(out)
    }

    fn drop_to(&self, a: &Self::Ct, level: usize) -> Self::Ct {
        if self.level(a) == level {
            a.clone()
        } else {
            self.raw_drop(a, level)
        }
    }

    fn rescale(&self, a: &Self::Ct) -> Result<Self::Ct> {
        let l = rescale_ledger(self.ledger(a), &self.params().modulus_chain)?;
        self.instr().bump(|c| c.rescales += 1);
        let out = self.raw_rescale(a)?;
        Ok(self.raw_relabel(out, l.scale))
    }

    fn align(&self, a: &Self::Ct, b: &Self::Ct) -> Result<(Self::Ct, Self::Ct, f64)> {
        match plan_add(self.ledger(a), self.ledger(b), &self.params().modulus_chain)? {
            AddPlan::Direct { level, scale } => Ok((self.drop_to(a, level), self.drop_to(b, level), scale)),
            AddPlan::Raise { raise, factor, level, scale } => {
                let lo = if raise == 0 { a } else { b };
                let hi = if raise == 0 { b } else { a };
                let up = self.raw_mul_scalar(lo, 1.0, factor, factor as f64);
                let down = self.raw_rescale(&up)?;
                self.instr().bump(|c| {
                    c.mul_const += 1;
                    c.rescales += 1;
                });
                let lo2 = self.drop_to(&self.raw_relabel(down, scale), level);
                let hi2 = self.drop_to(hi, level);
                Ok(if raise == 0 { (lo2, hi2, scale) } else { (hi2, lo2, scale) })
            }
        }
    }

    fn add(&self, a: &Self::Ct, b: &Self::Ct) -> Result<Self::Ct> {
        let (x, y, scale) = self.align(a, b)?;
        Ok(self.raw_relabel(self.raw_add(&x, &y), scale))
    }
    fn sub(&self, a: &Self::Ct, b: &Self::Ct) -> Result<Self::Ct> {
        let (x, y, scale) = self.align(a, b)?;
        Ok(self.raw_relabel(self.raw_add(&x, &self.raw_neg(&y)), scale))
    }
    fn neg(&self, a: &Self::Ct) -> Self::Ct {
        self.raw_neg(a)
    }
    fn add_plain(&self, a: &Self::Ct, v: &[f64]) -> Result<Self::Ct> {
        self.check_len(v)?;
        self.raw_add_plain(a, v)
    }
    fn sub_plain(&self, a: &Self::Ct, v: &[f64]) -> Result<Self::Ct> {
        let neg: Vec<f64> = v.iter().map(|x| -x).collect();
        self.add_plain(a, &neg)
    }
    /// `v - a` for a plaintext `v`.
    fn plain_sub(&self, v: &[f64], a: &Self::Ct) -> Result<Self::Ct> {
        self.add_plain(&self.raw_neg(a), v)
    }
    fn check_len(&self, v: &[f64]) -> Result<()> {
        if v.len() > self.slots() {
            Err(MheError::TooManySlots { len: v.len(), slots: self.slots() })
        } else {
            Ok(())
        }
    }

    /// Plaintext product without rescale; the plaintext is encoded at `pt_scale`.
    fn mul_plain(&self, a: &Self::Ct, v: &[f64], pt_scale: f64) -> Result<Self::Ct> {
        self.check_len(v)?;
        self.instr().bump(|c| c.mul_pt += 1);
        self.raw_mul_plain(a, v, pt_scale)
    }
    /// Plaintext product followed by a rescale, with the plaintext encoded at
    /// the current prime so the scale is preserved (masks, selectors).
    fn mul_mask(&self, a: &Self::Ct, v: &[f64]) -> Result<Self::Ct> {
        let q = self.prime(self.level(a)) as f64;
        let m = self.mul_plain(a, v, q)?;
        let out = self.rescale(&m)?;
        Ok(self.raw_relabel(out, self.scale(a)))
    }
    /// Relinearized ciphertext product without rescale.
    fn mul_ct(&self, a: &Self::Ct, b: &Self::Ct) -> Result<Self::Ct> {
        let l = mul_ledger(self.ledger(a), self.ledger(b));
        let x = self.drop_to(a, l.level);
        let y = self.drop_to(b, l.level);
        self.instr().bump(|c| c.mul_ct += 1);
        let out = self.raw_mul_ct(&x, &y)?;
        Ok(self.raw_relabel(out, l.scale))
    }
    /// Ciphertext product, then rescale.
    fn mul_rs(&self, a: &Self::Ct, b: &Self::Ct) -> Result<Self::Ct> {
        self.rescale(&self.mul_ct(a, b)?)
    }
    /// Multiplies every slot by `value` and rescales; the result carries exactly `target_scale`.
    fn mul_const_to(&self, a: &Self::Ct, value: f64, target_scale: f64) -> Result<Self::Ct> {
        let l = self.ledger(a);
        if l.level == 0 {
            return Err(MheError::LevelExhausted { needed: 1, level: 0 });
        }
        let q = self.prime(l.level) as f64;
        let delta = target_scale * q / l.scale;
        let k = (value * delta).round() as i128;
        self.instr().bump(|c| c.mul_const += 1);
        let m = self.raw_mul_scalar(a, value, k, delta);
        let out = self.rescale(&m)?;
        Ok(self.raw_relabel(out, target_scale))
    }
    /// Multiplies every slot by `f`, spending one level; output carries the default scale.
    fn scale_by(&self, a: &Self::Ct, f: f64) -> Result<Self::Ct> {
        self.mul_const_to(a, f, self.default_scale())
    }
    /// Relabels to scale `target` (dividing the message by `target / S_c`) and
    /// re-normalizes to the default scale; spends one level.
    fn set_scale(&self, a: &Self::Ct, target: f64) -> Result<Self::Ct> {
        self.scale_by(a, self.scale(a) / target)
    }

    fn rot_left(&self, a: &Self::Ct, k: usize) -> Result<Self::Ct> {
        let mut out = a.clone();
        for step in rotation_steps(k, self.slots()) {
            self.instr().bump(|c| c.rotations += 1);
            out = self.raw_rotate(&out, step)?;
        }
        Ok(out)
    }
    fn rot_right(&self, a: &Self::Ct, k: usize) -> Result<Self::Ct> {
        let s = self.slots();
        self.rot_left(a, (s - k % s) % s)
    }

    /// Collective refresh to `(L, S)` with `phi` applied to the slots.
    fn refresh(&self, a: &Self::Ct, phi: &LinearTransform) -> Result<Self::Ct> {
        let l = self.level(a);
        let need = self.refresh_level();
        if l < need {
            let s = self.sizing();
            return Err(MheError::BootstrapConstraint {
                level: l,
                log_q: self.params().log_q(l),
                log_bound: s.log2_modulus_bound(),
            });
        }
        let embedded = phi.rotation_count(self.slots()) as u64;
        self.instr().bump(|c| {
            c.bootstraps += 1;
            c.embedded_rotations += embedded;
        });
        let (out, share_bytes) = self.raw_refresh(a, phi)?;
        self.instr().record(ProtocolEvent { kind: EventKind::Refresh, level: l, share_bytes });
        debug_assert!(scales_equal(self.scale(&out), self.default_scale()));
        Ok(out)
    }
    /// Re-encrypts under the querier's key with every party's participation.
    fn key_switch_to(&self, a: &Self::Ct, q: &Self::Querier) -> Result<Self::Ct> {
        let (out, share_bytes) = self.raw_switch_to(a, q)?;
        self.instr().record(ProtocolEvent { kind: EventKind::KeySwitch, level: self.level(a), share_bytes });
        Ok(out)
    }
    fn bootstrap(&self, a: &Self::Ct) -> Result<Self::Ct> {
        self.refresh(a, &LinearTransform::Identity)
    }
}

impl<T: RawOps> Backend for T {}
