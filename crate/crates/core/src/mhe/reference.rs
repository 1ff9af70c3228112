//! Noiseless oracle backend: slot vectors in `f64` carrying the same exact
//! (level, scale) ledger and the same constraint checks as the real backend.

use std::sync::atomic::{AtomicU64, Ordering};

use super::backend::{Instrumentation, RawOps};
use super::error::{MheError, Result};
use super::ledger::Ledger;
use super::params::RingParams;
use super::protocols::MaskSizing;
use super::real::default_delta;
use super::serialize;
use super::transform::LinearTransform;

/// Key owner: 0 is the collective key, anything else a querier.
#[derive(Clone, Debug, PartialEq)]
pub struct RefCt {
    pub slots: Vec<f64>,
    pub level: usize,
    pub scale: f64,
    owner: u64,
}

pub struct ReferenceBackend {
    params: RingParams,
    n_parties: usize,
    sizing: MaskSizing,
    next_querier: AtomicU64,
    instr: Instrumentation,
}

pub struct RefQuerier {
    id: u64,
}

impl ReferenceBackend {
    pub fn new(params: RingParams, n_parties: usize) -> Result<Self> {
        let delta = default_delta(&params);
        Self::with_delta(params, n_parties, delta)
    }

    pub fn with_delta(params: RingParams, n_parties: usize, delta: u32) -> Result<Self> {
        params.validate()?;
        if n_parties == 0 {
            return Err(MheError::ShareCount { expected: 1, got: 0 });
        }
        let sizing = MaskSizing { n_parties, delta, lambda: params.security_level };
        Ok(ReferenceBackend { params, n_parties, sizing, next_querier: AtomicU64::new(1), instr: Instrumentation::default() })
    }

    fn same_owner(a: &RefCt, b: &RefCt) -> Result<()> {
        if a.owner == b.owner {
            Ok(())
        } else {
            Err(MheError::WrongKey)
        }
    }

    fn padded(&self, v: &[f64]) -> Result<Vec<f64>> {
        let n = self.params.slots();
        if v.len() > n {
            return Err(MheError::TooManySlots { len: v.len(), slots: n });
        }
        let mut out = v.to_vec();
        out.resize(n, 0.0);
        Ok(out)
    }
}

impl RawOps for ReferenceBackend {
    type Ct = RefCt;
    type Querier = RefQuerier;

    fn params(&self) -> &RingParams {
        &self.params
    }
    fn n_parties(&self) -> usize {
        self.n_parties
    }
    fn sizing(&self) -> MaskSizing {
        self.sizing
    }
    fn instr(&self) -> &Instrumentation {
        &self.instr
    }
    fn raw_ledger(&self, c: &RefCt) -> Ledger {
        Ledger { level: c.level, scale: c.scale }
    }
    fn raw_relabel(&self, mut c: RefCt, scale: f64) -> RefCt {
        c.scale = scale;
        c
    }
    fn raw_encrypt(&self, v: &[f64], level: usize, scale: f64) -> Result<RefCt> {
        if level > self.params.max_level() {
            return Err(MheError::InvalidParams(format!("level {level} above the chain")));
        }
        Ok(RefCt { slots: self.padded(v)?, level, scale, owner: 0 })
    }
    fn raw_decrypt(&self, c: &RefCt) -> Result<Vec<f64>> {
        if c.owner != 0 {
            return Err(MheError::WrongKey);
        }
        Ok(c.slots.clone())
    }
    fn raw_add(&self, a: &RefCt, b: &RefCt) -> RefCt {
        debug_assert_eq!(a.level, b.level);
        debug_assert_eq!(a.owner, b.owner);
        RefCt { slots: a.slots.iter().zip(&b.slots).map(|(x, y)| x + y).collect(), ..a.clone() }
    }
    fn raw_neg(&self, a: &RefCt) -> RefCt {
        RefCt { slots: a.slots.iter().map(|x| -x).collect(), ..a.clone() }
    }
    fn raw_add_plain(&self, a: &RefCt, v: &[f64]) -> Result<RefCt> {
        let v = self.padded(v)?;
        Ok(RefCt { slots: a.slots.iter().zip(&v).map(|(x, y)| x + y).collect(), ..a.clone() })
    }
    fn raw_mul_plain(&self, a: &RefCt, v: &[f64], scale: f64) -> Result<RefCt> {
        let v = self.padded(v)?;
        Ok(RefCt { slots: a.slots.iter().zip(&v).map(|(x, y)| x * y).collect(), scale: a.scale * scale, ..a.clone() })
    }
    fn raw_mul_ct(&self, a: &RefCt, b: &RefCt) -> Result<RefCt> {
        Self::same_owner(a, b)?;
        Ok(RefCt { slots: a.slots.iter().zip(&b.slots).map(|(x, y)| x * y).collect(), scale: a.scale * b.scale, ..a.clone() })
    }
    fn raw_mul_scalar(&self, a: &RefCt, value: f64, _k: i128, label_factor: f64) -> RefCt {
        RefCt { slots: a.slots.iter().map(|x| x * value).collect(), scale: a.scale * label_factor, ..a.clone() }
    }
    fn raw_rescale(&self, a: &RefCt) -> Result<RefCt> {
        if a.level == 0 {
            return Err(MheError::LevelExhausted { needed: 1, level: 0 });
        }
        let q = self.params.modulus_chain[a.level] as f64;
        Ok(RefCt { level: a.level - 1, scale: a.scale / q, ..a.clone() })
    }
    fn raw_drop(&self, a: &RefCt, level: usize) -> RefCt {
        debug_assert!(level <= a.level);
        RefCt { level, ..a.clone() }
    }
    fn raw_rotate(&self, a: &RefCt, k: usize) -> Result<RefCt> {
        let n = a.slots.len();
        Ok(RefCt { slots: (0..n).map(|i| a.slots[(i + k) % n]).collect(), ..a.clone() })
    }
    fn raw_refresh(&self, a: &RefCt, phi: &LinearTransform) -> Result<(RefCt, usize)> {
        let need = self.sizing.min_level_for(&self.params);
        if need.map_or(true, |l| a.level < l) {
            return Err(MheError::BootstrapConstraint {
                level: a.level,
                log_q: self.params.log_q(a.level),
                log_bound: self.sizing.log2_modulus_bound(),
            });
        }
        let top = self.params.max_level();
        let out = RefCt { slots: phi.apply(&a.slots), level: top, scale: self.params.initial_scale, owner: a.owner };
        Ok((out, serialize::refresh_share_bytes(self.params.ring_dim, a.level, top)))
    }
    fn new_querier(&self, _seed: u64) -> RefQuerier {
        RefQuerier { id: self.next_querier.fetch_add(1, Ordering::Relaxed) }
    }
    fn raw_switch_to(&self, a: &RefCt, q: &RefQuerier) -> Result<(RefCt, usize)> {
        if a.owner != 0 {
            return Err(MheError::WrongKey);
        }
        Ok((RefCt { owner: q.id, ..a.clone() }, serialize::switch_share_bytes(self.params.ring_dim, a.level)))
    }
    fn querier_decrypt(&self, q: &RefQuerier, c: &RefCt) -> Result<Vec<f64>> {
        if c.owner != q.id {
            return Err(MheError::WrongKey);
        }
        Ok(c.slots.clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mhe::backend::Backend;
    use crate::mhe::params::ChainSpec;

    #[test]
    fn ledger_contract() {
        let be = ReferenceBackend::new(ChainSpec::toy(4, 5).build().unwrap(), 2).unwrap();
        let s = be.default_scale();
        let a = be.encrypt(&[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(be.ledger(&a), Ledger { level: 5, scale: s });
        let b = be.drop_to(&a, 3);
        assert_eq!(be.level(&be.add(&a, &b).unwrap()), 3);
        let m = be.mul_ct(&a, &a).unwrap();
        assert_eq!(be.scale(&m), s * s);
        let r = be.rescale(&m).unwrap();
        assert_eq!(be.ledger(&r), Ledger { level: 4, scale: s * s / be.prime(5) as f64 });
        let rot = be.rot_left(&a, 1).unwrap();
        assert_eq!(&be.decrypt(&rot).unwrap()[..4], &[2.0, 3.0, 4.0, 0.0]);
        assert_eq!(be.decrypt(&rot).unwrap()[7], 1.0);
    }

    #[test]
    fn querier_ownership() {
        let be = ReferenceBackend::new(ChainSpec::toy(4, 2).build().unwrap(), 3).unwrap();
        let q = be.new_querier(0);
        let c = be.encrypt(&[1.5]).unwrap();
        let sw = be.key_switch_to(&c, &q).unwrap();
        assert_eq!(be.querier_decrypt(&q, &sw).unwrap()[0], 1.5);
        assert_eq!(be.decrypt(&sw), Err(MheError::WrongKey));
    }
}
