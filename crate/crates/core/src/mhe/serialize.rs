//! Length-prefixed binary wire format.
//!
//! Envelope: 4-byte magic, version byte, kind byte, u32 payload length, payload.
//! Integers are little-endian. A polynomial is `u32 n, u32 limbs, u8 special,
//! u8 ntt` followed by `limbs * n` u64 residues.

use std::collections::BTreeMap;

use super::ciphertext::Ciphertext;
use super::error::{MheError, Result};
use super::keys::{CollectiveKeys, PublicKey, SwitchingKey};
use super::params::RingParams;
use super::protocols::{RefreshShare, SwitchShare};
use super::ring::RnsPoly;

pub const MAGIC: [u8; 4] = *b"FHEW";
pub const VERSION: u8 = 1;
pub const HEADER_BYTES: usize = 10;
const POLY_HEADER_BYTES: usize = 10;
const CT_HEADER_BYTES: usize = 16;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u8)]
pub enum Kind {
    Params = 1,
    Poly = 2,
    Ciphertext = 3,
    PublicKey = 4,
    SwitchingKey = 5,
    CollectiveKeys = 6,
    RefreshShare = 7,
    SwitchShare = 8,
}

pub fn poly_bytes(n: usize, limbs: usize) -> usize {
    POLY_HEADER_BYTES + limbs * n * 8
}

/// Serialized size of a relinearized ciphertext at `level`.
pub fn ciphertext_bytes(n: usize, level: usize) -> usize {
    HEADER_BYTES + CT_HEADER_BYTES + 2 * poly_bytes(n, level + 1)
}

/// One party's refresh share: `h0` at the input level, `h1` at the top level.
pub fn refresh_share_bytes(n: usize, level: usize, top: usize) -> usize {
    HEADER_BYTES + poly_bytes(n, level + 1) + poly_bytes(n, top + 1)
}

pub fn decrypt_share_bytes(n: usize, level: usize) -> usize {
    HEADER_BYTES + poly_bytes(n, level + 1)
}

pub fn switch_share_bytes(n: usize, level: usize) -> usize {
    HEADER_BYTES + 2 * poly_bytes(n, level + 1)
}

#[derive(Default)]
struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, x: u8) {
        self.0.push(x);
    }
    fn u32(&mut self, x: usize) {
        self.0.extend_from_slice(&(x as u32).to_le_bytes());
    }
    fn u64(&mut self, x: u64) {
        self.0.extend_from_slice(&x.to_le_bytes());
    }
    fn f64(&mut self, x: f64) {
        self.0.extend_from_slice(&x.to_le_bytes());
    }
    fn poly(&mut self, p: &RnsPoly) {
        let n = p.limbs.first().map_or(0, |l| l.len());
        self.u32(n);
        self.u32(p.limbs.len());
        self.u8(p.special as u8);
        self.u8(p.ntt as u8);
        for limb in &p.limbs {
            for &x in limb {
                self.u64(x);
            }
        }
    }
    fn polys(&mut self, ps: &[RnsPoly]) {
        self.u32(ps.len());
        for p in ps {
            self.poly(p);
        }
    }
    fn seal(self, kind: Kind) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_BYTES + self.0.len());
        out.extend_from_slice(&MAGIC);
        out.push(VERSION);
        out.push(kind as u8);
        out.extend_from_slice(&(self.0.len() as u32).to_le_bytes());
        out.extend_from_slice(&self.0);
        out
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

fn bad(msg: &str) -> MheError {
    MheError::Serialization(msg.to_string())
}

impl<'a> Reader<'a> {
    fn open(buf: &'a [u8], kind: Kind) -> Result<Self> {
        if buf.len() < HEADER_BYTES || buf[..4] != MAGIC {
            return Err(bad("bad magic"));
        }
        if buf[4] != VERSION {
            return Err(bad("unsupported version"));
        }
        if buf[5] != kind as u8 {
            return Err(bad("unexpected kind"));
        }
        let len = u32::from_le_bytes(buf[6..10].try_into().unwrap()) as usize;
        if buf.len() != HEADER_BYTES + len {
            return Err(bad("length prefix mismatch"));
        }
        Ok(Reader { buf: &buf[HEADER_BYTES..], pos: 0 })
    }
    fn take(&mut self, k: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(k).filter(|&e| e <= self.buf.len()).ok_or_else(|| bad("truncated"))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn poly(&mut self) -> Result<RnsPoly> {
        let n = self.u32()?;
        let count = self.u32()?;
        let special = self.u8()? != 0;
        let ntt = self.u8()? != 0;
        if count.saturating_mul(n).saturating_mul(8) > self.buf.len() - self.pos {
            return Err(bad("truncated"));
        }
        let mut limbs = Vec::with_capacity(count);
        for _ in 0..count {
            limbs.push((0..n).map(|_| self.u64()).collect::<Result<Vec<u64>>>()?);
        }
        Ok(RnsPoly { limbs, special, ntt })
    }
    fn polys(&mut self) -> Result<Vec<RnsPoly>> {
        let k = self.u32()?;
        (0..k).map(|_| self.poly()).collect()
    }
    fn finish(self) -> Result<()> {
        if self.pos == self.buf.len() {
            Ok(())
        } else {
            Err(bad("trailing bytes"))
        }
    }
}

/// Values that cross the simulated wire.
pub trait Wire: Sized {
    const KIND: Kind;
    fn to_bytes(&self) -> Vec<u8>;
    fn from_bytes(buf: &[u8]) -> Result<Self>;
}

impl Wire for RingParams {
    const KIND: Kind = Kind::Params;
    fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::default();
        w.0 = serde_json::to_vec(self).expect("params serialize");
        w.seal(Self::KIND)
    }
    fn from_bytes(buf: &[u8]) -> Result<Self> {
        let r = Reader::open(buf, Self::KIND)?;
        serde_json::from_slice(r.buf).map_err(|e| bad(&e.to_string()))
    }
}

impl Wire for RnsPoly {
    const KIND: Kind = Kind::Poly;
    fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::default();
        w.poly(self);
        w.seal(Self::KIND)
    }
    fn from_bytes(buf: &[u8]) -> Result<Self> {
        let mut r = Reader::open(buf, Self::KIND)?;
        let p = r.poly()?;
        r.finish()?;
        Ok(p)
    }
}

impl Wire for Ciphertext {
    const KIND: Kind = Kind::Ciphertext;
    fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::default();
        w.u32(self.level);
        w.f64(self.scale);
        w.polys(&self.parts);
        w.seal(Self::KIND)
    }
    fn from_bytes(buf: &[u8]) -> Result<Self> {
        let mut r = Reader::open(buf, Self::KIND)?;
        let level = r.u32()?;
        let scale = r.f64()?;
        let parts = r.polys()?;
        r.finish()?;
        Ok(Ciphertext { parts, level, scale })
    }
}

impl Wire for PublicKey {
    const KIND: Kind = Kind::PublicKey;
    fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::default();
        w.poly(&self.b);
        w.poly(&self.a);
        w.seal(Self::KIND)
    }
    fn from_bytes(buf: &[u8]) -> Result<Self> {
        let mut r = Reader::open(buf, Self::KIND)?;
        let (b, a) = (r.poly()?, r.poly()?);
        r.finish()?;
        Ok(PublicKey { b, a })
    }
}

fn write_swk(w: &mut Writer, k: &SwitchingKey) {
    w.polys(&k.b);
    w.polys(&k.a);
}

fn read_swk(r: &mut Reader) -> Result<SwitchingKey> {
    Ok(SwitchingKey { b: r.polys()?, a: r.polys()? })
}

impl Wire for SwitchingKey {
    const KIND: Kind = Kind::SwitchingKey;
    fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::default();
        write_swk(&mut w, self);
        w.seal(Self::KIND)
    }
    fn from_bytes(buf: &[u8]) -> Result<Self> {
        let mut r = Reader::open(buf, Self::KIND)?;
        let k = read_swk(&mut r)?;
        r.finish()?;
        Ok(k)
    }
}

impl Wire for CollectiveKeys {
    const KIND: Kind = Kind::CollectiveKeys;
    fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::default();
        w.u32(self.n_parties);
        w.poly(&self.pk.b);
        w.poly(&self.pk.a);
        w.u8(self.rlk.is_some() as u8);
        if let Some(k) = &self.rlk {
            write_swk(&mut w, k);
        }
        w.u32(self.rot.len());
        for (g, k) in &self.rot {
            w.u32(*g);
            write_swk(&mut w, k);
        }
        w.seal(Self::KIND)
    }
    fn from_bytes(buf: &[u8]) -> Result<Self> {
        let mut r = Reader::open(buf, Self::KIND)?;
        let n_parties = r.u32()?;
        let pk = PublicKey { b: r.poly()?, a: r.poly()? };
        let rlk = if r.u8()? != 0 { Some(read_swk(&mut r)?) } else { None };
        let mut rot = BTreeMap::new();
        for _ in 0..r.u32()? {
            let g = r.u32()?;
            rot.insert(g, read_swk(&mut r)?);
        }
        r.finish()?;
        Ok(CollectiveKeys { n_parties, pk, rlk, rot })
    }
}

impl Wire for RefreshShare {
    const KIND: Kind = Kind::RefreshShare;
    fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::default();
        w.poly(&self.h0);
        w.poly(&self.h1);
        w.seal(Self::KIND)
    }
    fn from_bytes(buf: &[u8]) -> Result<Self> {
        let mut r = Reader::open(buf, Self::KIND)?;
        let (h0, h1) = (r.poly()?, r.poly()?);
        r.finish()?;
        Ok(RefreshShare { h0, h1 })
    }
}

impl Wire for SwitchShare {
    const KIND: Kind = Kind::SwitchShare;
    fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::default();
        w.poly(&self.h0);
        w.poly(&self.h1);
        w.seal(Self::KIND)
    }
    fn from_bytes(buf: &[u8]) -> Result<Self> {
        let mut r = Reader::open(buf, Self::KIND)?;
        let (h0, h1) = (r.poly()?, r.poly()?);
        r.finish()?;
        Ok(SwitchShare { h0, h1 })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mhe::encoding::Encoder;
    use crate::mhe::eval::{encode, encrypt};
    use crate::mhe::keys::{d_key_gen, sec_key_gen, Crs};
    use crate::mhe::params::ChainSpec;
    use crate::mhe::ring::RnsContext;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    #[test]
    fn round_trips_and_sizes() {
        let ctx = RnsContext::new(ChainSpec::toy(4, 2).build().unwrap());
        let enc = Encoder::new(ctx.n());
        let shares = sec_key_gen(&ctx, 2, 1).unwrap();
        let keys = d_key_gen(&ctx, &shares, &[enc.galois_element(1)], &Crs { seed: 3 }, 4).unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(5);
        let c = encrypt(&ctx, &keys.pk, &encode(&ctx, &enc, &[1.0, 2.0], 1, 1e9).unwrap(), &mut rng);
        let bytes = c.to_bytes();
        assert_eq!(bytes.len(), ciphertext_bytes(16, 1));
        assert_eq!(Ciphertext::from_bytes(&bytes).unwrap(), c);
        let kb = keys.to_bytes();
        let back = CollectiveKeys::from_bytes(&kb).unwrap();
        assert_eq!(back.pk, keys.pk);
        assert_eq!(back.rlk, keys.rlk);
        assert_eq!(back.rot, keys.rot);
        assert_eq!(RingParams::from_bytes(&ctx.params.to_bytes()).unwrap(), ctx.params);
    }

    #[test]
    fn rejects_corrupt_envelopes() {
        let p = RnsPoly { limbs: vec![vec![1, 2]], special: false, ntt: true };
        let mut b = p.to_bytes();
        assert_eq!(RnsPoly::from_bytes(&b).unwrap(), p);
        assert!(Ciphertext::from_bytes(&b).is_err());
        b.push(0);
        assert!(RnsPoly::from_bytes(&b).is_err());
        b.pop();
        b[0] = b'X';
        assert!(RnsPoly::from_bytes(&b).is_err());
        assert!(RnsPoly::from_bytes(&b[..5]).is_err());
    }
}
