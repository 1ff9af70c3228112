//! Level/scale bookkeeping shared by every backend.

use serde::{Deserialize, Serialize};

use super::error::{MheError, Result};

/// Relative tolerance under which two scales are treated as equal.
pub const SCALE_EQ_REL: f64 = 1.0 / (1u64 << 40) as f64;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ledger {
    pub level: usize,
    pub scale: f64,
}

pub fn scales_equal(a: f64, b: f64) -> bool {
    (a - b).abs() <= SCALE_EQ_REL * a.abs().max(b.abs())
}

/// How two operands are brought to a common (level, scale) before adding.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum AddPlan {
    /// Scales agree; drop both to `level`.
    Direct { level: usize, scale: f64 },
    /// Operand `raise` (0 or 1) has the lower scale and a spare level: multiply it
    /// by `factor`, rescale, relabel to `scale`, then drop both to `level`.
    Raise { raise: usize, factor: i128, level: usize, scale: f64 },
}

/// `primes[i]` is `q_i`.
pub fn plan_add(a: Ledger, b: Ledger, primes: &[u64]) -> Result<AddPlan> {
    let level = a.level.min(b.level);
    if scales_equal(a.scale, b.scale) {
        return Ok(AddPlan::Direct { level, scale: a.scale.max(b.scale) });
    }
    let (raise, lo, hi) = if a.scale < b.scale { (0, a, b) } else { (1, b, a) };
    if lo.level > hi.level {
        let q = primes[lo.level] as f64;
        let factor = (q * hi.scale / lo.scale).round() as i128;
        Ok(AddPlan::Raise { raise, factor, level, scale: hi.scale })
    } else {
        Err(MheError::ScaleMismatch(a.scale, b.scale))
    }
}

pub fn mul_ledger(a: Ledger, b: Ledger) -> Ledger {
    Ledger { level: a.level.min(b.level), scale: a.scale * b.scale }
}

pub fn rescale_ledger(a: Ledger, primes: &[u64]) -> Result<Ledger> {
    if a.level == 0 {
        return Err(MheError::LevelExhausted { needed: 1, level: 0 });
    }
    Ok(Ledger { level: a.level - 1, scale: a.scale / primes[a.level] as f64 })
}

#[cfg(test)]
mod tests {
    use super::*;

    const PRIMES: [u64; 4] = [1 << 50, 4294967681, 4294966657, 4294968193];

    #[test]
    fn add_levels_and_scales() {
        let s = 2f64.powi(32);
        let p = plan_add(Ledger { level: 3, scale: s }, Ledger { level: 1, scale: s }, &PRIMES).unwrap();
        assert_eq!(p, AddPlan::Direct { level: 1, scale: s });
        let p = plan_add(Ledger { level: 3, scale: s }, Ledger { level: 1, scale: 2.0 * s }, &PRIMES).unwrap();
        match p {
            AddPlan::Raise { raise, level, scale, factor } => {
                assert_eq!((raise, level, scale), (0, 1, 2.0 * s));
                assert_eq!(factor, 2 * PRIMES[3] as i128);
            }
            _ => panic!(),
        }
        assert!(plan_add(Ledger { level: 1, scale: s }, Ledger { level: 3, scale: 2.0 * s }, &PRIMES).is_err());
    }

    #[test]
    fn multiplication_and_rescale() {
        let a = Ledger { level: 3, scale: 2f64.powi(30) };
        let b = Ledger { level: 2, scale: 2f64.powi(30) };
        let m = mul_ledger(a, b);
        assert_eq!(m, Ledger { level: 2, scale: 2f64.powi(60) });
        let r = rescale_ledger(m, &PRIMES).unwrap();
        assert_eq!(r.level, 1);
        assert_eq!(r.scale, 2f64.powi(60) / PRIMES[2] as f64);
        assert!(rescale_ledger(Ledger { level: 0, scale: 1.0 }, &PRIMES).is_err());
    }
}
