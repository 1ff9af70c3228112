//! Polynomial stand-ins for non-linear functions and their encrypted evaluation.

pub mod bsgs;
pub mod fit;
pub mod maxpool;

use crate::mhe::backend::Backend;
use crate::mhe::error::{MheError, Result};

use bsgs::Arith;
use fit::{ApproxPoly, Basis};

/// Ciphertext arithmetic over any backend. Every product is rescaled.
pub struct CtArith<'a, B: Backend>(pub &'a B);

impl<B: Backend> Arith for CtArith<'_, B> {
    type V = B::Ct;
    type E = MheError;
    fn level(&self, x: &B::Ct) -> usize {
        self.0.level(x)
    }
    fn scale(&self, x: &B::Ct) -> f64 {
        self.0.scale(x)
    }
    fn prime(&self, level: usize) -> f64 {
        self.0.prime(level) as f64
    }
    fn mul(&self, a: &B::Ct, b: &B::Ct) -> Result<B::Ct> {
        self.0.mul_rs(a, b)
    }
    fn mul_const_to(&self, x: &B::Ct, c: f64, target: f64) -> Result<B::Ct> {
        self.0.mul_const_to(x, c, target)
    }
    fn add(&self, a: &B::Ct, b: &B::Ct) -> Result<B::Ct> {
        self.0.add(a, b)
    }
    fn add_const(&self, x: &B::Ct, c: f64) -> Result<B::Ct> {
        self.0.add_plain(x, &vec![c; self.0.slots()])
    }
}

/// Levels an encrypted evaluation of `p` consumes. Chebyshev forms on an
/// interval other than `[-1, 1]` pay one more for the affine change of variable.
pub fn levels_needed(p: &ApproxPoly) -> usize {
    let extra = usize::from(p.basis == Basis::Chebyshev && p.interval != (-1.0, 1.0));
    bsgs::depth(p.degree()) + extra
}

/// `p(x)` slot-wise, returned at the default scale. Fails with
/// `LevelExhausted` if `x` lacks the levels; the caller bootstraps first.
pub fn eval_encrypted<B: Backend>(be: &B, x: &B::Ct, p: &ApproxPoly) -> Result<B::Ct> {
    eval_inner(be, x, p, true)
}

/// `p(x) - p(0)`: zero slots stay zero, so padding survives the activation.
pub fn eval_encrypted_noconst<B: Backend>(be: &B, x: &B::Ct, p: &ApproxPoly) -> Result<B::Ct> {
    assert_eq!(p.basis, Basis::Power, "constant stripping needs power coefficients");
    eval_inner(be, x, p, false)
}

fn eval_inner<B: Backend>(be: &B, x: &B::Ct, p: &ApproxPoly, with_const: bool) -> Result<B::Ct> {
    let need = levels_needed(p);
    if be.level(x) < need {
        return Err(MheError::LevelExhausted { needed: need, level: be.level(x) });
    }
    let ar = CtArith(be);
    let s = be.default_scale();
    let t = match p.basis {
        Basis::Chebyshev if p.interval != (-1.0, 1.0) => {
            let (a, b) = p.interval;
            let y = be.mul_const_to(x, 2.0 / (b - a), s)?;
            be.add_plain(&y, &vec![-(a + b) / (b - a); be.slots()])?
        }
        _ => x.clone(),
    };
    bsgs::evaluate(&ar, &t, &p.coeffs, p.basis, s, with_const)
}

/// Plain counterpart of [`eval_inner`] applying the identical operation order.
pub fn eval_plain(x: f64, p: &ApproxPoly, with_const: bool) -> f64 {
    let t = match p.basis {
        Basis::Chebyshev if p.interval != (-1.0, 1.0) => {
            let (a, b) = p.interval;
            x * (2.0 / (b - a)) + -(a + b) / (b - a)
        }
        _ => x,
    };
    match bsgs::evaluate(&bsgs::PlainArith, &t, &p.coeffs, p.basis, 1.0, with_const) {
        Ok(v) => v,
        Err(e) => match e {},
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mhe::params::ChainSpec;
    use crate::mhe::real::RealBackend;
    use crate::mhe::backend::RawOps;
    use crate::mhe::reference::ReferenceBackend;
    use fit::{fit_least_squares, Target};

    fn dense(d: usize) -> ApproxPoly {
        let coeffs: Vec<f64> = (0..=d).map(|k| if k == 0 { 0.3 } else { 0.8 / (k * k) as f64 }).collect();
        ApproxPoly { coeffs, basis: Basis::Power, interval: (-1.0, 1.0), target: Target::Identity, fit_error: 0.0 }
    }

    #[test]
    fn depth_is_exact_and_counts_match_formula() {
        let be = ReferenceBackend::new(ChainSpec::toy(5, 7).build().unwrap(), 2).unwrap();
        let x = be.encrypt(&[0.5, -0.25]).unwrap();
        for d in 1..=31 {
            be.instr().reset();
            let p = dense(d);
            let y = eval_encrypted(&be, &x, &p).unwrap();
            assert_eq!(be.level(&y), 7 - bsgs::depth(d), "degree {d}");
            assert!((be.scale(&y) / be.default_scale() - 1.0).abs() < 1e-9);
            let got = be.decrypt(&y).unwrap();
            assert_eq!(got[0], eval_plain(0.5, &p, true));
            if [3, 5, 7, 15, 31].contains(&d) {
                assert_eq!(be.instr().total().mul_ct, bsgs::mul_ct_count(d) as u64, "degree {d}");
            }
        }
    }

    #[test]
    fn noconst_keeps_padding_zero() {
        let be = ReferenceBackend::new(ChainSpec::toy(4, 5).build().unwrap(), 2).unwrap();
        let x = be.encrypt(&[0.5]).unwrap();
        let y = eval_encrypted_noconst(&be, &x, &dense(7)).unwrap();
        let v = be.decrypt(&y).unwrap();
        assert_eq!(v[3], 0.0);
        assert!((v[0] - (dense(7).eval(0.5) - 0.3)).abs() < 1e-12);
    }

    #[test]
    fn real_backend_tracks_plain_values() {
        let be = RealBackend::new(ChainSpec::toy(5, 6).build().unwrap(), 2, 7).unwrap();
        let xs = [0.9, -0.6, 0.1, -0.95];
        let x = be.encrypt(&xs).unwrap();
        for p in [dense(7), dense(15), fit_least_squares(Target::Sigmoid, (-1.0, 1.0), 9).unwrap()] {
            let y = eval_encrypted(&be, &x, &p).unwrap();
            let got = be.decrypt(&y).unwrap();
            for (i, &v) in xs.iter().enumerate() {
                assert!((got[i] - p.eval(v)).abs() < 1e-4, "{} vs {}", got[i], p.eval(v));
            }
        }
    }

    #[test]
    fn chebyshev_on_shifted_interval() {
        let be = ReferenceBackend::new(ChainSpec::toy(4, 7).build().unwrap(), 2).unwrap();
        let p = fit::fit_chebyshev(Target::Sqrt, (0.0, 1.0), 15).unwrap();
        let x = be.encrypt(&[0.25, 0.64]).unwrap();
        let y = eval_encrypted(&be, &x, &p).unwrap();
        assert_eq!(be.level(&y), 7 - 5);
        let v = be.decrypt(&y).unwrap();
        assert!((v[0] - 0.5).abs() < 0.02 && (v[1] - 0.8).abs() < 0.02);
    }

    #[test]
    fn insufficient_levels_are_reported() {
        let be = ReferenceBackend::new(ChainSpec::toy(4, 3).build().unwrap(), 2).unwrap();
        let x = be.encrypt(&[0.5]).unwrap();
        assert_eq!(eval_encrypted(&be, &x, &dense(15)), Err(MheError::LevelExhausted { needed: 4, level: 3 }));
    }
}
