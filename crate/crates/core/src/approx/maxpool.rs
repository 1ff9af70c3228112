//! Slot-wise maximum through `max(a, b) = (a + b)/2 + sqrt((a - b)^2)/2`.
//!
//! The square root is a Chebyshev form on `[0, 1]`, whose variable is
//! `2u - 1`. With `u = d^2` that variable is `d^2 + d^2 - 1`, so the interval
//! map folds into the squaring at no extra level; the `1/2` folds into the
//! coefficients. One `approx_max` therefore costs `1 + depth(deg)` levels.

use crate::mhe::backend::Backend;
use crate::mhe::error::Result;

use super::bsgs::{self, PlainArith};
use super::fit::{ApproxPoly, Basis};
use super::CtArith;

/// Raised when the declared input range can leave the square root's domain.
#[derive(Clone, Debug, PartialEq)]
pub struct PrecisionWarning {
    pub range: (f64, f64),
}

/// `|a - b| <= 1` keeps `(a - b)^2` inside `[0, 1]`.
pub fn range_warning(range: (f64, f64)) -> Option<PrecisionWarning> {
    (range.1 - range.0 > 1.0 || !range.0.is_finite() || !range.1.is_finite()).then_some(PrecisionWarning { range })
}

fn half_coeffs(sqrt_poly: &ApproxPoly) -> Vec<f64> {
    assert!(
        sqrt_poly.basis == Basis::Chebyshev && sqrt_poly.interval == (0.0, 1.0),
        "max needs a Chebyshev square root on [0, 1]"
    );
    sqrt_poly.coeffs.iter().map(|c| 0.5 * c).collect()
}

pub fn levels_needed(sqrt_poly: &ApproxPoly) -> usize {
    1 + bsgs::depth(sqrt_poly.degree())
}

/// Slot-wise approximate maximum of two ciphertexts whose values lie in `range`.
pub fn approx_max<B: Backend>(
    be: &B,
    a: &B::Ct,
    b: &B::Ct,
    sqrt_poly: &ApproxPoly,
    range: (f64, f64),
) -> Result<(B::Ct, Option<PrecisionWarning>)> {
    let coeffs = half_coeffs(sqrt_poly);
    let d = be.sub(a, b)?;
    let d2 = be.mul_rs(&d, &d)?;
    let t = be.add_plain(&be.add(&d2, &d2)?, &vec![-1.0; be.slots()])?;
    let half_abs = bsgs::evaluate(&CtArith(be), &t, &coeffs, Basis::Chebyshev, be.default_scale(), true)?;
    let mid = be.mul_const_to(&be.add(a, b)?, 0.5, be.scale(&half_abs))?;
    Ok((be.add(&mid, &half_abs)?, range_warning(range)))
}

/// Plain counterpart of [`approx_max`] with the same operation order.
pub fn approx_max_plain(a: f64, b: f64, sqrt_poly: &ApproxPoly) -> f64 {
    let coeffs = half_coeffs(sqrt_poly);
    let d = a - b;
    let d2 = d * d;
    let t = (d2 + d2) + -1.0;
    let half_abs = match bsgs::evaluate(&PlainArith, &t, &coeffs, Basis::Chebyshev, 1.0, true) {
        Ok(v) => v,
        Err(e) => match e {},
    };
    (a + b) * 0.5 + half_abs
}

/// Shifts combined by an `f x f` max pool over a row-major image of `width`
/// columns: `log2(f)` horizontal then `log2(f)` vertical rounds.
pub fn pool_shifts(f: usize, width: usize) -> Vec<usize> {
    assert!(f.is_power_of_two() && f >= 2, "kernel side must be a power of two");
    let mut s: Vec<usize> = (0..f.trailing_zeros()).map(|j| 1 << j).collect();
    s.extend((0..f.trailing_zeros()).map(|j| width << j));
    s
}

/// Max pool with stride `f`. Each round is one `approx_max` against a rotated
/// copy followed by a bootstrap. The pooled value of block `(i, j)` lands in
/// slot `(i f) * width + j f`; other slots hold partial maxima.
pub fn max_pool<B: Backend>(
    be: &B,
    x: &B::Ct,
    f: usize,
    width: usize,
    sqrt_poly: &ApproxPoly,
    range: (f64, f64),
) -> Result<(B::Ct, Option<PrecisionWarning>)> {
    let mut cur = x.clone();
    let mut warning = None;
    for shift in pool_shifts(f, width) {
        let other = be.rot_left(&cur, shift)?;
        let (m, w) = approx_max(be, &cur, &other, sqrt_poly, range)?;
        warning = warning.or(w);
        cur = be.bootstrap(&m)?;
    }
    Ok((cur, warning))
}

/// Slots holding the pooled outputs, in row-major block order.
pub fn pooled_slots(f: usize, width: usize, height: usize) -> Vec<usize> {
    (0..height / f).flat_map(|i| (0..width / f).map(move |j| i * f * width + j * f)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::approx::fit::{fit_chebyshev, Target};
    use crate::mhe::params::ChainSpec;
    use crate::mhe::backend::RawOps;
    use crate::mhe::reference::ReferenceBackend;

    fn sqrt31() -> ApproxPoly {
        fit_chebyshev(Target::Sqrt, (0.0, 1.0), 31).unwrap()
    }

    #[test]
    fn symmetric_and_separated_points() {
        let p = sqrt31();
        assert!((approx_max_plain(0.4, 0.4, &p) - 0.4).abs() < 2f64.powi(-7));
        assert!((approx_max_plain(0.75, 0.25, &p) - 0.75).abs() < 2f64.powi(-7));
    }

    #[test]
    fn two_by_two_pool_on_reference_backend() {
        let be = ReferenceBackend::new(ChainSpec::toy(5, 7).build().unwrap(), 2).unwrap();
        let p = sqrt31();
        assert_eq!(pool_shifts(2, 4).len(), 2);
        let img: Vec<f64> = (0..16).map(|i| ((i * 5) % 16) as f64 / 16.0).collect();
        let x = be.encrypt(&img).unwrap();
        be.instr().reset();
        let (y, warn) = max_pool(&be, &x, 2, 4, &p, (0.0, 1.0)).unwrap();
        assert!(warn.is_none());
        assert_eq!(be.instr().total().bootstraps, 2);
        let v = be.decrypt(&y).unwrap();
        for (blk, &s) in pooled_slots(2, 4, 4).iter().enumerate() {
            let (i, j) = (blk / 2, blk % 2);
            let want = [0, 1, 4, 5].iter().map(|o| img[i * 8 + j * 2 + o]).fold(f64::MIN, f64::max);
            assert!((v[s] - want).abs() < 2.0 * 2f64.powi(-7), "block {blk}: {} vs {want}", v[s]);
        }
    }

    #[test]
    fn wide_range_warns() {
        assert!(range_warning((-1.0, 1.0)).is_some());
        assert!(range_warning((0.0, 1.0)).is_none());
    }
}
