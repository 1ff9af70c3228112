//! Baby-step giant-step polynomial evaluation, generic over the arithmetic so
//! the same operation sequence runs on ciphertexts and on plain `f64`.
//!
//! With `m = ceil(log2(d+1))`, `kappa = floor(m/2)` and `B = 2^kappa`, the
//! polynomial is cut into `ceil((d+1)/B)` chunks of degree `< B` over the baby
//! powers `1..B-1`, recombined as `lo + G * hi` with giant powers
//! `G = B * 2^t`. Ciphertext products: `(B - 2)` babies, `m - kappa` giants and
//! one per recombination, i.e. `2^kappa + m - kappa - 3 + ceil((d+1)/B)`.
//!
//! Scales are planned top-down: every node is produced at exactly the scale
//! its consumer needs, so additions never need alignment. For `B = 4` the
//! leading chunk's cubic term is formed as `(a * x) * x^2`, which keeps its
//! depth at two and the total depth at exactly `m` for `d <= 31`.

use std::cell::RefCell;

use super::fit::Basis;

/// Arithmetic the evaluator needs. Products rescale; `mul_const_to` lands on
/// exactly the requested scale one level down.
pub trait Arith {
    type V: Clone;
    type E;
    fn level(&self, x: &Self::V) -> usize;
    fn scale(&self, x: &Self::V) -> f64;
    fn prime(&self, level: usize) -> f64;
    fn mul(&self, a: &Self::V, b: &Self::V) -> Result<Self::V, Self::E>;
    fn mul_const_to(&self, x: &Self::V, c: f64, target: f64) -> Result<Self::V, Self::E>;
    fn add(&self, a: &Self::V, b: &Self::V) -> Result<Self::V, Self::E>;
    fn add_const(&self, x: &Self::V, c: f64) -> Result<Self::V, Self::E>;
}

/// Scalar arithmetic with a dummy ledger; the value path matches the
/// noiseless backend operation for operation.
pub struct PlainArith;

impl Arith for PlainArith {
    type V = f64;
    type E = std::convert::Infallible;
    fn level(&self, _: &f64) -> usize {
        usize::MAX / 2
    }
    fn scale(&self, _: &f64) -> f64 {
        1.0
    }
    fn prime(&self, _: usize) -> f64 {
        1.0
    }
    fn mul(&self, a: &f64, b: &f64) -> Result<f64, Self::E> {
        Ok(a * b)
    }
    fn mul_const_to(&self, x: &f64, c: f64, _: f64) -> Result<f64, Self::E> {
        Ok(x * c)
    }
    fn add(&self, a: &f64, b: &f64) -> Result<f64, Self::E> {
        Ok(a + b)
    }
    fn add_const(&self, x: &f64, c: f64) -> Result<f64, Self::E> {
        Ok(x + c)
    }
}

pub fn ceil_log2(x: usize) -> usize {
    (usize::BITS - (x.max(1) - 1).leading_zeros()) as usize
}

/// Levels consumed: `ceil(log2(d+1))`.
pub fn depth(degree: usize) -> usize {
    ceil_log2(degree + 1)
}

/// Ciphertext products for a dense polynomial of this degree.
pub fn mul_ct_count(degree: usize) -> usize {
    let m = depth(degree);
    let k = m / 2;
    (1 << k) + m - k - 3 + (degree + 1).div_ceil(1 << k)
}

#[derive(Clone, Debug, PartialEq)]
enum Leaf {
    Zero,
    Const(f64),
    Poly(Vec<f64>),
}

impl Leaf {
    fn new(c: &[f64]) -> Leaf {
        match c.iter().rposition(|&x| x != 0.0) {
            None => Leaf::Zero,
            Some(0) => Leaf::Const(c[0]),
            Some(k) => Leaf::Poly(c[..=k].to_vec()),
        }
    }
}

#[derive(Debug)]
enum Node {
    Leaf(Leaf),
    /// `lo + giants[g] * hi`.
    Join { lo: Box<Node>, hi: Box<Node>, g: usize },
}

fn split(coeffs: &[f64], giant: usize, basis: Basis) -> (Vec<f64>, Vec<f64>) {
    let mut lo = coeffs[..giant].to_vec();
    let rest = &coeffs[giant..];
    match basis {
        Basis::Power => (lo, rest.to_vec()),
        Basis::Chebyshev => {
            // T_G * T_j = (T_{G+j} + T_{G-j}) / 2
            let mut hi = Vec::with_capacity(rest.len());
            for (j, &c) in rest.iter().enumerate() {
                if j == 0 {
                    hi.push(c);
                } else {
                    hi.push(2.0 * c);
                    lo[giant - j] -= c;
                }
            }
            (lo, hi)
        }
    }
}

fn build(coeffs: &[f64], chunk: usize, basis: Basis) -> Node {
    let chunks = coeffs.len().div_ceil(chunk);
    if chunks <= 1 {
        return Node::Leaf(Leaf::new(coeffs));
    }
    let t = ceil_log2(chunks) - 1;
    let giant = chunk << t;
    let (lo, hi) = split(coeffs, giant, basis);
    let lo = build(&lo, chunk, basis);
    match build(&hi, chunk, basis) {
        Node::Leaf(Leaf::Zero) => lo,
        hi => Node::Join { lo: Box::new(lo), hi: Box::new(hi), g: t },
    }
}

fn lead_leaf(n: &Node) -> &Leaf {
    match n {
        Node::Leaf(l) => l,
        Node::Join { hi, .. } => lead_leaf(hi),
    }
}

struct Eval<'a, A: Arith> {
    ar: &'a A,
    basis: Basis,
    x: A::V,
    /// Baby powers, index `k` for `k < B`; index 3 is absent under the lead trick.
    babies: Vec<Option<A::V>>,
    giants: Vec<A::V>,
    /// The factor that turns `x` into the index-3 basis element.
    cubic_factor: Option<A::V>,
    /// `(lead coefficient, lead cubic value)` once formed.
    lead: Option<f64>,
    lead_value: RefCell<Option<A::V>>,
}

impl<'a, A: Arith> Eval<'a, A> {
    fn lvl(&self, v: &A::V) -> usize {
        self.ar.level(v)
    }

    fn term_level(&self, k: usize, is_lead: bool) -> usize {
        if k == 3 && self.lead.is_some() {
            let cf = self.cubic_factor.as_ref().unwrap();
            let y = (self.lvl(&self.x) - 1).min(self.lvl(cf)) - 1;
            return if is_lead { y } else { y - 1 };
        }
        self.lvl(self.babies[k].as_ref().unwrap()) - 1
    }

    fn leaf_level(&self, leaf: &Leaf, is_lead: bool) -> Option<usize> {
        match leaf {
            Leaf::Poly(c) => {
                (1..c.len()).filter(|&k| c[k] != 0.0).map(|k| self.term_level(k, is_lead)).min()
            }
            _ => None,
        }
    }

    fn node_level(&self, n: &Node, is_lead: bool) -> Option<usize> {
        match n {
            Node::Leaf(l) => self.leaf_level(l, is_lead),
            Node::Join { lo, hi, g } => {
                let gl = self.lvl(&self.giants[*g]);
                let prod = match &**hi {
                    Node::Leaf(Leaf::Zero) => None,
                    Node::Leaf(Leaf::Const(_)) => Some(gl - 1),
                    h => Some(gl.min(self.node_level(h, is_lead).unwrap()) - 1),
                };
                match (self.node_level(lo, false), prod) {
                    (Some(a), Some(b)) => Some(a.min(b)),
                    (a, b) => a.or(b),
                }
            }
        }
    }

    fn cubic(&self, coeff: f64, target: f64, is_lead: bool) -> Result<A::V, A::E> {
        let ar = self.ar;
        if self.lead.is_none() {
            return ar.mul_const_to(self.babies[3].as_ref().unwrap(), coeff, target);
        }
        if is_lead {
            let cf = self.cubic_factor.as_ref().unwrap();
            let p = (self.lvl(&self.x) - 1).min(self.lvl(cf));
            let t_ax = target * ar.prime(p) / ar.scale(cf);
            let ax = ar.mul_const_to(&self.x, coeff, t_ax)?;
            let y = ar.mul(&ax, cf)?;
            *self.lead_value.borrow_mut() = Some(y.clone());
            Ok(y)
        } else {
            let y = self.lead_value.borrow().clone().expect("lead chunk is evaluated first");
            ar.mul_const_to(&y, coeff / self.lead.unwrap(), target)
        }
    }

    /// Evaluates `n` at exactly `target` scale. `strip_const` drops the
    /// polynomial's constant term (only ever the leftmost leaf).
    fn eval(&self, n: &Node, target: f64, is_lead: bool, strip_const: bool) -> Result<Option<A::V>, A::E> {
        let ar = self.ar;
        match n {
            Node::Leaf(Leaf::Zero) => Ok(None),
            Node::Leaf(Leaf::Const(_)) => unreachable!("constants are folded by the parent"),
            Node::Leaf(Leaf::Poly(c)) => {
                let mut acc: Option<A::V> = None;
                for (k, &a) in c.iter().enumerate().skip(1) {
                    if a == 0.0 {
                        continue;
                    }
                    let term = if k == 3 {
                        self.cubic(a, target, is_lead)?
                    } else {
                        ar.mul_const_to(self.babies[k].as_ref().unwrap(), a, target)?
                    };
                    acc = Some(match acc {
                        None => term,
                        Some(s) => ar.add(&s, &term)?,
                    });
                }
                let acc = acc.expect("poly leaf has a non-constant term");
                Ok(Some(if c[0] != 0.0 && !strip_const { ar.add_const(&acc, c[0])? } else { acc }))
            }
            Node::Join { lo, hi, g } => {
                let giant = &self.giants[*g];
                let prod = match &**hi {
                    Node::Leaf(Leaf::Zero) => None,
                    Node::Leaf(Leaf::Const(a)) => Some(ar.mul_const_to(giant, *a, target)?),
                    h => {
                        let p = self.lvl(giant).min(self.node_level(h, is_lead).unwrap());
                        let t_hi = target * ar.prime(p) / ar.scale(giant);
                        let hv = self.eval(h, t_hi, is_lead, false)?.unwrap();
                        Some(ar.mul(giant, &hv)?)
                    }
                };
                match (&**lo, prod) {
                    (Node::Leaf(Leaf::Zero), p) => Ok(p),
                    (Node::Leaf(Leaf::Const(a)), Some(p)) => {
                        Ok(Some(if strip_const { p } else { ar.add_const(&p, *a)? }))
                    }
                    (Node::Leaf(Leaf::Const(_)), None) => unreachable!("trimmed leading zeros"),
                    (l, p) => {
                        let lv = self.eval(l, target, false, strip_const)?;
                        Ok(match (lv, p) {
                            (Some(a), Some(b)) => Some(ar.add(&a, &b)?),
                            (a, b) => a.or(b),
                        })
                    }
                }
            }
        }
    }
}

fn product<A: Arith>(ar: &A, basis: Basis, a: &A::V, b: &A::V, lower: Option<&A::V>) -> Result<A::V, A::E> {
    let p = ar.mul(a, b)?;
    match basis {
        Basis::Power => Ok(p),
        Basis::Chebyshev => {
            // T_{i+j} = 2 T_i T_j - T_{i-j}
            let two = ar.add(&p, &p)?;
            match lower {
                None => ar.add_const(&two, -1.0),
                Some(l) => {
                    let neg = ar.mul_const_to(l, -1.0, ar.scale(&two))?;
                    ar.add(&two, &neg)
                }
            }
        }
    }
}

/// Evaluates `sum coeffs[k] * P_k(x)` where `P_k` is `x^k` or `T_k(x)`,
/// returning a value at scale `target` and `depth(degree)` levels below `x`
/// (for degree <= 31). The constant term is skipped when `with_const` is false.
pub fn evaluate<A: Arith>(
    ar: &A,
    x: &A::V,
    coeffs: &[f64],
    basis: Basis,
    target: f64,
    with_const: bool,
) -> Result<A::V, A::E> {
    let d = coeffs.iter().rposition(|&c| c != 0.0).unwrap_or(0);
    let coeffs = &coeffs[..=d.min(coeffs.len().saturating_sub(1))];
    if d == 0 {
        let z = ar.mul_const_to(x, 0.0, target)?;
        let c = coeffs.first().copied().unwrap_or(0.0);
        return if with_const && c != 0.0 { ar.add_const(&z, c) } else { Ok(z) };
    }
    let m = depth(d);
    let kappa = m / 2;
    let chunk = 1usize << kappa;
    let tree = build(coeffs, chunk, basis);
    let lead_cubic = match lead_leaf(&tree) {
        Leaf::Poly(c) if chunk == 4 && c.len() == 4 => Some(c[3]),
        _ => None,
    };
    let needs = |k: usize| -> bool {
        let mut found = false;
        fn walk(n: &Node, k: usize, found: &mut bool) {
            match n {
                Node::Leaf(Leaf::Poly(c)) => *found |= c.get(k).is_some_and(|&a| a != 0.0),
                Node::Leaf(_) => {}
                Node::Join { lo, hi, .. } => {
                    walk(lo, k, found);
                    walk(hi, k, found);
                }
            }
        }
        walk(&tree, k, &mut found);
        found
    };

    let mut babies: Vec<Option<A::V>> = vec![None; chunk.max(2)];
    babies[1] = Some(x.clone());
    let mut cubic_factor = None;
    for k in 2..chunk {
        let hb = 1usize << (usize::BITS - 1 - k.leading_zeros());
        let r = k - hb;
        if k == 3 && chunk == 4 {
            // 3 = 1 + 2: x * x^2, or T_1 * (2 T_2 - 1).
            let b2 = babies[2].as_ref().unwrap();
            let f = match basis {
                Basis::Power => b2.clone(),
                Basis::Chebyshev => ar.add_const(&ar.add(b2, b2)?, -1.0)?,
            };
            if lead_cubic.is_none() && needs(3) {
                babies[3] = Some(ar.mul(x, &f)?);
            }
            cubic_factor = Some(f);
            continue;
        }
        let v = if r == 0 {
            let h = babies[hb / 2].as_ref().unwrap();
            product(ar, basis, h, h, None)?
        } else {
            let lower = babies[hb - r].clone();
            product(ar, basis, babies[hb].as_ref().unwrap(), babies[r].as_ref().unwrap(), lower.as_ref())?
        };
        babies[k] = Some(v);
    }
    let mut giants = Vec::new();
    let mut g = if chunk == 1 {
        x.clone()
    } else {
        let h = babies[chunk / 2].as_ref().unwrap();
        product(ar, basis, h, h, None)?
    };
    for _ in 0..m - kappa {
        let next = if giants.len() + 1 < m - kappa { Some(product(ar, basis, &g, &g, None)?) } else { None };
        giants.push(g.clone());
        match next {
            Some(n) => g = n,
            None => break,
        }
    }
    let ev = Eval {
        ar,
        basis,
        x: x.clone(),
        babies,
        giants,
        cubic_factor,
        lead: lead_cubic,
        lead_value: RefCell::new(None),
    };
    let _ = ev.basis;
    match &tree {
        Node::Leaf(Leaf::Poly(c)) => {
            let v = ev.eval(&tree, target, true, !with_const)?.unwrap();
            debug_assert!(c.len() > 1);
            Ok(v)
        }
        _ => Ok(ev.eval(&tree, target, true, !with_const)?.expect("nonzero polynomial")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn horner(c: &[f64], x: f64) -> f64 {
        c.iter().rev().fold(0.0, |a, &k| a * x + k)
    }

    fn cheb(c: &[f64], t: f64) -> f64 {
        let (mut t0, mut t1) = (1.0, t);
        let mut s = c[0];
        for (k, &a) in c.iter().enumerate().skip(1) {
            if k > 1 {
                let t2 = 2.0 * t * t1 - t0;
                t0 = t1;
                t1 = t2;
            }
            s += a * t1;
        }
        s
    }

    #[test]
    fn formula_values() {
        assert_eq!(mul_ct_count(3), 2);
        assert_eq!(depth(3), 2);
        assert_eq!(depth(31), 5);
        assert_eq!(depth(1), 1);
    }

    #[test]
    fn plain_matches_horner_and_clenshaw() {
        for d in 1..=31usize {
            let c: Vec<f64> = (0..=d).map(|k| ((k * 7 + 3) % 11) as f64 / 10.0 - 0.5).collect();
            for &x in &[-0.9, -0.3, 0.0, 0.4, 0.95] {
                let p = evaluate(&PlainArith, &x, &c, Basis::Power, 1.0, true).unwrap();
                assert!((p - horner(&c, x)).abs() < 1e-12, "power d={d} x={x}");
                let q = evaluate(&PlainArith, &x, &c, Basis::Chebyshev, 1.0, true).unwrap();
                assert!((q - cheb(&c, x)).abs() < 1e-10, "cheb d={d} x={x}: {q} vs {}", cheb(&c, x));
                let r = evaluate(&PlainArith, &x, &c, Basis::Power, 1.0, false).unwrap();
                assert!((r - (horner(&c, x) - c[0])).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn sparse_polynomials() {
        for c in [vec![0.0, 0.0, 0.0, 1.0], vec![1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 2.0], vec![0.5, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 3.0]] {
            for &x in &[-0.7, 0.2, 0.8] {
                let p = evaluate(&PlainArith, &x, &c, Basis::Power, 1.0, true).unwrap();
                assert!((p - horner(&c, x)).abs() < 1e-12);
                let q = evaluate(&PlainArith, &x, &c, Basis::Chebyshev, 1.0, true).unwrap();
                assert!((q - cheb(&c, x)).abs() < 1e-12);
            }
        }
    }
}
