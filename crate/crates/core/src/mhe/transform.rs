//! Linear maps over slot vectors, normalized to diagonal form
//! `phi(v) = sum_t rotl(d_t ⊙ v, k_t)`.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum LinearTransform {
    Identity,
    /// Cyclic left rotation by `k` (negative rotates right).
    Rotation(isize),
    /// `out[i] = v[source[i]]` for listed `i`, zero elsewhere.
    Gather(Vec<usize>),
    /// Mean over `kernel x kernel` windows of a row-major `width x height`
    /// image, output row-major at the front.
    AvgPool { width: usize, height: usize, kernel: usize, stride: usize },
    /// Mask, then replicate each kept slot into `copies` positions spaced
    /// `stride` apart towards higher indices.
    MaskReplicate { mask: Vec<f64>, stride: usize, copies: usize },
    /// Explicit diagonals: `(left shift, diagonal)`.
    Diagonals(Vec<(usize, Vec<f64>)>),
    /// Applied left to right.
    Compose(Vec<LinearTransform>),
}

/// Sparse matrix entries `(out, in, weight)`.
type Entries = Vec<(usize, usize, f64)>;

impl LinearTransform {
    fn entries(&self, slots: usize) -> Entries {
        match self {
            LinearTransform::Identity => (0..slots).map(|i| (i, i, 1.0)).collect(),
            LinearTransform::Rotation(k) => {
                let k = k.rem_euclid(slots as isize) as usize;
                (0..slots).map(|i| (i, (i + k) % slots, 1.0)).collect()
            }
            LinearTransform::Gather(src) => src.iter().enumerate().map(|(i, &s)| (i, s, 1.0)).collect(),
            LinearTransform::AvgPool { width, height, kernel, stride } => {
                let (ow, oh) = ((width - kernel) / stride + 1, (height - kernel) / stride + 1);
                let w = 1.0 / (kernel * kernel) as f64;
                let mut out = Vec::new();
                for oy in 0..oh {
                    for ox in 0..ow {
                        for ky in 0..*kernel {
                            for kx in 0..*kernel {
                                let src = (oy * stride + ky) * width + ox * stride + kx;
                                out.push((oy * ow + ox, src, w));
                            }
                        }
                    }
                }
                out
            }
            LinearTransform::MaskReplicate { mask, stride, copies } => {
                let mut out = Vec::new();
                for (i, &m) in mask.iter().enumerate() {
                    if m != 0.0 {
                        for c in 0..*copies {
                            out.push(((i + c * stride) % slots, i, m));
                        }
                    }
                }
                out
            }
            LinearTransform::Diagonals(d) => {
                let mut out = Vec::new();
                for (k, diag) in d {
                    for (i, &w) in diag.iter().enumerate() {
                        if w != 0.0 {
                            out.push(((i + slots - k % slots) % slots, i, w));
                        }
                    }
                }
                out
            }
            LinearTransform::Compose(list) => {
                let mut acc: Option<Entries> = None;
                for t in list {
                    let e = t.entries(slots);
                    acc = Some(match acc {
                        None => e,
                        Some(prev) => compose(&prev, &e),
                    });
                }
                acc.unwrap_or_else(|| LinearTransform::Identity.entries(slots))
            }
        }
    }

    /// Diagonal form keyed by left shift; zero diagonals omitted.
    pub fn diagonals(&self, slots: usize) -> Vec<(usize, Vec<f64>)> {
        if let LinearTransform::Diagonals(d) = self {
            return d.clone();
        }
        let mut map: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
        for (o, i, w) in self.entries(slots) {
            let shift = (i + slots - o) % slots;
            map.entry(shift).or_insert_with(|| vec![0.0; slots])[i] += w;
        }
        map.into_iter().filter(|(_, d)| d.iter().any(|&x| x != 0.0)).collect()
    }

    /// Evaluates on a slot vector through the diagonal form.
    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        let n = v.len();
        let mut out = vec![0.0; n];
        match self {
            LinearTransform::Identity => return v.to_vec(),
            // Direct scatter in diagonal-shift order; bit-identical to the
            // diagonal form whenever no two copies land on the same slot.
            LinearTransform::MaskReplicate { mask, stride, copies } => {
                let mut order: Vec<usize> = (0..*copies).collect();
                order.sort_by_key(|c| (n - c * stride % n) % n);
                for c in order {
                    for (i, &m) in mask.iter().enumerate().take(n) {
                        if m != 0.0 {
                            out[(i + c * stride) % n] += m * v[i];
                        }
                    }
                }
                return out;
            }
            _ => {}
        }
        for (k, d) in self.diagonals(n) {
            for o in 0..n {
                let i = (o + k) % n;
                out[o] += d[i] * v[i];
            }
        }
        out
    }

    /// Number of rotations a standalone evaluation would spend; the rotations
    /// a bootstrap absorbs.
    pub fn rotation_count(&self, slots: usize) -> usize {
        match self {
            LinearTransform::MaskReplicate { copies, .. } => copies.trailing_zeros() as usize,
            LinearTransform::Compose(list) => list.iter().map(|t| t.rotation_count(slots)).sum(),
            LinearTransform::Identity => 0,
            _ => self.diagonals(slots).iter().filter(|(k, _)| *k != 0).count(),
        }
    }
}

// (B ∘ A)(v) = B(A(v)); `a` applied first.
fn compose(a: &Entries, b: &Entries) -> Entries {
    let mut by_mid: BTreeMap<usize, Vec<(usize, f64)>> = BTreeMap::new();
    for &(mid, i, w) in a {
        by_mid.entry(mid).or_default().push((i, w));
    }
    let mut acc: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    for &(o, mid, w2) in b {
        if let Some(list) = by_mid.get(&mid) {
            for &(i, w1) in list {
                *acc.entry((o, i)).or_insert(0.0) += w1 * w2;
            }
        }
    }
    acc.into_iter().map(|((o, i), w)| (o, i, w)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rotl(v: &[f64], k: usize) -> Vec<f64> {
        (0..v.len()).map(|i| v[(i + k) % v.len()]).collect()
    }

    #[test]
    fn rotation_and_composition() {
        let v: Vec<f64> = (0..8).map(|i| i as f64).collect();
        assert_eq!(LinearTransform::Rotation(3).apply(&v), rotl(&v, 3));
        assert_eq!(LinearTransform::Rotation(-1).apply(&v), rotl(&v, 7));
        let c = LinearTransform::Compose(vec![LinearTransform::Rotation(2), LinearTransform::Rotation(3)]);
        assert_eq!(c.apply(&v), rotl(&v, 5));
        assert_eq!(c.diagonals(8).len(), 1);
    }

    #[test]
    fn average_pool_quadrants() {
        let img: Vec<f64> = (0..16).map(|i| i as f64).collect();
        let t = LinearTransform::AvgPool { width: 4, height: 4, kernel: 2, stride: 2 };
        let out = t.apply(&img);
        assert_eq!(&out[..4], &[2.5, 4.5, 10.5, 12.5]);
        assert!(out[4..].iter().all(|&x| x == 0.0));
    }

    #[test]
    fn mask_replicate() {
        let v = vec![3.0, 9.0, 0.0, 0.0, 5.0, 9.0, 0.0, 0.0];
        let mask = vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0];
        let t = LinearTransform::MaskReplicate { mask, stride: 1, copies: 2 };
        assert_eq!(t.apply(&v), vec![3.0, 3.0, 0.0, 0.0, 5.0, 5.0, 0.0, 0.0]);
        assert_eq!(t.rotation_count(8), 1);
    }

    proptest! {
        #[test]
        fn transforms_are_linear(a in prop::collection::vec(-10.0f64..10.0, 16),
                                 b in prop::collection::vec(-10.0f64..10.0, 16),
                                 alpha in -4.0f64..4.0) {
            let t = LinearTransform::Compose(vec![
                LinearTransform::AvgPool { width: 4, height: 4, kernel: 2, stride: 2 },
                LinearTransform::Rotation(5),
            ]);
            let sum: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x + alpha * y).collect();
            let lhs = t.apply(&sum);
            let ta = t.apply(&a);
            let tb = t.apply(&b);
            for i in 0..16 {
                prop_assert!((lhs[i] - (ta[i] + alpha * tb[i])).abs() < 1e-9);
            }
        }

        #[test]
        fn replicate_scatter_matches_diagonal_form(v in prop::collection::vec(-10.0f64..10.0, 32),
                                                   bits in prop::collection::vec(any::<bool>(), 32),
                                                   stride in 1usize..9, log_copies in 0u32..3) {
            // Support inside one stride and copies inside the vector: no collisions.
            let mask: Vec<f64> = bits.iter().enumerate().map(|(i, &b)| f64::from(u8::from(b && i < stride))).collect();
            let t = LinearTransform::MaskReplicate { mask, stride, copies: 1 << log_copies };
            let via_diagonals = LinearTransform::Diagonals(t.diagonals(32)).apply(&v);
            prop_assert_eq!(t.apply(&v), via_diagonals);
        }
    }
}
