//! Canonical-embedding encoder for real slot vectors.
//!
//! Slot `j` holds `m(zeta^(5^j))` with `zeta = exp(i*pi/N)`, so the automorphism
//! `X -> X^(5^k)` rotates slots left by `k`.

use num_complex::Complex64;

pub struct Encoder {
    n: usize,
    slots: usize,
    rot_group: Vec<usize>,
    ksi: Vec<Complex64>,
}

fn bit_reverse_in_place(v: &mut [Complex64]) {
    let n = v.len();
    let mut j = 0;
    for i in 1..n {
        let mut bit = n >> 1;
        while j & bit != 0 {
            j ^= bit;
            bit >>= 1;
        }
        j |= bit;
        if i < j {
            v.swap(i, j);
        }
    }
}

impl Encoder {
    pub fn new(ring_dim: usize) -> Self {
        let m = 2 * ring_dim;
        let slots = ring_dim / 2;
        let mut rot_group = Vec::with_capacity(slots);
        let mut g = 1usize;
        for _ in 0..slots {
            rot_group.push(g);
            g = g * 5 % m;
        }
        let ksi = (0..=m)
            .map(|j| Complex64::from_polar(1.0, 2.0 * std::f64::consts::PI * j as f64 / m as f64))
            .collect();
        Encoder { n: ring_dim, slots, rot_group, ksi }
    }

    pub fn slots(&self) -> usize {
        self.slots
    }

    /// Galois element for a left rotation by `k` slots.
    pub fn galois_element(&self, k: usize) -> usize {
        self.rot_group[k % self.slots]
    }

    // Coefficients (packed as complex pairs) to slot values.
    fn emb(&self, vals: &mut [Complex64]) {
        let size = vals.len();
        let m = 2 * self.n;
        bit_reverse_in_place(vals);
        let mut len = 2;
        while len <= size {
            let lenh = len >> 1;
            let lenq = len << 2;
            let gap = m / lenq;
            for i in (0..size).step_by(len) {
                for j in 0..lenh {
                    let idx = (self.rot_group[j] % lenq) * gap;
                    let u = vals[i + j];
                    let v = vals[i + j + lenh] * self.ksi[idx];
                    vals[i + j] = u + v;
                    vals[i + j + lenh] = u - v;
                }
            }
            len <<= 1;
        }
    }

    fn emb_inv(&self, vals: &mut [Complex64]) {
        let size = vals.len();
        let m = 2 * self.n;
        let mut len = size;
        while len >= 2 {
            let lenh = len >> 1;
            let lenq = len << 2;
            let gap = m / lenq;
            for i in (0..size).step_by(len) {
                for j in 0..lenh {
                    let idx = (lenq - (self.rot_group[j] % lenq)) * gap;
                    let u = vals[i + j] + vals[i + j + lenh];
                    let v = (vals[i + j] - vals[i + j + lenh]) * self.ksi[idx];
                    vals[i + j] = u;
                    vals[i + j + lenh] = v;
                }
            }
            len >>= 1;
        }
        bit_reverse_in_place(vals);
        let inv = 1.0 / size as f64;
        for v in vals.iter_mut() {
            *v *= inv;
        }
    }

    /// Real coefficients (unscaled) of the polynomial whose slots are `v`,
    /// zero-padded to the slot count.
    pub fn slots_to_coeffs(&self, v: &[f64]) -> Vec<f64> {
        assert!(v.len() <= self.slots);
        let mut vals = vec![Complex64::new(0.0, 0.0); self.slots];
        for (d, &x) in vals.iter_mut().zip(v) {
            d.re = x;
        }
        self.emb_inv(&mut vals);
        let mut coeffs = vec![0.0; self.n];
        for (i, c) in vals.iter().enumerate() {
            coeffs[i] = c.re;
            coeffs[i + self.slots] = c.im;
        }
        coeffs
    }

    /// Real parts of the slots of a real-coefficient polynomial.
    pub fn coeffs_to_slots(&self, coeffs: &[f64]) -> Vec<f64> {
        assert_eq!(coeffs.len(), self.n);
        let mut vals: Vec<Complex64> =
            (0..self.slots).map(|i| Complex64::new(coeffs[i], coeffs[i + self.slots])).collect();
        self.emb(&mut vals);
        vals.iter().map(|c| c.re).collect()
    }

    /// Scaled integer coefficients; `None` when any coefficient leaves the i128 range.
    pub fn encode_i128(&self, v: &[f64], scale: f64) -> Option<Vec<i128>> {
        let coeffs = self.slots_to_coeffs(v);
        let mut out = Vec::with_capacity(self.n);
        for c in coeffs {
            let x = (c * scale).round();
            if !x.is_finite() || x.abs() >= 1.6e38 {
                return None;
            }
            out.push(x as i128);
        }
        Some(out)
    }
}
