//! Plaintext trainer over the padded network: the oracle the encrypted
//! pipeline is compared against.
//!
//! It shares nothing with the pipeline except the activation polynomials and
//! their evaluation order. Sums run as pairwise trees over padded widths,
//! which is the order inner sums by rotation produce, so on the noiseless
//! backend the two agree bit for bit.

use crate::approx::eval_plain;
use crate::approx::fit::ApproxPoly;
use crate::packing::Matrix;

use super::spec::Network;
use super::Sample;

/// `((v0 + v1) + (v2 + v3)) + ..` over a power-of-two length.
pub fn tree_sum(mut v: Vec<f64>) -> f64 {
    debug_assert!(v.len().is_power_of_two());
    while v.len() > 1 {
        v = v.chunks(2).map(|c| c[0] + c[1]).collect();
    }
    v[0]
}

fn act(u: f64, p: &ApproxPoly) -> f64 {
    let c0 = p.coeffs[0];
    if p.degree() == 0 {
        c0
    } else if c0 == 0.0 {
        eval_plain(u, p, false)
    } else {
        eval_plain(u, p, false) + c0
    }
}

/// Weights as padded `h_{j-1} x h_j` row-major matrices; a convolution's
/// kernel is expanded into one column per (filter, patch).
#[derive(Clone, Debug, PartialEq)]
pub struct PlainTrainer {
    pub net: Network,
    pub w: Vec<Vec<Vec<f64>>>,
}

struct Pass {
    /// First-layer operand per (row, column).
    x: Vec<Vec<f64>>,
    /// Layer inputs `a_{j-1}` as consumed by layer `j`, padded.
    inputs: Vec<Vec<f64>>,
    u: Vec<Vec<f64>>,
    out: Vec<f64>,
}

impl PlainTrainer {
    pub fn new(net: &Network, ws: &[Matrix]) -> PlainTrainer {
        let d = &net.dims;
        let w = ws
            .iter()
            .enumerate()
            .map(|(i, m)| {
                let mut p = vec![vec![0.0; d[i + 1]]; d[i]];
                match (&net.conv, i) {
                    (Some(c), 0) => {
                        for r in 0..m.rows {
                            for k in 0..c.filters * c.patches {
                                p[r][k] = m.get(r, k / c.patches);
                            }
                        }
                    }
                    _ => {
                        for r in 0..m.rows {
                            for k in 0..m.cols {
                                p[r][k] = m.get(r, k);
                            }
                        }
                    }
                }
                p
            })
            .collect();
        PlainTrainer { net: net.clone(), w }
    }

    /// Logical weights in the shapes `Network::weight_shape` reports.
    pub fn weights(&self) -> Vec<Matrix> {
        (1..=self.net.depth())
            .map(|j| {
                let (r, c) = self.net.weight_shape(j);
                match (&self.net.conv, j) {
                    (Some(cv), 1) => Matrix::from_fn(r, c, |a, f| self.w[0][a][f * cv.patches]),
                    _ => Matrix::from_fn(r, c, |a, b| self.w[j - 1][a][b]),
                }
            })
            .collect()
    }

    fn first_operand(&self, x: &[f64]) -> Vec<Vec<f64>> {
        let (d0, d1) = (self.net.dims[0], self.net.dims[1]);
        let mut m = vec![vec![0.0; d1]; d0];
        match &self.net.conv {
            None => {
                for (i, row) in m.iter_mut().enumerate().take(x.len()) {
                    row.iter_mut().for_each(|v| *v = x[i]);
                }
            }
            Some(c) => {
                for (q, patch) in c.patch_rows(x).iter().enumerate() {
                    for f in 0..c.filters {
                        for (i, &v) in patch.iter().enumerate() {
                            m[i][f * c.patches + q] = v;
                        }
                    }
                }
            }
        }
        m
    }

    /// Pooled position of unpooled block `k`.
    fn pooled_index(&self, k: usize) -> usize {
        let c = self.net.conv.as_ref().unwrap();
        let f = c.pool.unwrap();
        let (_, gc) = c.patch_grid();
        let (filt, q) = (k / c.patches, k % c.patches);
        filt * c.pooled() + (q / gc / f) * (gc / f) + (q % gc) / f
    }

    fn pooling(&self) -> Option<f64> {
        self.net.conv.as_ref().and_then(|c| c.pool).map(|f| 1.0 / (f * f) as f64)
    }

    fn forward(&self, x: &[f64]) -> Pass {
        let (d, logical, l) = (&self.net.dims, &self.net.logical, self.net.depth());
        let xm = self.first_operand(x);
        let mut inputs = Vec::with_capacity(l);
        let mut u_all = Vec::with_capacity(l);
        let mut a: Vec<f64> = Vec::new();
        for j in 1..=l {
            let w = &self.w[j - 1];
            let u: Vec<f64> = (0..d[j])
                .map(|k| {
                    if k >= logical[j] {
                        return 0.0;
                    }
                    let terms = (0..d[j - 1]).map(|i| if j == 1 { w[i][k] * xm[i][k] } else { a[i] * w[i][k] }).collect();
                    tree_sum(terms)
                })
                .collect();
            let p = &self.net.acts[j - 1].value;
            let mut next: Vec<f64> = u.iter().enumerate().map(|(k, &v)| if k < logical[j] { act(v, p) } else { 0.0 }).collect();
            if j == 1 {
                if let Some(w) = self.pooling() {
                    let mut pooled = vec![0.0; d[1]];
                    for (k, v) in next.iter().enumerate().take(logical[1]) {
                        pooled[self.pooled_index(k)] += v * w;
                    }
                    next = pooled;
                }
            }
            if j > 1 {
                inputs.push(a);
            }
            u_all.push(u);
            a = next;
        }
        Pass { x: xm, inputs, u: u_all, out: a }
    }

    /// Logical outputs for one sample.
    pub fn predict(&self, x: &[f64]) -> Vec<f64> {
        self.forward(x).out[..self.net.output_width()].to_vec()
    }

    /// Per-sample gradients from `E_l = y - L_l`, padded like the weights.
    pub fn gradients(&self, s: &Sample) -> Vec<Vec<Vec<f64>>> {
        let (d, logical, l) = (&self.net.dims, &self.net.logical, self.net.depth());
        let pass = self.forward(&s.x);
        let mut e: Vec<f64> = (0..d[l]).map(|k| if k < logical[l] { -pass.out[k] + s.y[k] } else { 0.0 }).collect();
        let mut grads = vec![Vec::new(); l];
        for j in (1..=l).rev() {
            if j == 1 {
                if let Some(w) = self.pooling() {
                    e = (0..d[1]).map(|k| if k < logical[1] { w * e[self.pooled_index(k)] } else { 0.0 }).collect();
                }
            }
            let p = &self.net.acts[j - 1].deriv;
            for (k, ek) in e.iter_mut().enumerate() {
                let dk = if k < logical[j] { act(pass.u[j - 1][k], p) } else { 0.0 };
                *ek *= dk;
            }
            grads[j - 1] = (0..d[j - 1])
                .map(|i| (0..d[j]).map(|k| if j == 1 { e[k] * pass.x[i][k] } else { pass.inputs[j - 2][i] * e[k] }).collect())
                .collect();
            if j > 1 {
                let w = &self.w[j - 1];
                e = (0..d[j - 1]).map(|i| tree_sum((0..d[j]).map(|k| e[k] * w[i][k]).collect())).collect();
            }
        }
        grads
    }

    fn add_into(acc: &mut Option<Vec<Vec<Vec<f64>>>>, g: Vec<Vec<Vec<f64>>>) {
        match acc {
            None => *acc = Some(g),
            Some(a) => {
                for (al, gl) in a.iter_mut().zip(&g) {
                    for (ar, gr) in al.iter_mut().zip(gl) {
                        for (x, y) in ar.iter_mut().zip(gr) {
                            *x = *x + *y;
                        }
                    }
                }
            }
        }
    }

    /// One global iteration: per-party sums over equal local batches, summed
    /// in party order, then `W += (eta / (b N)) G`.
    pub fn step(&mut self, parties: &[Vec<Sample>]) {
        let n = parties.len();
        let b = parties[0].len();
        let mut total = None;
        for batch in parties {
            let mut local = None;
            for s in batch {
                Self::add_into(&mut local, self.gradients(s));
            }
            Self::add_into(&mut total, local.expect("non-empty batch"));
        }
        let g = total.expect("at least one party");
        let factor = self.net.learning_rate / (b as f64 * n as f64);
        for (j, (w, gj)) in self.w.iter_mut().zip(&g).enumerate() {
            match (&self.net.conv, j) {
                (Some(c), 0) => {
                    for (wr, gr) in w.iter_mut().zip(gj) {
                        for f in 0..c.filters {
                            let cols = f * c.patches..(f + 1) * c.patches;
                            let kernel = wr[cols.start] + factor * gr[cols.clone()].iter().sum::<f64>();
                            wr[cols].iter_mut().for_each(|v| *v = kernel);
                        }
                    }
                }
                _ => {
                    for (wr, gr) in w.iter_mut().zip(gj) {
                        for (x, y) in wr.iter_mut().zip(gr) {
                            *x = *x + *y * factor;
                        }
                    }
                }
            }
        }
    }

    /// Mean of `||y - L_l||^2` over `data`.
    pub fn loss(&self, data: &[Sample]) -> f64 {
        data.iter()
            .map(|s| self.predict(&s.x).iter().zip(&s.y).map(|(p, y)| (y - p).powi(2)).sum::<f64>())
            .sum::<f64>()
            / data.len().max(1) as f64
    }

    /// Fraction of samples whose largest output matches the largest target.
    pub fn accuracy(&self, data: &[Sample]) -> f64 {
        accuracy_of(data, |x| self.predict(x))
    }
}

pub fn argmax(v: &[f64]) -> usize {
    v.iter().enumerate().fold(0, |best, (i, &x)| if x > v[best] { i } else { best })
}

pub fn accuracy_of(data: &[Sample], mut f: impl FnMut(&[f64]) -> Vec<f64>) -> f64 {
    let hits = data.iter().filter(|s| argmax(&f(&s.x)) == argmax(&s.y)).count();
    hits as f64 / data.len().max(1) as f64
}
