//! Complexity model, level schedule and parameter planner.
//!
//! Costs are abstract operation counts, not seconds. The schedule simulator
//! replays the training pipeline's level bookkeeping from layer widths and
//! activation degrees alone, so its counts can be checked against an
//! instrumented run.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mhe::params::SECURITY_TABLE;
use crate::mhe::serialize::{ciphertext_bytes, poly_bytes, refresh_share_bytes};
use crate::nn::spec::{Activation, Network};
use crate::packing::{layer_layout, multi_cipher_split};

#[derive(Debug, Error, PartialEq)]
pub enum CostError {
    #[error("no headroom: L = {levels} does not exceed tau = {tau}")]
    NoHeadroom { levels: usize, tau: usize },
    #[error("r must be at least 1")]
    BadRatio,
    #[error("security level {0} is not tabulated (use 128, 192 or 256)")]
    UnsupportedLambda(u32),
    #[error("log Q = {0:.1} exceeds every tabulated ring")]
    ModulusTooLarge(f64),
    #[error("no feasible parameters; binding constraint: {0}")]
    Infeasible(String),
}

pub type Result<T> = std::result::Result<T, CostError>;

fn clog2(x: usize) -> usize {
    (usize::BITS - (x.max(1) - 1).leading_zeros()) as usize
}

fn log2f(x: usize) -> f64 {
    (x.max(1) as f64).log2()
}

/// Bootstraps for one forward and backward pass: the levels an `l`-layer
/// pass consumes over the levels usable between refreshes.
pub fn bootstrap_count(l: usize, da: usize, levels: usize, tau: usize, r: usize) -> Result<f64> {
    if levels <= tau {
        return Err(CostError::NoHeadroom { levels, tau });
    }
    if r == 0 {
        return Err(CostError::BadRatio);
    }
    let per_layer = 5 + clog2(da + 1) + clog2(da);
    Ok((l * per_layer) as f64 / ((levels - tau) * r) as f64)
}

/// Ciphertext products of a dense degree-`d` baby-step giant-step evaluation.
pub fn phi_mul_ct(d: usize) -> usize {
    if d == 0 {
        return 0;
    }
    let m = clog2(d + 1);
    let k = m / 2;
    (1usize << k) + m - k + (d + 1).div_ceil(1 << k) - 3
}

/// Exact count for the evaluator in use: when the top chunk holds a single
/// coefficient, its product with the giant power is a constant product.
pub fn phi_mul_ct_exact(d: usize) -> usize {
    if d == 0 {
        return 0;
    }
    let chunk = 1usize << (clog2(d + 1) / 2);
    let lone_top = (d + 1) % chunk == 1 || chunk == 1;
    phi_mul_ct(d) - usize::from(lone_top)
}

/// Per-operation costs at ring `ring_dim`, current level `level` and
/// `alpha` special primes.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostModel {
    pub ring_dim: usize,
    pub level: usize,
    pub alpha: usize,
}

impl CostModel {
    pub fn beta(&self) -> usize {
        (self.level + 1).div_ceil(self.alpha)
    }

    pub fn ks(&self) -> f64 {
        self.ring_dim as f64 * log2f(self.ring_dim) * (self.level + 1) as f64 * self.beta() as f64
    }

    pub fn mul_pt(&self) -> f64 {
        2.0 * self.ring_dim as f64 * (self.level + 1) as f64
    }

    pub fn mul_ct(&self) -> f64 {
        4.0 * self.ring_dim as f64 * (self.level + 1) as f64 + self.ks()
    }

    /// One party's share of a collective refresh: a decryption-style share at
    /// the current level and a re-encryption at the top level `top`.
    pub fn db(&self, top: usize) -> f64 {
        let nl = self.ring_dim as f64 * log2f(self.ring_dim);
        nl * (top + 1) as f64 + nl * (self.level + 1) as f64
    }

    pub fn phi(&self, d: usize) -> f64 {
        phi_mul_ct(d) as f64 * self.mul_ct()
    }

    /// `RIS`/`RR` over `s` positions.
    pub fn rotations(&self, s: usize) -> f64 {
        log2f(s) * self.ks()
    }

    pub fn forward(&self, h_prev: usize, h_next: usize, d: usize) -> f64 {
        (log2f(h_prev) + log2f(h_next)) * self.ks() + self.mul_ct() + self.mul_pt() + self.phi(d)
    }

    pub fn backward(&self, h_prev: usize, h_next: usize, d: usize) -> f64 {
        (log2f(h_prev) + log2f(h_next)) * self.ks() + 2.0 * self.mul_ct() + self.mul_pt() + self.phi(d.saturating_sub(1))
    }
}

fn degree_of(a: &Activation) -> usize {
    a.value.degree()
}

/// Overall cost of `m` iterations with every cost term taken at the top
/// level `levels`. Missing widths past the output count as 1, the saved
/// output-layer replications are charged as `2 log2 h_l` key switches and
/// `r = 1` (every product is rescaled).
pub fn cost_eval(ring_dim: usize, levels: usize, tau: usize, net: &Network, parties: usize, m: usize) -> Result<f64> {
    let _ = parties;
    let cm = CostModel { ring_dim, level: levels, alpha: 1 };
    let l = net.depth();
    let h = |i: usize| net.dims.get(i).copied().unwrap_or(1);
    let mut per_iter = 0.0;
    for i in 1..=l {
        let d = degree_of(&net.acts[i - 1]);
        per_iter += (2.0 * log2f(h(i - 1)) + log2f(h(i + 1))) * cm.ks()
            + 3.0 * cm.mul_ct()
            + 2.0 * cm.mul_pt()
            + cm.phi(d)
            + cm.phi(d.saturating_sub(1));
    }
    per_iter -= 2.0 * log2f(h(l)) * cm.ks();
    let da = net.acts.iter().map(degree_of).max().unwrap_or(1);
    let b = bootstrap_count(l, da, levels, tau, 1)?.ceil();
    Ok(m as f64 * (per_iter + b * cm.db(levels)))
}

/// Operation counts predicted by the schedule.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OpCounts {
    pub rotations: u64,
    pub mul_ct: u64,
    pub mul_pt: u64,
    pub bootstraps: u64,
}

impl OpCounts {
    fn times(self, k: u64) -> OpCounts {
        OpCounts { rotations: self.rotations * k, mul_ct: self.mul_ct * k, mul_pt: self.mul_pt * k, bootstraps: self.bootstraps * k }
    }
    fn plus(self, o: OpCounts) -> OpCounts {
        OpCounts {
            rotations: self.rotations + o.rotations,
            mul_ct: self.mul_ct + o.mul_ct,
            mul_pt: self.mul_pt + o.mul_pt,
            bootstraps: self.bootstraps + o.bootstraps,
        }
    }
}

/// Level bookkeeping of one sample's forward and backward pass.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LgdSchedule {
    pub counts: OpCounts,
    /// Level of each refresh's input, in execution order.
    pub refresh_levels: Vec<usize>,
    /// Level of each layer's gradient.
    pub grad_levels: Vec<usize>,
}

/// Global-iteration schedule: `parties * batch` passes, then the update.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationSchedule {
    pub lgd: LgdSchedule,
    pub update: OpCounts,
    pub update_refresh_levels: Vec<usize>,
    pub total: OpCounts,
}

struct Sim {
    top: usize,
    floor: usize,
    c: OpCounts,
    refreshes: Vec<usize>,
}

impl Sim {
    fn refresh(&mut self, lv: usize) -> usize {
        self.c.bootstraps += 1;
        self.refreshes.push(lv);
        self.top
    }
    /// Refreshes when `need` levels would cross the floor.
    fn ready(&mut self, lv: usize, need: usize) -> usize {
        if lv >= need + self.floor { lv } else { self.refresh(lv) }
    }
    fn mask(&mut self, lv: usize) -> usize {
        self.c.mul_pt += 1;
        self.ready(lv, 1) - 1
    }
    fn product(&mut self, a: usize, b: usize) -> usize {
        self.c.mul_ct += 1;
        a.min(b) - 1
    }
    fn rot(&mut self, width: usize) {
        self.c.rotations += width.trailing_zeros() as u64;
    }
    fn poly(&mut self, lv: usize, d: usize) -> usize {
        let depth = clog2(d + 1);
        let lv = self.ready(lv, depth);
        self.c.mul_ct += phi_mul_ct_exact(d) as u64;
        lv - depth
    }
}

/// Replays one sample through the pipeline: fresh weights at `top`, refresh
/// floor `floor`.
pub fn simulate_lgd(net: &Network, top: usize, floor: usize) -> LgdSchedule {
    let l = net.depth();
    let dims = &net.dims;
    let pooled = net.conv.as_ref().is_some_and(|c| c.pool.is_some());
    let mut s = Sim { top, floor, c: OpCounts::default(), refreshes: Vec::new() };
    let (mut pre, mut outs) = (Vec::with_capacity(l), Vec::<usize>::with_capacity(l));
    for j in 1..=l {
        let d = net.acts[j - 1].value.degree();
        let depth = clog2(d + 1);
        let t = match outs.last() {
            None => s.mask(top),
            Some(&prev) => {
                let a = s.ready(prev, 1);
                s.product(a, top)
            }
        };
        s.rot(dims[j - 1]);
        if j == l {
            let u = s.mask(t);
            pre.push(u);
            outs.push(s.poly(u, d));
        } else if j == 1 && pooled {
            let u = s.mask(t);
            pre.push(u);
            let a = s.poly(u, d);
            outs.push(s.refresh(a));
        } else if t < 1 + depth + floor {
            let urep = s.refresh(t);
            pre.push(s.mask(urep));
            outs.push(s.poly(urep, d));
        } else {
            let u = s.mask(t);
            s.rot(dims[j + 1]);
            pre.push(u);
            outs.push(s.poly(u, d));
        }
    }
    let mut grads = vec![0; l];
    let mut e = outs[l - 1];
    for j in (1..=l).rev() {
        if j == 1 && pooled {
            e = s.refresh(e);
        }
        let dd = net.acts[j - 1].deriv.degree();
        e = if dd == 0 {
            s.mask(e)
        } else {
            let dv = s.poly(pre[j - 1], dd);
            let a = s.ready(e, 1);
            let b = s.ready(dv, 1);
            s.product(a, b)
        };
        let erep = if e < 1 + floor {
            s.refresh(e)
        } else {
            s.rot(dims[j - 1]);
            e
        };
        grads[j - 1] = if j == 1 {
            s.mask(erep)
        } else {
            let a = s.ready(outs[j - 2], 1);
            s.product(a, erep)
        };
        if j > 1 {
            e = s.product(erep, top);
            s.rot(dims[j]);
        }
    }
    LgdSchedule { counts: s.c, refresh_levels: s.refreshes, grad_levels: grads }
}

/// Whole-iteration counts: every party runs `batch` passes, then the root
/// rescales and refreshes each layer's aggregate.
pub fn simulate_iteration(net: &Network, top: usize, floor: usize, parties: usize, batch: usize) -> IterationSchedule {
    let lgd = simulate_lgd(net, top, floor);
    let mut s = Sim { top, floor, c: OpCounts::default(), refreshes: Vec::new() };
    for &g in &lgd.grad_levels {
        let ready = s.ready(g, 1);
        s.refresh(ready - 1);
    }
    let total = lgd.counts.times((parties * batch) as u64).plus(s.c);
    IterationSchedule { lgd, update: s.c, update_refresh_levels: s.refreshes, total }
}

/// Bytes one global iteration puts on the wire, by message class.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CommEstimate {
    pub map: u64,
    pub combine: u64,
    pub bootstrap: u64,
    pub reduce: u64,
}

impl CommEstimate {
    pub fn total(&self) -> u64 {
        self.map + self.combine + self.bootstrap + self.reduce
    }
}

/// One party's traffic in a refresh started at `level`: the initiator's
/// `c_1` outwards and the share back.
pub fn refresh_exchange(ring_dim: usize, level: usize, top: usize) -> u64 {
    (poly_bytes(ring_dim, level + 1) + refresh_share_bytes(ring_dim, level, top)) as u64
}

/// `z (N-1) |c|` down for the model, `z (N-1) |c|` up for the gradients and
/// `(N-1) |c|` per refresh, with each `|c|` the serialized size at the level
/// the schedule predicts.
pub fn comm_estimate(ring_dim: usize, top: usize, floor: usize, net: &Network, parties: usize) -> CommEstimate {
    if parties <= 1 {
        return CommEstimate::default();
    }
    let it = simulate_iteration(net, top, floor, parties, net.local_batch);
    let edges = (parties - 1) as u64;
    let z = net.depth() as u64;
    let db = |lv: &usize| edges * refresh_exchange(ring_dim, *lv, top);
    CommEstimate {
        map: z * edges * ciphertext_bytes(ring_dim, top) as u64,
        combine: it.lgd.grad_levels.iter().map(|&g| edges * ciphertext_bytes(ring_dim, g) as u64).sum(),
        bootstrap: (parties * net.local_batch) as u64 * it.lgd.refresh_levels.iter().map(db).sum::<u64>(),
        reduce: it.update_refresh_levels.iter().map(db).sum(),
    }
}

const HE_STANDARD: &str = include_str!("../data/he_standard.csv");

/// The embedded homomorphic-encryption-standard table: ring dimension and
/// maximum `log2 Q` for 128, 192 and 256 bits of security.
pub fn security_fixture() -> Vec<(usize, [u32; 3])> {
    HE_STANDARD
        .lines()
        .skip(1)
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            let f: Vec<u32> = l.split(',').map(|x| x.trim().parse().expect("fixture is numeric")).collect();
            (f[0] as usize, [f[1], f[2], f[3]])
        })
        .collect()
}

/// Smallest ring whose modulus budget admits `log_q` bits at `lambda`.
pub fn post_q_sec(log_q: f64, lambda: u32) -> Result<usize> {
    let col = match lambda {
        128 => 0,
        192 => 1,
        256 => 2,
        other => return Err(CostError::UnsupportedLambda(other)),
    };
    security_fixture()
        .into_iter()
        .find(|(_, row)| row[col] as f64 >= log_q)
        .map(|(n, _)| n)
        .ok_or(CostError::ModulusTooLarge(log_q))
}

/// What the planner is asked to satisfy.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlanRequest {
    pub lambda: u32,
    pub scale_bits: u32,
    /// Declared message bound `2^delta` in the encoded domain.
    pub delta: u32,
    pub parties: usize,
    /// Skips the security table (insecure test rings).
    pub toy: bool,
}

impl PlanRequest {
    /// Message bound `2^(S + 8)`, matching the backends' default.
    pub fn new(lambda: u32, scale_bits: u32, parties: usize) -> PlanRequest {
        PlanRequest { lambda, scale_bits, delta: scale_bits + 8, parties, toy: false }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CryptoPlan {
    pub ring_dim: usize,
    /// Number of primes `L`; a fresh ciphertext has `L - 1` rescalings.
    pub levels: usize,
    /// Bit sizes `q_0 .. q_{L-1}`.
    pub prime_bits: Vec<u32>,
    pub log_q: f64,
    pub scale_bits: u32,
    /// Products between rescalings.
    pub r: usize,
    /// Primes that must remain for a refresh; `L - tau` levels are usable.
    pub tau: usize,
    /// `log2 (Q / S)`.
    pub log_k: f64,
    pub bootstrap_formula: f64,
    pub bootstraps_per_iteration: u64,
    pub multi_cipher: Vec<usize>,
    pub cost: f64,
    pub bytes_per_iteration: u64,
    pub lambda: u32,
    pub delta: u32,
    pub parties: usize,
    /// Insecure toy plan: the security table was not consulted.
    pub toy: bool,
}

impl CryptoPlan {
    /// Level index of the refresh floor.
    pub fn floor(&self) -> usize {
        self.tau - 1
    }

    pub fn max_level(&self) -> usize {
        self.levels - 1
    }
}

/// Levels any pipeline step needs at once: one product or mask, or a whole
/// activation evaluation.
pub fn pipeline_need(net: &Network) -> usize {
    net.acts.iter().flat_map(|a| [clog2(a.value.degree() + 1), clog2(a.deriv.degree() + 1)]).fold(1, usize::max)
}

fn chain_bits(levels: usize, scale_bits: u32) -> Vec<u32> {
    let mut v = vec![(scale_bits + 8).min(61)];
    v.extend(std::iter::repeat_n(scale_bits, levels - 1));
    v
}

fn mask_log_bound(req: &PlanRequest) -> f64 {
    ((req.parties + 1) as f64).log2() + (req.lambda + req.delta) as f64
}

/// Candidate `(ring, L)` as a plan, or the first constraint it breaks.
fn candidate(net: &Network, req: &PlanRequest, ring_dim: usize, levels: usize) -> std::result::Result<CryptoPlan, String> {
    let bits = chain_bits(levels, req.scale_bits);
    let log_q: f64 = bits.iter().map(|&b| b as f64).sum();
    if log_q - (req.scale_bits as f64) < 1.0 {
        return Err("Q = kS with k >= 2".into());
    }
    if !req.toy {
        let need = post_q_sec(log_q, req.lambda).map_err(|e| e.to_string())?;
        if ring_dim < need {
            return Err(format!("ring {ring_dim} below postQsec({log_q:.0}, {}) = {need}", req.lambda));
        }
    }
    let bound = mask_log_bound(req);
    let mut acc = 0.0;
    let floor = bits
        .iter()
        .position(|&b| {
            acc += b as f64;
            acc > bound
        })
        .ok_or_else(|| format!("Q = 2^{log_q:.0} cannot hide refresh masks of 2^{bound:.1}"))?;
    let tau = floor + 1;
    let need = pipeline_need(net);
    if floor + need > levels - 1 {
        return Err(format!("refresh floor {floor} leaves {} levels, a step needs {need}", levels - 1 - floor));
    }
    let slots = ring_dim / 2;
    let multi: Vec<usize> = (1..=net.depth())
        .map(|j| {
            let lay = layer_layout(&net.dims, j, slots);
            multi_cipher_split(lay.total_slots(), slots).max(lay.cipher_count)
        })
        .collect();
    let da = net.acts.iter().map(degree_of).max().unwrap_or(1);
    let formula = bootstrap_count(net.depth(), da, levels, tau, 1).map_err(|e| e.to_string())?;
    let cost = cost_eval(ring_dim, levels, tau, net, req.parties, net.global_iters.max(1)).map_err(|e| e.to_string())?;
    let z: usize = multi.iter().sum();
    let it = simulate_iteration(net, levels - 1, floor, req.parties, net.local_batch);
    let comm = comm_estimate(ring_dim, levels - 1, floor, net, req.parties);
    // Multi-cipher layers repeat each ciphertext's traffic per cipher.
    let bytes = comm.total() * z as u64 / net.depth() as u64;
    Ok(CryptoPlan {
        ring_dim,
        levels,
        prime_bits: bits,
        log_q,
        scale_bits: req.scale_bits,
        r: 1,
        tau,
        log_k: log_q - req.scale_bits as f64,
        bootstrap_formula: formula,
        bootstraps_per_iteration: it.total.bootstraps,
        multi_cipher: multi,
        cost,
        bytes_per_iteration: bytes,
        lambda: req.lambda,
        delta: req.delta,
        parties: req.parties,
        toy: req.toy,
    })
}

/// Exhaustive search over rings `2^12 .. 2^15` and `L` in `3..=12` for the
/// cheapest feasible plan; ties go to the smaller ring, then fewer levels.
pub fn select_params(net: &Network, req: &PlanRequest) -> Result<CryptoPlan> {
    if !req.toy && post_q_sec(0.0, req.lambda).is_err() {
        return Err(CostError::UnsupportedLambda(req.lambda));
    }
    let mut best: Option<CryptoPlan> = None;
    let mut binding = String::new();
    for log_n in 12..=15 {
        for levels in 3..=12 {
            match candidate(net, req, 1 << log_n, levels) {
                Ok(p) => {
                    if best.as_ref().is_none_or(|b| p.cost < b.cost) {
                        best = Some(p);
                    }
                }
                Err(e) => binding = e,
            }
        }
    }
    best.ok_or(CostError::Infeasible(binding))
}

/// Checks one fixed `(ring, L)` point, e.g. a published operating point.
pub fn evaluate_point(net: &Network, req: &PlanRequest, ring_dim: usize, levels: usize) -> Result<CryptoPlan> {
    candidate(net, req, ring_dim, levels).map_err(CostError::Infeasible)
}

/// Independent re-check of a plan against the selection constraints, from
/// its prime sizes alone. Returns the violated constraints.
pub fn check_plan(plan: &CryptoPlan, net: &Network) -> Vec<String> {
    let mut bad = Vec::new();
    if plan.prime_bits.len() != plan.levels {
        bad.push("L = |chain|".to_string());
    }
    if plan.prime_bits.iter().any(|&b| b == 0 || b > 61) {
        bad.push("prime sizes".to_string());
    }
    let q: u32 = plan.prime_bits.iter().sum();
    if (q as f64 - plan.log_q).abs() > 1e-9 {
        bad.push("Q = prod q_i".to_string());
    }
    if q < plan.scale_bits + 1 {
        bad.push("Q = kS, k >= 2".to_string());
    }
    let col = match plan.lambda {
        128 => Some(0),
        192 => Some(1),
        256 => Some(2),
        _ => None,
    };
    if let Some(col) = col.filter(|_| !plan.toy) {
        let ok = SECURITY_TABLE.iter().any(|(n, row)| *n <= plan.ring_dim && row[col] >= q);
        if !ok {
            bad.push("ring >= postQsec(Q, lambda)".to_string());
        }
    }
    // Q_{L - tau} > 2^lambda * |plaintext| * N, with the modulus that
    // remains at the refresh floor.
    if plan.tau == 0 || plan.tau > plan.levels {
        bad.push("0 < tau <= L".to_string());
    } else {
        let q_floor: u32 = plan.prime_bits[..plan.tau].iter().sum();
        let need = plan.lambda as f64 + plan.delta as f64 + (plan.parties as f64).log2();
        if (q_floor as f64) <= need {
            bad.push("Q at the refresh floor > 2^lambda |plaintext| N".to_string());
        }
        if plan.levels - plan.tau < pipeline_need(net) {
            bad.push("usable levels cover one step".to_string());
        }
    }
    bad
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::spec::NetworkSpec;

    fn mlp(widths: &[usize], d: usize) -> Network {
        Network::compile(&NetworkSpec::mlp(9, widths, "sigmoid", d, 1.0, 10, 100)).unwrap()
    }

    #[test]
    fn bootstrap_count_examples() {
        assert_eq!(bootstrap_count(2, 3, 7, 1, 3).unwrap(), 1.0);
        assert_eq!(bootstrap_count(0, 3, 7, 1, 3).unwrap(), 0.0);
        let a = bootstrap_count(3, 7, 5, 1, 1).unwrap();
        let b = bootstrap_count(3, 7, 9, 1, 1).unwrap();
        assert_eq!(a, 2.0 * b);
        assert_eq!(bootstrap_count(2, 3, 1, 1, 1), Err(CostError::NoHeadroom { levels: 1, tau: 1 }));
    }

    #[test]
    fn activation_products_follow_the_table() {
        // Table form, expanded by hand for each degree.
        for (d, expect) in [(3, 2), (5, 4), (7, 5), (15, 7), (31, 12)] {
            assert_eq!(phi_mul_ct(d), expect, "d = {d}");
        }
        assert_eq!(phi_mul_ct_exact(2), 1);
        assert_eq!(phi_mul_ct_exact(3), 2);
        assert_eq!(phi_mul_ct_exact(4), 3);
    }

    #[test]
    fn zero_iterations_cost_nothing_and_cost_grows() {
        let net = mlp(&[64, 2], 3);
        assert_eq!(cost_eval(8192, 6, 1, &net, 10, 0).unwrap(), 0.0);
        let mut last = 0.0;
        for log_n in 12..=15 {
            let c = cost_eval(1 << log_n, 6, 1, &net, 10, 5).unwrap();
            assert!(c >= last);
            last = c;
        }
        for m in 1..5 {
            assert!(cost_eval(8192, 6, 1, &net, 10, m + 1).unwrap() >= cost_eval(8192, 6, 1, &net, 10, m).unwrap());
        }
    }

    #[test]
    fn single_layer_cost_matches_hand_expansion() {
        // One layer 16 -> 64 with cubic sigmoid; h_2 counts as 1.
        let net = Network::compile(&NetworkSpec::mlp(16, &[64], "sigmoid", 3, 1.0, 1, 1)).unwrap();
        let (n, l, tau) = (8192.0f64, 6.0f64, 1usize);
        let ks = n * 13.0 * (l + 1.0) * (l + 1.0);
        let mul_pt = 2.0 * n * (l + 1.0);
        let mul_ct = 4.0 * n * (l + 1.0) + ks;
        let phi = 2.0 * mul_ct; // degree 3
        let phi_d = 2.0 * mul_ct; // degree 2, table form
        let body = (2.0 * 4.0 + 0.0) * ks + 3.0 * mul_ct + 2.0 * mul_pt + phi + phi_d - 2.0 * 6.0 * ks;
        // B = 1 * (5 + 2 + 2) / (6 - 1) = 1.8 -> 2 refreshes.
        let db = n * 13.0 * (l + 1.0) * 2.0;
        let hand = 3.0 * (body + 2.0 * db);
        let got = cost_eval(8192, 6, tau, &net, 4, 3).unwrap();
        assert!((got - hand).abs() <= 1e-9 * hand, "{got} vs {hand}");
    }

    #[test]
    fn fixture_round_trips_and_agrees_with_the_backend_table() {
        let fx = security_fixture();
        assert_eq!(fx.len(), SECURITY_TABLE.len());
        for ((n, row), (m, row2)) in fx.iter().zip(SECURITY_TABLE.iter()) {
            assert_eq!((n, row), (m, row2));
            for (i, lambda) in [128, 192, 256].into_iter().enumerate() {
                assert_eq!(post_q_sec(row[i] as f64, lambda).unwrap(), *n);
            }
        }
        assert_eq!(post_q_sec(1.0, 100), Err(CostError::UnsupportedLambda(100)));
        let mut last = 0;
        for q in (10..880).step_by(7) {
            let n = post_q_sec(q as f64, 128).unwrap();
            assert!(n >= last);
            last = n;
        }
        // Six 32-bit-scale primes with a 40-bit base fit the 2^13 budget.
        assert!(chain_bits(6, 32).iter().sum::<u32>() <= 218);
        assert_eq!(post_q_sec(chain_bits(6, 32).iter().sum::<u32>() as f64, 128).unwrap(), 8192);
    }

    #[test]
    fn toy_requests_pick_the_smallest_ring() {
        let net = mlp(&[64, 2], 3);
        let req = PlanRequest { lambda: 16, scale_bits: 32, delta: 40, parties: 4, toy: true };
        let p = select_params(&net, &req).unwrap();
        assert_eq!(p.ring_dim, 4096);
        assert!(check_plan(&p, &net).is_empty());
    }

    #[test]
    fn selected_plans_pass_the_checker() {
        for (widths, lambda, parties) in [(vec![64, 2], 128, 10), (vec![64, 64, 2], 128, 3), (vec![32, 2], 192, 50)] {
            let net = mlp(&widths, 3);
            match select_params(&net, &PlanRequest::new(lambda, 32, parties)) {
                Ok(p) => assert!(check_plan(&p, &net).is_empty(), "{:?}", check_plan(&p, &net)),
                Err(e) => panic!("{e}"),
            }
        }
    }

    #[test]
    fn estimate_is_zero_for_one_party_and_affine_map_traffic() {
        let net = mlp(&[16, 2], 3);
        assert_eq!(comm_estimate(64, 7, 1, &net, 1).total(), 0);
        let slope = |n: usize| comm_estimate(64, 7, 1, &net, n + 1).map - comm_estimate(64, 7, 1, &net, n).map;
        assert_eq!(slope(2), slope(9));
        assert_eq!(slope(2), 2 * ciphertext_bytes(64, 7) as u64);
    }
}
