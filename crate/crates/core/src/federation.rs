//! Synchronous federated rounds over simulated parties.
//!
//! One backend instance evaluates on behalf of every party; the orchestrator
//! decides who does what and reports every message that protocol step
//! implies to the [`Netsim`]. Party 0 is the root: it initializes, encrypts
//! and updates the model.

use serde::{Deserialize, Serialize};
use std::collections::VecDeque;
use std::io::Write;
use thiserror::Error;

use crate::mhe::backend::{Backend, Counts, EventKind, ProtocolEvent};
use crate::mhe::backend::default_rotation_offsets;
use crate::mhe::error::MheError;
use crate::mhe::serialize::{ciphertext_bytes, poly_bytes};
use crate::netsim::{Message, MsgKind, NetConfig, Netsim, WireError, WirePhase, WireStats};
use crate::nn::pipeline::{EncryptedModel, Engine, GradientSet};
use crate::nn::plain::PlainTrainer;
use crate::nn::{init_weights, Network, NnError, Sample};

#[derive(Debug, Error)]
pub enum FedError {
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Mhe(#[from] MheError),
    #[error(transparent)]
    Wire(#[from] WireError),
    #[error("party {0} has an empty shard")]
    EmptyShard(usize),
    #[error("{got} shards for {expected} parties")]
    ShardCount { expected: usize, got: usize },
    #[error("round aborted: {got} of {expected} parties reported")]
    MissingParty { expected: usize, got: usize },
    #[error("shard of party {party} has {got} features, the network expects {expected}")]
    ConfigMismatch { party: usize, expected: usize, got: usize },
}

pub type Result<T> = std::result::Result<T, FedError>;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TopologyKind {
    #[default]
    Tree,
    Star,
    /// Every pair linked; aggregation runs over the star through the root.
    Full,
}

/// Aggregation tree rooted at party 0 plus the physical links.
#[derive(Clone, Debug, PartialEq)]
pub struct Topology {
    pub kind: TopologyKind,
    pub parent: Vec<Option<usize>>,
    pub children: Vec<Vec<usize>>,
    pub links: Vec<(usize, usize)>,
}

impl Topology {
    pub fn new(kind: TopologyKind, n: usize) -> Topology {
        let parent: Vec<Option<usize>> = (0..n)
            .map(|i| match (i, kind) {
                (0, _) => None,
                (_, TopologyKind::Tree) => Some((i - 1) / 2),
                _ => Some(0),
            })
            .collect();
        let mut children = vec![Vec::new(); n];
        for (i, p) in parent.iter().enumerate() {
            if let Some(p) = p {
                children[*p].push(i);
            }
        }
        let links = match kind {
            TopologyKind::Full => (0..n).flat_map(|a| (a + 1..n).map(move |b| (a, b))).collect(),
            _ => parent.iter().enumerate().filter_map(|(i, p)| p.map(|p| (p, i))).collect(),
        };
        Topology { kind, parent, children, links }
    }

    pub fn len(&self) -> usize {
        self.parent.len()
    }

    pub fn is_empty(&self) -> bool {
        self.parent.is_empty()
    }

    /// Parent-to-child edges of the aggregation tree, breadth first.
    pub fn down_edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        let mut queue = VecDeque::from([0]);
        while let Some(v) = queue.pop_front() {
            for &c in &self.children[v] {
                out.push((v, c));
                queue.push_back(c);
            }
        }
        out
    }

    /// Children before parents.
    pub fn post_order(&self) -> Vec<usize> {
        let mut out: Vec<usize> = self.down_edges().into_iter().map(|(_, c)| c).rev().collect();
        out.push(0);
        out
    }

    /// Spanning-tree edges oriented away from `src`, breadth first over the links.
    pub fn spanning_from(&self, src: usize) -> Vec<(usize, usize)> {
        let n = self.len();
        let mut adj = vec![Vec::new(); n];
        for &(a, b) in &self.links {
            adj[a].push(b);
            adj[b].push(a);
        }
        let mut seen = vec![false; n];
        seen[src] = true;
        let mut queue = VecDeque::from([src]);
        let mut out = Vec::new();
        while let Some(v) = queue.pop_front() {
            for &w in &adj[v] {
                if !seen[w] {
                    seen[w] = true;
                    out.push((v, w));
                    queue.push_back(w);
                }
            }
        }
        out
    }

    pub fn is_connected(&self) -> bool {
        self.is_empty() || self.spanning_from(0).len() + 1 == self.len()
    }
}

/// Per-party state. The secret share lives inside the backend under the
/// party's index; the shard never leaves this struct.
#[derive(Clone, Debug)]
pub struct PartyState {
    pub id: usize,
    pub parent: Option<usize>,
    pub children: Vec<usize>,
    pub shard: Vec<Sample>,
}

impl PartyState {
    /// `b` samples for iteration `k`, cycling through the shard.
    pub fn batch(&self, k: usize, b: usize) -> Vec<Sample> {
        (0..b).map(|t| self.shard[(k * b + t) % self.shard.len()].clone()).collect()
    }
}

/// Pooled feature moments from the collective statistics round.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub count: f64,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Normalization {
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        x.iter().zip(&self.mean).zip(&self.std).map(|((v, m), s)| (v - m) / s).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FedConfig {
    pub parties: usize,
    pub topology: TopologyKind,
    pub seed: u64,
    pub normalize: bool,
    pub net: NetConfig,
}

impl Default for FedConfig {
    fn default() -> Self {
        FedConfig { parties: 3, topology: TopologyKind::Tree, seed: 1, normalize: true, net: NetConfig::default() }
    }
}

/// One line of the metrics log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationMetrics {
    pub iteration: usize,
    pub loss: Option<f64>,
    pub accuracy: Option<f64>,
    pub counts: Counts,
    pub bytes: u64,
    pub messages: u64,
    pub simulated_ms: f64,
}

/// Approximate per-party key-generation upload: public-key share, two
/// relinearization rounds and one rotation-key share per offset, each a
/// gadget vector of `L + 1` polynomials over the chain and the special prime.
pub fn keygen_share_bytes(ring_dim: usize, levels: usize, slots: usize) -> usize {
    let limbs = levels + 2;
    let gadget = levels + 1;
    let rotations = default_rotation_offsets(slots).len();
    poly_bytes(ring_dim, limbs) * (1 + 2 * 2 * gadget + rotations * gadget)
}

/// Collective public material broadcast to every party.
pub fn public_key_bytes(ring_dim: usize, levels: usize, slots: usize) -> usize {
    let limbs = levels + 2;
    let gadget = levels + 1;
    let rotations = default_rotation_offsets(slots).len();
    poly_bytes(ring_dim, limbs) * (2 + 2 * gadget * (1 + rotations))
}

/// Per-party traffic of one refresh started at `level`: the initiator's
/// `c_1` on the way out and the party's share on the way back.
pub fn refresh_exchange_bytes(ring_dim: usize, level: usize, share_bytes: usize) -> (usize, usize) {
    (poly_bytes(ring_dim, level + 1), share_bytes)
}

pub struct Federation<'a, B: Backend> {
    pub engine: Engine<'a, B>,
    pub topo: Topology,
    pub parties: Vec<PartyState>,
    pub wire: Netsim,
    pub norm: Option<Normalization>,
    pub model: EncryptedModel<B::Ct>,
    pub metrics: Vec<IterationMetrics>,
}

impl<'a, B: Backend> Federation<'a, B> {
    /// PREPARE: key generation traffic, collective normalization, and the
    /// root's encrypted initial model.
    pub fn prepare(be: &'a B, net: &'a Network, cfg: &FedConfig, shards: Vec<Vec<Sample>>) -> Result<Self> {
        if shards.len() != cfg.parties || be.n_parties() != cfg.parties {
            return Err(FedError::ShardCount { expected: cfg.parties, got: shards.len() });
        }
        for (i, s) in shards.iter().enumerate() {
            if s.is_empty() {
                return Err(FedError::EmptyShard(i));
            }
            if let Some(bad) = s.iter().find(|x| x.x.len() != net.logical_input()) {
                return Err(FedError::ConfigMismatch { party: i, expected: net.logical_input(), got: bad.x.len() });
            }
        }
        let engine = Engine::new(be, net)?;
        let topo = Topology::new(cfg.topology, cfg.parties);
        let parties = shards
            .into_iter()
            .enumerate()
            .map(|(id, shard)| PartyState { id, parent: topo.parent[id], children: topo.children[id].clone(), shard })
            .collect();
        let model = engine.encrypt_model(&init_weights(net, cfg.seed))?;
        let mut fed = Federation { engine, topo, parties, wire: Netsim::new(cfg.net), norm: None, model, metrics: Vec::new() };
        fed.key_generation()?;
        if cfg.normalize {
            fed.normalize()?;
        }
        be.instr().take_events();
        Ok(fed)
    }

    fn send(&mut self, from: usize, to: usize, kind: MsgKind, phase: WirePhase, bytes: usize) -> Result<()> {
        self.wire.deliver(Message { from, to, kind, phase, bytes })?;
        Ok(())
    }

    fn ct_bytes(&self, c: &B::Ct) -> usize {
        ciphertext_bytes(self.engine.be.params().ring_dim, self.engine.be.level(c))
    }

    fn key_generation(&mut self) -> Result<()> {
        let be = self.engine.be;
        let (n, l, s) = (be.params().ring_dim, be.max_level(), be.slots());
        let up = keygen_share_bytes(n, l, s);
        let down = public_key_bytes(n, l, s);
        for (p, c) in self.topo.down_edges().into_iter().rev() {
            self.send(c, p, MsgKind::KeyGenShare, WirePhase::Prepare, up)?;
        }
        self.wire.barrier();
        for (p, c) in self.topo.down_edges() {
            self.send(p, c, MsgKind::PublicKey, WirePhase::Prepare, down)?;
        }
        self.wire.barrier();
        Ok(())
    }

    /// Each party encrypts `(count, sum x, sum x^2)`; sums travel up the tree;
    /// one collective decryption yields the pooled moments.
    fn normalize(&mut self) -> Result<()> {
        let be = self.engine.be;
        let d = self.engine.net.logical_input();
        if 2 * d + 1 > be.slots() {
            return Err(FedError::Nn(NnError::Shape(format!("{d} features do not fit the moment vector"))));
        }
        let mut sums: Vec<Option<B::Ct>> = vec![None; self.parties.len()];
        for v in self.topo.post_order() {
            let mut m = vec![0.0; 2 * d + 1];
            m[0] = self.parties[v].shard.len() as f64;
            for s in &self.parties[v].shard {
                for (f, x) in s.x.iter().enumerate() {
                    m[1 + f] += x;
                    m[1 + d + f] += x * x;
                }
            }
            let mut acc = be.encrypt(&m)?;
            for c in self.topo.children[v].clone() {
                acc = be.add(&acc, sums[c].as_ref().unwrap())?;
            }
            if let Some(p) = self.topo.parent[v] {
                let bytes = self.ct_bytes(&acc);
                self.send(v, p, MsgKind::Ciphertext, WirePhase::Prepare, bytes)?;
            }
            sums[v] = Some(acc);
        }
        self.wire.barrier();
        let total = sums[0].take().unwrap();
        self.collective_decrypt_traffic(&total)?;
        let m = be.decrypt(&total)?;
        let count = m[0].round();
        let mean: Vec<f64> = (0..d).map(|f| m[1 + f] / count).collect();
        let std: Vec<f64> = (0..d)
            .map(|f| {
                let var = m[1 + d + f] / count - mean[f] * mean[f];
                if var > 1e-12 { var.sqrt() } else { 1.0 }
            })
            .collect();
        let norm = Normalization { count, mean, std };
        for p in &mut self.parties {
            for s in &mut p.shard {
                s.x = norm.apply(&s.x);
            }
        }
        self.norm = Some(norm);
        Ok(())
    }

    /// The aggregate goes down to every party; decryption shares come up and
    /// their combination goes back down.
    fn collective_decrypt_traffic(&mut self, c: &B::Ct) -> Result<()> {
        let (n, level) = (self.engine.be.params().ring_dim, self.engine.be.level(c));
        let ct = self.ct_bytes(c);
        let share = crate::mhe::serialize::decrypt_share_bytes(n, level);
        let edges = self.topo.down_edges();
        for &(p, ch) in &edges {
            self.send(p, ch, MsgKind::Ciphertext, WirePhase::Decrypt, ct)?;
        }
        for &(p, ch) in edges.iter().rev() {
            self.send(ch, p, MsgKind::DecryptShare, WirePhase::Decrypt, share)?;
        }
        for &(p, ch) in &edges {
            self.send(p, ch, MsgKind::DecryptShare, WirePhase::Decrypt, share)?;
        }
        self.wire.barrier();
        Ok(())
    }

    /// Wire traffic of the refreshes and key switches `initiator` just ran.
    fn protocol_traffic(&mut self, initiator: usize, events: Vec<ProtocolEvent>, phase: WirePhase) -> Result<()> {
        let n = self.engine.be.params().ring_dim;
        let span = self.topo.spanning_from(initiator);
        for e in events {
            match e.kind {
                EventKind::Refresh => {
                    let (out, back) = refresh_exchange_bytes(n, e.level, e.share_bytes);
                    for &(a, b) in &span {
                        self.send(a, b, MsgKind::Ciphertext, phase, out)?;
                    }
                    for &(a, b) in span.iter().rev() {
                        self.send(b, a, MsgKind::RefreshShare, phase, back)?;
                    }
                }
                EventKind::KeySwitch => {
                    for &(a, b) in span.iter().rev() {
                        self.send(b, a, MsgKind::KeySwitchShare, WirePhase::KeySwitch, e.share_bytes)?;
                    }
                }
                // Decryptions outside a protocol step are evaluation-only.
                _ => {}
            }
        }
        Ok(())
    }

    /// Local batches of iteration `k`, in party order.
    pub fn batches(&self, k: usize) -> Vec<Vec<Sample>> {
        let b = self.engine.net.local_batch;
        self.parties.iter().map(|p| p.batch(k, b)).collect()
    }

    /// MAP: the model travels down the tree, then every party computes its
    /// local gradient.
    pub fn map_phase(&mut self, k: usize) -> Result<Vec<GradientSet<B::Ct>>> {
        let be = self.engine.be;
        let sizes: Vec<usize> = self.model.weights.iter().map(|w| self.ct_bytes(&w.ciphers[0])).collect();
        for (p, c) in self.topo.down_edges() {
            for &b in &sizes {
                self.send(p, c, MsgKind::Ciphertext, WirePhase::Map, b)?;
            }
        }
        self.wire.barrier();
        let batches = self.batches(k);
        let mut out = Vec::with_capacity(batches.len());
        for (i, batch) in batches.iter().enumerate() {
            be.instr().take_events();
            out.push(self.engine.lgd_compute(&self.model, batch)?);
            let ev = be.instr().take_events();
            self.protocol_traffic(i, ev, WirePhase::Bootstrap)?;
        }
        self.wire.barrier();
        Ok(out)
    }

    /// COMBINE: homomorphic sums up the tree, children in order.
    pub fn combine_phase(&mut self, grads: Vec<GradientSet<B::Ct>>) -> Result<GradientSet<B::Ct>> {
        if grads.len() != self.parties.len() {
            return Err(FedError::MissingParty { expected: self.parties.len(), got: grads.len() });
        }
        let mut acc: Vec<Option<GradientSet<B::Ct>>> = grads.into_iter().map(Some).collect();
        for v in self.topo.post_order() {
            let mut sum = acc[v].take().unwrap();
            for c in self.topo.children[v].clone() {
                sum = self.engine.add_grads(&sum, acc[c].as_ref().unwrap())?;
            }
            if let Some(p) = self.topo.parent[v] {
                for g in &sum.grads {
                    let b = self.ct_bytes(&g.ciphers[0]);
                    self.send(v, p, MsgKind::Ciphertext, WirePhase::Combine, b)?;
                }
            }
            acc[v] = Some(sum);
        }
        self.wire.barrier();
        Ok(acc[0].take().unwrap())
    }

    /// REDUCE: the root applies the averaged update and refreshes the weights.
    pub fn reduce_phase(&mut self, agg: &GradientSet<B::Ct>) -> Result<()> {
        let be = self.engine.be;
        let net = self.engine.net;
        be.instr().take_events();
        self.model = self.engine.apply_update(&self.model, agg, net.learning_rate, net.local_batch, self.parties.len())?;
        let ev = be.instr().take_events();
        self.protocol_traffic(0, ev, WirePhase::Reduce)?;
        self.wire.barrier();
        Ok(())
    }

    /// One global iteration.
    pub fn round(&mut self, k: usize) -> Result<()> {
        let grads = self.map_phase(k)?;
        let agg = self.combine_phase(grads)?;
        self.reduce_phase(&agg)
    }

    /// `m` global iterations. With `eval`, each iteration also reports loss
    /// and accuracy of the current weights on held-out plaintext; that
    /// decryption is an evaluation oracle and never touches the wire.
    pub fn train(&mut self, m: usize, eval: Option<&[Sample]>, mut sink: Option<&mut dyn Write>) -> Result<()> {
        let be = self.engine.be;
        for _ in 0..m {
            let k = self.model.iteration;
            let before_counts = be.instr().total();
            let before_wire = self.wire.stats.total;
            self.round(k)?;
            let mut counts = be.instr().total();
            counts = diff(counts, before_counts);
            let (loss, accuracy) = match eval {
                Some(data) => {
                    let t = self.plain_view()?;
                    be.instr().take_events();
                    let data = self.normalized(data);
                    (Some(t.loss(&data)), Some(t.accuracy(&data)))
                }
                None => (None, None),
            };
            let w = self.wire.stats.total;
            let rec = IterationMetrics {
                iteration: k + 1,
                loss,
                accuracy,
                counts,
                bytes: w.bytes - before_wire.bytes,
                messages: w.messages - before_wire.messages,
                simulated_ms: self.wire.now_ms(),
            };
            if let Some(s) = sink.as_deref_mut() {
                writeln!(s, "{}", serde_json::to_string(&rec).expect("metrics serialize")).map_err(|e| FedError::Nn(NnError::Shape(e.to_string())))?;
            }
            self.metrics.push(rec);
        }
        Ok(())
    }

    /// Plaintext trainer holding the current (decrypted) weights.
    pub fn plain_view(&self) -> Result<PlainTrainer> {
        Ok(PlainTrainer::new(self.engine.net, &self.engine.decrypt_model(&self.model)?))
    }

    /// Held-out samples under the collective normalization.
    pub fn normalized(&self, data: &[Sample]) -> Vec<Sample> {
        match &self.norm {
            None => data.to_vec(),
            Some(n) => data.iter().map(|s| Sample { x: n.apply(&s.x), y: s.y.clone() }).collect(),
        }
    }

    /// Oblivious prediction for an outside querier (node id `N`): the query
    /// arrives encrypted, the root evaluates, all parties join the key switch.
    pub fn oblivious_query(&mut self, x: &[f64], querier: &B::Querier) -> Result<B::Ct> {
        let be = self.engine.be;
        let q = self.parties.len();
        let x = match &self.norm {
            Some(n) => n.apply(x),
            None => x.to_vec(),
        };
        let ct = self.engine.encrypt_query(&x)?;
        let b = self.ct_bytes(&ct);
        self.wire.deliver(Message { from: q, to: 0, kind: MsgKind::Ciphertext, phase: WirePhase::KeySwitch, bytes: b })?;
        be.instr().take_events();
        let out = self.engine.predict_oblivious(&self.model, &ct, querier)?;
        let ev = be.instr().take_events();
        self.protocol_traffic(0, ev, WirePhase::Bootstrap)?;
        let b = self.ct_bytes(&out);
        self.wire.deliver(Message { from: 0, to: q, kind: MsgKind::Ciphertext, phase: WirePhase::KeySwitch, bytes: b })?;
        self.wire.barrier();
        Ok(out)
    }

    pub fn stats(&self) -> &WireStats {
        &self.wire.stats
    }
}

fn diff(a: Counts, b: Counts) -> Counts {
    Counts {
        rotations: a.rotations - b.rotations,
        embedded_rotations: a.embedded_rotations - b.embedded_rotations,
        mul_ct: a.mul_ct - b.mul_ct,
        mul_pt: a.mul_pt - b.mul_pt,
        mul_const: a.mul_const - b.mul_const,
        rescales: a.rescales - b.rescales,
        bootstraps: a.bootstraps - b.bootstraps,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mhe::params::ChainSpec;
    use crate::mhe::reference::ReferenceBackend;
    use crate::nn::spec::NetworkSpec;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha20Rng;

    fn separable(n: usize, seed: u64) -> Vec<Sample> {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let x: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let c = usize::from(x[0] + x[1] > 0.0);
                Sample { x, y: vec![f64::from(u8::from(c == 0)), f64::from(u8::from(c == 1))] }
            })
            .collect()
    }

    fn shards(n: usize, per: usize) -> Vec<Vec<Sample>> {
        (0..n).map(|i| separable(per, 100 + i as u64)).collect()
    }

    fn setup(n: usize, lr: f64) -> (ReferenceBackend, Network) {
        let be = ReferenceBackend::new(ChainSpec::toy(5, 7).build().unwrap(), n).unwrap();
        let net = Network::compile(&NetworkSpec::mlp(4, &[4, 2], "sigmoid", 3, lr, 2, 20)).unwrap();
        (be, net)
    }

    fn cfg(n: usize, topology: TopologyKind, normalize: bool) -> FedConfig {
        FedConfig { parties: n, topology, seed: 7, normalize, net: NetConfig::default() }
    }

    #[test]
    fn topologies_span_every_party() {
        for kind in [TopologyKind::Tree, TopologyKind::Star, TopologyKind::Full] {
            for n in 1..12 {
                let t = Topology::new(kind, n);
                assert!(t.is_connected());
                assert_eq!(t.down_edges().len(), n - 1);
                let po = t.post_order();
                assert_eq!(po.len(), n);
                assert_eq!(*po.last().unwrap(), 0);
                for src in 0..n {
                    assert_eq!(t.spanning_from(src).len(), n - 1);
                }
            }
        }
        let t = Topology::new(TopologyKind::Tree, 7);
        assert_eq!(t.children[0], vec![1, 2]);
        assert_eq!(t.children[2], vec![5, 6]);
        assert_eq!(Topology::new(TopologyKind::Full, 5).links.len(), 10);
    }

    #[test]
    fn star_matches_the_plain_trainer_bitwise() {
        let (be, net) = setup(3, 1.0);
        let mut fed = Federation::prepare(&be, &net, &cfg(3, TopologyKind::Star, false), shards(3, 8)).unwrap();
        let mut t = fed.plain_view().unwrap();
        for k in 0..5 {
            t.step(&fed.batches(k));
            fed.round(k).unwrap();
        }
        assert_eq!(fed.plain_view().unwrap().weights(), t.weights());
    }

    #[test]
    fn tree_and_star_aggregate_to_the_same_model() {
        let run = |kind| {
            let (be, net) = setup(6, 1.0);
            let mut fed = Federation::prepare(&be, &net, &cfg(6, kind, false), shards(6, 4)).unwrap();
            fed.train(3, None, None).unwrap();
            fed.plain_view().unwrap().weights()
        };
        let (a, b) = (run(TopologyKind::Tree), run(TopologyKind::Star));
        for (x, y) in a.iter().zip(&b) {
            for (u, v) in x.data.iter().zip(&y.data) {
                assert!((u - v).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn single_party_sends_nothing_and_zero_iterations_change_nothing() {
        let (be, net) = setup(1, 1.0);
        let mut fed = Federation::prepare(&be, &net, &cfg(1, TopologyKind::Tree, true), shards(1, 6)).unwrap();
        let w0 = fed.plain_view().unwrap().weights();
        fed.train(0, None, None).unwrap();
        assert_eq!(fed.plain_view().unwrap().weights(), w0);
        fed.train(2, None, None).unwrap();
        assert_eq!(fed.stats().total.messages, 0);
    }

    #[test]
    fn only_whitelisted_traffic_and_every_phase_accounted() {
        let (be, net) = setup(4, 1.0);
        let mut fed = Federation::prepare(&be, &net, &cfg(4, TopologyKind::Tree, true), shards(4, 6)).unwrap();
        let mut sink = Vec::new();
        fed.train(2, Some(&separable(20, 9)), Some(&mut sink)).unwrap();
        assert!(fed.wire.log.iter().all(|m| m.kind.whitelisted()));
        for phase in [WirePhase::Prepare, WirePhase::Decrypt, WirePhase::Map, WirePhase::Combine, WirePhase::Bootstrap, WirePhase::Reduce] {
            assert!(fed.stats().per_phase.get(&phase).is_some_and(|t| t.messages > 0), "{phase:?}");
        }
        let lines: Vec<IterationMetrics> = String::from_utf8(sink).unwrap().lines().map(|l| serde_json::from_str(l).unwrap()).collect();
        assert_eq!(lines.len(), 2);
        assert_eq!(lines, fed.metrics);
        assert!(lines[1].accuracy.is_some() && lines[1].bytes > 0);
    }

    #[test]
    fn normalization_pools_all_shards() {
        let (be, net) = setup(3, 1.0);
        let raw = shards(3, 5);
        let all: Vec<&Sample> = raw.iter().flatten().collect();
        let fed = Federation::prepare(&be, &net, &cfg(3, TopologyKind::Tree, true), raw.clone()).unwrap();
        let norm = fed.norm.as_ref().unwrap();
        assert_eq!(norm.count, 15.0);
        // Two-pass reference moments.
        for f in 0..4 {
            let mean = all.iter().map(|s| s.x[f]).sum::<f64>() / 15.0;
            let var = all.iter().map(|s| (s.x[f] - mean).powi(2)).sum::<f64>() / 15.0;
            assert!((norm.mean[f] - mean).abs() < 1e-12);
            assert!((norm.std[f] - var.sqrt()).abs() < 1e-9);
        }
    }

    #[test]
    fn bad_configurations_are_rejected() {
        let (be, net) = setup(3, 1.0);
        let mut s = shards(3, 4);
        assert!(matches!(Federation::prepare(&be, &net, &cfg(3, TopologyKind::Tree, false), s[..2].to_vec()), Err(FedError::ShardCount { .. })));
        s[1].clear();
        assert!(matches!(Federation::prepare(&be, &net, &cfg(3, TopologyKind::Tree, false), s), Err(FedError::EmptyShard(1))));
        let mut fed = Federation::prepare(&be, &net, &cfg(3, TopologyKind::Tree, false), shards(3, 4)).unwrap();
        let mut g = fed.map_phase(0).unwrap();
        g.pop();
        assert!(matches!(fed.combine_phase(g), Err(FedError::MissingParty { expected: 3, got: 2 })));
    }

    #[test]
    fn separable_problem_is_learned() {
        // The averaged step eta/(bN) is about 2.7; slopes of the cubic sigmoid are small.
        let (be, net) = setup(3, 16.0);
        let mut fed = Federation::prepare(&be, &net, &cfg(3, TopologyKind::Tree, true), shards(3, 20)).unwrap();
        let test = separable(200, 77);
        fed.train(20, Some(&test), None).unwrap();
        let acc = fed.metrics.last().unwrap().accuracy.unwrap();
        assert!(acc >= 0.9, "accuracy {acc}");
    }
}
