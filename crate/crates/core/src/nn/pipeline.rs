//! Per-sample encrypted forward and backward passes and the model update.
//!
//! Every step asks for the levels it consumes through [`Engine::ready`], which
//! refreshes a ciphertext whenever the step would leave it below the refresh
//! floor. A refresh that would precede a replication is fused with it: the
//! replication becomes the refresh transform and its rotations are absorbed.

use crate::approx::fit::ApproxPoly;
use crate::approx::{eval_encrypted_noconst, levels_needed};
use crate::mhe::backend::{Backend, Phase, Tag};
use crate::mhe::transform::LinearTransform;
use crate::packing::{ris, rr, Matrix, PackedTensor};

use super::geometry::{Geometry, Handoff, Replication};
use super::spec::Network;
use super::{NnError, Result, Sample};

#[derive(Clone, Debug)]
pub struct EncryptedModel<C> {
    pub weights: Vec<PackedTensor<C>>,
    /// Completed global iterations.
    pub iteration: usize,
}

/// Gradients in the layouts of the weights they update.
#[derive(Clone, Debug)]
pub struct GradientSet<C> {
    pub grads: Vec<PackedTensor<C>>,
}

/// First-layer operand: plaintext while training, encrypted for oblivious queries.
#[derive(Clone, Debug)]
pub enum Operand<C> {
    Plain(Vec<f64>),
    Cipher(C),
}

/// Forward values the backward pass reads back.
#[derive(Clone, Debug)]
pub struct Trace<C> {
    pub input: Operand<C>,
    /// `U_j` at its pre-replication slots, zero elsewhere.
    pub pre: Vec<C>,
    /// `L_j` as handed to layer `j + 1`; the last entry is the output.
    pub outs: Vec<C>,
}

enum Deriv<C> {
    Cipher(C),
    Plain(Vec<f64>),
}

pub struct Engine<'a, B: Backend> {
    pub be: &'a B,
    pub net: &'a Network,
    pub geom: Geometry,
    floor: usize,
}

impl<'a, B: Backend> Engine<'a, B> {
    pub fn new(be: &'a B, net: &'a Network) -> Result<Self> {
        let geom = Geometry::new(net, be.slots())?;
        let floor = be.refresh_level();
        let need = net
            .acts
            .iter()
            .flat_map(|a| [levels_needed(&a.value), levels_needed(&a.deriv)])
            .fold(1, usize::max);
        if floor + need > be.max_level() {
            return Err(NnError::ChainTooShort { need, floor, max: be.max_level() });
        }
        Ok(Engine { be, net, geom, floor })
    }

    /// Lowest level a ciphertext may be left at.
    pub fn floor(&self) -> usize {
        self.floor
    }

    fn tag(&self, layer: usize, phase: Phase) {
        self.be.instr().set_tag(Tag { layer, phase });
    }

    /// `c`, refreshed first if spending `need` levels would cross the floor.
    pub fn ready(&self, c: &B::Ct, need: usize) -> Result<B::Ct> {
        if self.be.level(c) >= need + self.floor {
            Ok(c.clone())
        } else {
            Ok(self.be.bootstrap(c)?)
        }
    }

    fn mask(&self, c: &B::Ct, m: &[f64]) -> Result<B::Ct> {
        Ok(self.be.mul_mask(&self.ready(c, 1)?, m)?)
    }

    /// `p(u) - p(0)` everywhere plus `p(0)` on `support`: slots outside the
    /// support stay zero.
    fn activate(&self, u: &B::Ct, p: &ApproxPoly, support: &[f64]) -> Result<B::Ct> {
        let y = eval_encrypted_noconst(self.be, &self.ready(u, levels_needed(p))?, p)?;
        let c0 = p.coeffs[0];
        if c0 == 0.0 {
            return Ok(y);
        }
        let shift: Vec<f64> = support.iter().map(|m| m * c0).collect();
        Ok(self.be.add_plain(&y, &shift)?)
    }

    fn derivative(&self, u: &B::Ct, p: &ApproxPoly, support: &[f64]) -> Result<Deriv<B::Ct>> {
        if p.degree() == 0 {
            return Ok(Deriv::Plain(support.iter().map(|m| m * p.coeffs[0]).collect()));
        }
        Ok(Deriv::Cipher(self.activate(u, p, support)?))
    }

    /// Replicates `c` (zero outside the source support), leaving `need_after`
    /// levels usable; fuses with a refresh when those are missing.
    fn replicate(&self, c: &B::Ct, r: &Replication, need_after: usize) -> Result<B::Ct> {
        if self.be.level(c) < need_after + self.floor {
            Ok(self.be.refresh(c, &r.fused)?)
        } else {
            Ok(rr(self.be, c, r.step, r.copies, r.width)?)
        }
    }

    fn first_product(&self, w: &B::Ct, input: &Operand<B::Ct>) -> Result<B::Ct> {
        let w = self.ready(w, 1)?;
        Ok(match input {
            Operand::Plain(x) => self.be.mul_mask(&w, x)?,
            Operand::Cipher(x) => self.be.mul_rs(&w, &self.ready(x, 1)?)?,
        })
    }

    pub fn encrypt_model(&self, ws: &[Matrix]) -> Result<EncryptedModel<B::Ct>> {
        if ws.len() != self.net.depth() {
            return Err(NnError::Shape(format!("{} matrices for {} layers", ws.len(), self.net.depth())));
        }
        let weights = ws
            .iter()
            .enumerate()
            .map(|(i, w)| {
                let j = i + 1;
                if (w.rows, w.cols) != self.net.weight_shape(j) {
                    return Err(NnError::Shape(format!("W_{j} is {}x{}, expected {:?}", w.rows, w.cols, self.net.weight_shape(j))));
                }
                let ct = self.be.encrypt(&self.geom.pack_weights(self.net, j, w))?;
                Ok(PackedTensor { ciphers: vec![ct], layout: self.geom.layer(j).layout.clone(), logical_shape: (w.rows, w.cols) })
            })
            .collect::<Result<_>>()?;
        Ok(EncryptedModel { weights, iteration: 0 })
    }

    /// Collective decryption of the weights (evaluation and tests only).
    pub fn decrypt_model(&self, m: &EncryptedModel<B::Ct>) -> Result<Vec<Matrix>> {
        m.weights
            .iter()
            .enumerate()
            .map(|(i, w)| Ok(self.geom.unpack_weights(self.net, i + 1, &self.be.decrypt(&w.ciphers[0])?)))
            .collect()
    }

    pub fn decrypt_grads(&self, g: &GradientSet<B::Ct>) -> Result<Vec<Matrix>> {
        g.grads
            .iter()
            .enumerate()
            .map(|(i, w)| Ok(self.geom.unpack_weights(self.net, i + 1, &self.be.decrypt(&w.ciphers[0])?)))
            .collect()
    }

    /// Forward pass of one sample; keeps what the backward pass needs.
    pub fn forward(&self, model: &EncryptedModel<B::Ct>, input: Operand<B::Ct>) -> Result<Trace<B::Ct>> {
        let be = self.be;
        let l = self.net.depth();
        let (mut pre, mut outs) = (Vec::with_capacity(l), Vec::<B::Ct>::with_capacity(l));
        for j in 1..=l {
            self.tag(j, Phase::Forward);
            let g = self.geom.layer(j);
            let act = &self.net.acts[j - 1].value;
            let w = &model.weights[j - 1].ciphers[0];
            let t = match outs.last() {
                None => self.first_product(w, &input)?,
                Some(prev) => be.mul_rs(&self.ready(prev, 1)?, &self.ready(w, 1)?)?,
            };
            let s = ris(be, &t, g.sum_step, g.sum_width)?;
            let (u, out) = match &g.handoff {
                Handoff::None => {
                    let u = self.mask(&s, &g.pre_mask)?;
                    let out = self.activate(&u, act, &g.pre_mask)?;
                    (u, out)
                }
                Handoff::Replicate(r) => {
                    let (u, urep) = if be.level(&s) < 1 + levels_needed(act) + self.floor {
                        let urep = be.refresh(&s, &r.fused)?;
                        (self.mask(&urep, &g.pre_mask)?, urep)
                    } else {
                        let u = self.mask(&s, &g.pre_mask)?;
                        let urep = rr(be, &u, r.step, r.copies, r.width)?;
                        (u, urep)
                    };
                    let out = self.activate(&urep, act, &r.support)?;
                    (u, out)
                }
                Handoff::Pool { forward, .. } => {
                    let u = self.mask(&s, &g.pre_mask)?;
                    let a = self.activate(&u, act, &g.pre_mask)?;
                    (u, be.refresh(&a, forward)?)
                }
            };
            pre.push(u);
            outs.push(out);
        }
        self.tag(0, Phase::Other);
        Ok(Trace { input, pre, outs })
    }

    /// Backward pass from `E_l = y - L_l`; returns the per-layer gradients.
    pub fn backward(&self, model: &EncryptedModel<B::Ct>, trace: &Trace<B::Ct>, y: &[f64]) -> Result<Vec<B::Ct>> {
        let be = self.be;
        let l = self.net.depth();
        if y.len() != self.net.output_width() {
            return Err(NnError::Shape(format!("{} targets for {} outputs", y.len(), self.net.output_width())));
        }
        self.tag(l, Phase::Backward);
        let mut e = be.plain_sub(&self.geom.label_slots(y), &trace.outs[l - 1])?;
        let mut grads = vec![None; l];
        for j in (1..=l).rev() {
            self.tag(j, Phase::Backward);
            let g = self.geom.layer(j);
            if let (1, Handoff::Pool { back, .. }) = (j, &g.handoff) {
                e = be.refresh(&e, back)?;
            }
            e = match self.derivative(&trace.pre[j - 1], &self.net.acts[j - 1].deriv, &g.pre_mask)? {
                Deriv::Cipher(d) => be.mul_rs(&self.ready(&e, 1)?, &self.ready(&d, 1)?)?,
                Deriv::Plain(d) => self.mask(&e, &d)?,
            };
            let erep = self.replicate(&e, &g.back, 1)?;
            grads[j - 1] = Some(if j == 1 {
                self.first_product(&erep, &trace.input)?
            } else {
                be.mul_rs(&self.ready(&trace.outs[j - 2], 1)?, &erep)?
            });
            if j > 1 {
                // The inner sum forming E_{j-1} is charged to layer j-1.
                self.tag(j - 1, Phase::Backward);
                let t = be.mul_rs(&erep, &self.ready(&model.weights[j - 1].ciphers[0], 1)?)?;
                e = ris(be, &t, g.err_step, g.err_width)?;
            }
        }
        self.tag(0, Phase::Other);
        Ok(grads.into_iter().map(Option::unwrap).collect())
    }

    fn wrap(&self, cts: Vec<B::Ct>) -> GradientSet<B::Ct> {
        GradientSet {
            grads: cts
                .into_iter()
                .enumerate()
                .map(|(i, c)| PackedTensor {
                    ciphers: vec![c],
                    layout: self.geom.layers[i].layout.clone(),
                    logical_shape: self.net.weight_shape(i + 1),
                })
                .collect(),
        }
    }

    /// Layer-wise sum `a + b`.
    pub fn add_grads(&self, a: &GradientSet<B::Ct>, b: &GradientSet<B::Ct>) -> Result<GradientSet<B::Ct>> {
        let sum = a
            .grads
            .iter()
            .zip(&b.grads)
            .map(|(x, y)| Ok(self.be.add(&x.ciphers[0], &y.ciphers[0])?))
            .collect::<Result<Vec<_>>>()?;
        Ok(self.wrap(sum))
    }

    /// Local gradient: samples one at a time, summed in order.
    pub fn lgd_compute(&self, model: &EncryptedModel<B::Ct>, batch: &[Sample]) -> Result<GradientSet<B::Ct>> {
        let mut acc: Option<Vec<B::Ct>> = None;
        for s in batch {
            let input = Operand::Plain(self.geom.input_slots(self.net, &s.x)?);
            let trace = self.forward(model, input)?;
            let g = self.backward(model, &trace, &s.y)?;
            acc = Some(match acc {
                None => g,
                Some(a) => a.iter().zip(&g).map(|(x, y)| Ok(self.be.add(x, y)?)).collect::<Result<_>>()?,
            });
        }
        let acc = acc.ok_or_else(|| NnError::Shape("empty local batch".into()))?;
        Ok(self.wrap(acc))
    }

    /// `W <- refresh(W + (eta / (b N)) G)`; fresh weights return at `(L, S)`.
    /// A convolution's refresh re-ties every patch column to its filter mean,
    /// so its gradient is pre-scaled by the patch count.
    pub fn apply_update(&self, model: &EncryptedModel<B::Ct>, grads: &GradientSet<B::Ct>, eta: f64, b: usize, n: usize) -> Result<EncryptedModel<B::Ct>> {
        let factor = eta / (b as f64 * n as f64);
        let tie = self.geom.tie_transform(self.net);
        let weights = model
            .weights
            .iter()
            .zip(&grads.grads)
            .enumerate()
            .map(|(i, (w, g))| {
                self.tag(i + 1, Phase::Update);
                let (f, phi) = match (&tie, i) {
                    (Some(t), 0) => (factor * self.net.conv.as_ref().unwrap().patches as f64, t.clone()),
                    _ => (factor, LinearTransform::Identity),
                };
                let step = self.be.scale_by(&self.ready(&g.ciphers[0], 1)?, f)?;
                let sum = self.be.add(&w.ciphers[0], &step)?;
                let fresh = self.be.refresh(&sum, &phi)?;
                Ok(PackedTensor { ciphers: vec![fresh], layout: w.layout.clone(), logical_shape: w.logical_shape })
            })
            .collect::<Result<Vec<_>>>()?;
        self.tag(0, Phase::Other);
        Ok(EncryptedModel { weights, iteration: model.iteration + 1 })
    }

    /// Logical outputs from a decrypted output slot vector.
    pub fn read_output(&self, slots: &[f64]) -> Vec<f64> {
        let g = self.geom.layers.last().unwrap();
        (0..self.net.output_width()).map(|k| slots[g.pre_slot(k)]).collect()
    }

    /// Forward pass on a plaintext query, decrypted collectively.
    pub fn predict(&self, model: &EncryptedModel<B::Ct>, x: &[f64]) -> Result<Vec<f64>> {
        let t = self.forward(model, Operand::Plain(self.geom.input_slots(self.net, x)?))?;
        Ok(self.read_output(&self.be.decrypt(t.outs.last().unwrap())?))
    }

    /// Query encrypted under the collective key, as the querier submits it.
    pub fn encrypt_query(&self, x: &[f64]) -> Result<B::Ct> {
        Ok(self.be.encrypt(&self.geom.input_slots(self.net, x)?)?)
    }

    /// Forward pass with a ciphertext first-layer product, then a collective
    /// switch to the querier's key. Only the querier can open the result.
    pub fn predict_oblivious(&self, model: &EncryptedModel<B::Ct>, query: &B::Ct, querier: &B::Querier) -> Result<B::Ct> {
        let t = self.forward(model, Operand::Cipher(query.clone()))?;
        Ok(self.be.key_switch_to(t.outs.last().unwrap(), querier)?)
    }
}


#[cfg(test)]
mod conv_tests {
    use super::*;
    use crate::mhe::params::ChainSpec;
    use crate::mhe::reference::ReferenceBackend;
    use crate::nn::init::init_weights;
    use crate::nn::plain::PlainTrainer;
    use crate::nn::spec::{LayerKind, LayerSpec, Loss, NetworkSpec};

    fn conv_net(pool: bool) -> Network {
        let mut layers = vec![LayerSpec { kind: LayerKind::Cv, kernel: Some(2), stride: Some(2), filters: Some(2), ..LayerSpec::fc(1, "sigmoid", 3) }];
        if pool {
            layers.push(LayerSpec { kind: LayerKind::AvgPool, kernel: Some(2), ..LayerSpec::fc(1, "sigmoid", 3) });
        }
        layers.push(LayerSpec::fc(2, "sigmoid", 3));
        let spec = NetworkSpec { input_dim: 16, input_shape: Some((4, 4)), layers, loss: Loss::L2, learning_rate: 1.0, local_batch: 2, global_iters: 1 };
        Network::compile(&spec).unwrap()
    }

    fn image(seed: usize) -> Vec<f64> {
        (0..16).map(|i| (((i * 7 + seed * 3) % 11) as f64 / 11.0) - 0.5).collect()
    }

    fn close(a: &[Matrix], b: &[Matrix], tol: f64) {
        for (x, y) in a.iter().zip(b) {
            assert_eq!((x.rows, x.cols), (y.rows, y.cols));
            for (u, v) in x.data.iter().zip(&y.data) {
                assert!((u - v).abs() < tol, "{u} vs {v}");
            }
        }
    }

    #[test]
    fn convolution_trains_like_the_plain_trainer() {
        for pool in [false, true] {
            let net = conv_net(pool);
            let be = ReferenceBackend::new(ChainSpec::toy(6, 7).build().unwrap(), 2).unwrap();
            let eng = Engine::new(&be, &net).unwrap();
            let ws = init_weights(&net, 5);
            let mut m = eng.encrypt_model(&ws).unwrap();
            let mut oracle = PlainTrainer::new(&net, &ws);
            let parties: Vec<Vec<Sample>> = (0..2)
                .map(|p| (0..2).map(|i| Sample { x: image(2 * p + i), y: vec![f64::from(i == 0), f64::from(i == 1)] }).collect())
                .collect();
            for s in &parties[0] {
                let got = eng.predict(&m, &s.x).unwrap();
                for (a, b) in got.iter().zip(oracle.predict(&s.x)) {
                    assert!((a - b).abs() < 1e-12, "pool {pool}: {a} vs {b}");
                }
            }
            for _ in 0..2 {
                let g = eng.add_grads(&eng.lgd_compute(&m, &parties[0]).unwrap(), &eng.lgd_compute(&m, &parties[1]).unwrap()).unwrap();
                m = eng.apply_update(&m, &g, 1.0, 2, 2).unwrap();
                oracle.step(&parties);
                close(&eng.decrypt_model(&m).unwrap(), &oracle.weights(), 1e-12);
            }
            // Every patch column still holds its filter's kernel.
            let raw = be.decrypt(&m.weights[0].ciphers[0]).unwrap();
            let p = eng.geom.layer(1).layout.stride;
            for k in 0..8 {
                for r in 0..4 {
                    assert!((raw[k * p + r] - raw[(k / 4) * 4 * p + r]).abs() < 1e-12);
                }
            }
        }
    }
}
