//! Slot geometry of every layer under alternating packing.
//!
//! With padded widths `h_0..h_l` and `P_j = max(h_{j-1}, h_{j+1})` for odd
//! `j`, odd layers hold `W_j[i][k]` at `k P_j + i` and even layers hold
//! `W_j[k][c]` at `k P_{j-1} + c`. Pre-activations `U_j` sit at block starts
//! `k P_j` for odd `j` and contiguously for even `j`; replicating them into
//! the next layer's blocks is the only data movement between layers.

use crate::mhe::transform::LinearTransform;
use crate::packing::{layer_layout, stride, Matrix, PackingLayout};

use super::spec::Network;
use super::{NnError, Result};

/// Rotate-for-replication with a bootstrap-fused equivalent.
#[derive(Clone, Debug, PartialEq)]
pub struct Replication {
    pub step: usize,
    pub copies: usize,
    pub width: usize,
    /// `MaskReplicate` over the source support; same result as `rr` on it.
    pub fused: LinearTransform,
    /// Support after replication.
    pub support: Vec<f64>,
}

/// How `L_j` reaches layer `j + 1`.
#[derive(Clone, Debug, PartialEq)]
pub enum Handoff {
    /// Output layer.
    None,
    /// `rr`, then the activation on every copy.
    Replicate(Replication),
    /// Activation on `U_j`, then average pooling and replication folded into
    /// a refresh. `back` carries the pooled error back to block starts.
    Pool { forward: LinearTransform, back: LinearTransform },
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerGeom {
    pub j: usize,
    pub layout: PackingLayout,
    /// Inner-sum step and width forming `U_j`.
    pub sum_step: usize,
    pub sum_width: usize,
    /// Valid slots of `U_j` (block starts or a contiguous prefix).
    pub pre_mask: Vec<f64>,
    pub handoff: Handoff,
    /// Replication of `E_j` onto the weight layout.
    pub back: Replication,
    /// Inner-sum step and width producing `E_{j-1}` from `E_j W_j^T`.
    pub err_step: usize,
    pub err_width: usize,
}

impl LayerGeom {
    /// Slot of logical pre-activation `k`.
    pub fn pre_slot(&self, k: usize) -> usize {
        if self.j % 2 == 1 {
            k * self.layout.stride
        } else {
            k
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Geometry {
    pub slots: usize,
    pub layers: Vec<LayerGeom>,
}

fn replication(source: &[f64], step: usize, copies: usize, width: usize) -> Replication {
    let fused = LinearTransform::MaskReplicate { mask: source.to_vec(), stride: step, copies };
    let support = fused.apply(source);
    Replication { step, copies, width, fused, support }
}

/// `LinearTransform` from sparse `(out, in, weight)` entries.
pub fn sparse_transform(entries: &[(usize, usize, f64)], slots: usize) -> LinearTransform {
    let mut diags: std::collections::BTreeMap<usize, Vec<f64>> = Default::default();
    for &(o, i, w) in entries {
        let shift = (i + slots - o) % slots;
        diags.entry(shift).or_insert_with(|| vec![0.0; slots])[i] += w;
    }
    LinearTransform::Diagonals(diags.into_iter().collect())
}

impl Geometry {
    pub fn new(net: &Network, slots: usize) -> Result<Geometry> {
        let dims = &net.dims;
        let l = net.depth();
        let mut layers: Vec<LayerGeom> = Vec::with_capacity(l);
        for j in 1..=l {
            let layout = layer_layout(dims, j, slots);
            if layout.cipher_count > 1 {
                return Err(NnError::Shape(format!(
                    "layer {j} needs {} slots but a ciphertext holds {slots}",
                    layout.total_slots()
                )));
            }
            let odd = j % 2 == 1;
            let p = layout.stride;
            let logical = net.logical[j];
            let mut pre_mask = vec![0.0; slots];
            for k in 0..logical {
                pre_mask[if odd { k * p } else { k }] = 1.0;
            }
            let (sum_step, err_step) = if odd { (1, p) } else { (p, 1) };
            let back = if odd {
                replication(&pre_mask, 1, dims[j - 1], 1)
            } else {
                replication(&pre_mask, p, dims[j - 1], dims[j])
            };
            let handoff = if j == l {
                Handoff::None
            } else if j == 1 && net.conv.as_ref().is_some_and(|c| c.pool.is_some()) {
                let (forward, back) = pool_transforms(net, p, dims[2], slots);
                Handoff::Pool { forward, back }
            } else if odd {
                Handoff::Replicate(replication(&pre_mask, 1, dims[j + 1], 1))
            } else {
                Handoff::Replicate(replication(&pre_mask, stride(dims, j + 1), dims[j + 1], dims[j]))
            };
            layers.push(LayerGeom {
                j,
                layout,
                sum_step,
                sum_width: dims[j - 1],
                pre_mask,
                handoff,
                back,
                err_step,
                err_width: dims[j],
            });
        }
        Ok(Geometry { slots, layers })
    }

    pub fn layer(&self, j: usize) -> &LayerGeom {
        &self.layers[j - 1]
    }

    /// First-layer input slots: `x` repeated in every block, or one kernel
    /// patch per (filter, position) block for a convolution.
    pub fn input_slots(&self, net: &Network, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != net.logical_input() {
            return Err(NnError::Shape(format!("input of length {} for {} features", x.len(), net.logical_input())));
        }
        let g = self.layer(1);
        let p = g.layout.stride;
        let mut out = vec![0.0; self.slots];
        match &net.conv {
            None => {
                for k in 0..net.dims[1] {
                    out[k * p..k * p + x.len()].copy_from_slice(x);
                }
            }
            Some(c) => {
                let rows = c.patch_rows(x);
                for f in 0..c.filters {
                    for (q, patch) in rows.iter().enumerate() {
                        let k = f * c.patches + q;
                        out[k * p..k * p + patch.len()].copy_from_slice(patch);
                    }
                }
            }
        }
        Ok(out)
    }

    /// Targets placed where the output layer leaves `L_l`.
    pub fn label_slots(&self, y: &[f64]) -> Vec<f64> {
        let g = self.layers.last().unwrap();
        let mut out = vec![0.0; self.slots];
        for (k, &v) in y.iter().enumerate() {
            out[g.pre_slot(k)] = v;
        }
        out
    }

    /// Slot vector of `W_j` from its logical matrix. A convolution kernel
    /// (`f*f x filters`) is copied into every patch column of its filter.
    pub fn pack_weights(&self, net: &Network, j: usize, w: &Matrix) -> Vec<f64> {
        let g = self.layer(j);
        let mut out = vec![0.0; self.slots];
        let place = |out: &mut Vec<f64>, r: usize, c: usize, v: f64| {
            let s = if j % 2 == 1 { c * g.layout.stride + r } else { r * g.layout.stride + c };
            out[s] = v;
        };
        match (&net.conv, j) {
            (Some(c), 1) => {
                for f in 0..c.filters {
                    for q in 0..c.patches {
                        for r in 0..w.rows {
                            place(&mut out, r, f * c.patches + q, w.get(r, f));
                        }
                    }
                }
            }
            _ => {
                for r in 0..w.rows {
                    for c in 0..w.cols {
                        place(&mut out, r, c, w.get(r, c));
                    }
                }
            }
        }
        out
    }

    /// Inverse of [`Geometry::pack_weights`]; a convolution kernel is read from
    /// the first patch column of each filter.
    pub fn unpack_weights(&self, net: &Network, j: usize, v: &[f64]) -> Matrix {
        let g = self.layer(j);
        let (rows, cols) = net.weight_shape(j);
        let at = |r: usize, c: usize| v[if j % 2 == 1 { c * g.layout.stride + r } else { r * g.layout.stride + c }];
        match (&net.conv, j) {
            (Some(c), 1) => Matrix::from_fn(rows, cols, |r, f| at(r, f * c.patches)),
            _ => Matrix::from_fn(rows, cols, at),
        }
    }

    /// Refresh transform tying the patch columns of each filter to their mean.
    pub fn tie_transform(&self, net: &Network) -> Option<LinearTransform> {
        let c = net.conv.as_ref()?;
        let p = self.layer(1).layout.stride;
        let t = c.patches;
        let w = 1.0 / t as f64;
        let mut entries = Vec::new();
        for f in 0..c.filters {
            for qo in 0..t {
                for qi in 0..t {
                    for r in 0..net.dims[0] {
                        entries.push(((f * t + qo) * p + r, (f * t + qi) * p + r, w));
                    }
                }
            }
        }
        Some(sparse_transform(&entries, self.slots))
    }
}

/// Average pooling over each filter's patch grid from block starts `k P_1`,
/// replicated `copies` times for layer 2, and its adjoint on block starts.
fn pool_transforms(net: &Network, p: usize, copies: usize, slots: usize) -> (LinearTransform, LinearTransform) {
    let c = net.conv.as_ref().unwrap();
    let f = c.pool.unwrap();
    let (gr, gc) = c.patch_grid();
    let w = 1.0 / (f * f) as f64;
    let (mut fwd, mut back) = (Vec::new(), Vec::new());
    for filt in 0..c.filters {
        for r in 0..gr {
            for col in 0..gc {
                let k = filt * c.patches + r * gc + col;
                let kp = filt * c.pooled() + (r / f) * (gc / f) + col / f;
                for cc in 0..copies {
                    fwd.push((kp * p + cc, k * p, w));
                }
                back.push((k * p, kp * p, w));
            }
        }
    }
    (sparse_transform(&fwd, slots), sparse_transform(&back, slots))
}
