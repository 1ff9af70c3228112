//! Alternating packing of weight matrices, input/label preparation, the
//! inner-sum and replication rotation macros, masks and the multi-cipher split.
//!
//! Dimensions are `dims = [h_0 = d, h_1, .., h_l]`, all powers of two. Odd
//! layers are packed by columns: column `k` of `W_j` (`h_{j-1} x h_j`) fills
//! block `k` of stride `P_j = max(h_{j-1}, h_{j+1})` (with `h_{l+1} = 0`).
//! Even layers are packed by rows: row `k` fills block `k` of the previous
//! layer's stride `P_{j-1}`. The zero runs this leaves are exactly the gaps
//! `max(h_{j+1} - h_{j-1}, 0)` (columns) and `max(h_{j-2} - h_j, 0)` (rows).

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mhe::backend::Backend;
use crate::mhe::error::MheError;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PackError {
    #[error("layout needs {needed} slots but a ciphertext holds {slots}")]
    DimensionOverflow { needed: usize, slots: usize },
    #[error("replication of width {width} by step {step} over {count} copies overlaps")]
    ReplicationOverlap { width: usize, step: usize, count: usize },
    #[error("incompatible dimensions: {0}")]
    Incompatible(String),
    #[error(transparent)]
    Mhe(#[from] MheError),
}

pub type Result<T> = std::result::Result<T, PackError>;

/// Dense row-major matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Matrix {
        Matrix { rows, cols, data: vec![0.0; rows * cols] }
    }
    pub fn from_fn(rows: usize, cols: usize, f: impl Fn(usize, usize) -> f64) -> Matrix {
        Matrix { rows, cols, data: (0..rows * cols).map(|i| f(i / cols, i % cols)).collect() }
    }
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }
    /// Copy with zero rows/cols appended.
    pub fn padded(&self, rows: usize, cols: usize) -> Matrix {
        Matrix::from_fn(rows, cols, |r, c| if r < self.rows && c < self.cols { self.get(r, c) } else { 0.0 })
    }
    /// Top-left `rows x cols` corner.
    pub fn cropped(&self, rows: usize, cols: usize) -> Matrix {
        Matrix::from_fn(rows, cols, |r, c| self.get(r, c))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Orientation {
    Row,
    Column,
    Conv,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PackingLayout {
    pub orientation: Orientation,
    /// Zero run after each packed row/column.
    pub gap: usize,
    /// Number of packed rows/columns (blocks).
    pub replication: usize,
    /// Block stride: packed length plus gap.
    pub stride: usize,
    pub padded_dims: (usize, usize),
    pub cipher_count: usize,
}

impl PackingLayout {
    pub fn total_slots(&self) -> usize {
        self.replication * self.stride
    }
}

#[derive(Clone, Debug)]
pub struct PackedTensor<C> {
    pub ciphers: Vec<C>,
    pub layout: PackingLayout,
    pub logical_shape: (usize, usize),
}

pub fn next_pow2(n: usize) -> usize {
    n.max(1).next_power_of_two()
}

pub fn log2(n: usize) -> usize {
    debug_assert!(n.is_power_of_two());
    n.trailing_zeros() as usize
}

/// `h_j`, with `h_{l+1} = 0` past the output layer.
fn h(dims: &[usize], j: usize) -> usize {
    dims.get(j).copied().unwrap_or(0)
}

/// Block stride `P_j` of odd layer `j` (1-based).
pub fn stride(dims: &[usize], j: usize) -> usize {
    h(dims, j - 1).max(h(dims, j + 1))
}

pub fn multi_cipher_split(elems: usize, slots: usize) -> usize {
    assert!(elems > 0 && slots > 0, "positive sizes");
    elems.div_ceil(slots)
}

/// Layout of `W_j` (1-based) for padded `dims`.
pub fn layer_layout(dims: &[usize], j: usize, slots: usize) -> PackingLayout {
    assert!(j >= 1 && j < dims.len(), "layer index out of range");
    let (rows, cols) = (dims[j - 1], dims[j]);
    let (orientation, stride, packed, blocks) = if j % 2 == 1 {
        (Orientation::Column, stride(dims, j), rows, cols)
    } else {
        (Orientation::Row, stride(dims, j - 1), cols, rows)
    };
    PackingLayout {
        orientation,
        gap: stride - packed,
        replication: blocks,
        stride,
        padded_dims: (rows, cols),
        cipher_count: multi_cipher_split(blocks * stride, slots),
    }
}

/// Slot index of entry `(r, c)` under `layout`.
fn slot_of(layout: &PackingLayout, r: usize, c: usize) -> usize {
    match layout.orientation {
        Orientation::Column | Orientation::Conv => c * layout.stride + r,
        Orientation::Row => r * layout.stride + c,
    }
}

/// Flattens `w` (zero-padded to the layout's dims) into per-cipher slot vectors.
pub fn pack_matrix(w: &Matrix, layout: &PackingLayout, slots: usize) -> Vec<Vec<f64>> {
    let (pr, pc) = layout.padded_dims;
    assert!(w.rows <= pr && w.cols <= pc, "matrix larger than its layout");
    let mut flat = vec![0.0; layout.cipher_count * slots];
    for r in 0..w.rows {
        for c in 0..w.cols {
            flat[slot_of(layout, r, c)] = w.get(r, c);
        }
    }
    flat.chunks(slots).map(<[f64]>::to_vec).collect()
}

/// Inverse of [`pack_matrix`] for a `rows x cols` logical matrix.
pub fn unpack_matrix(chunks: &[Vec<f64>], layout: &PackingLayout, rows: usize, cols: usize, slots: usize) -> Matrix {
    Matrix::from_fn(rows, cols, |r, c| {
        let s = slot_of(layout, r, c);
        chunks[s / slots].get(s % slots).copied().unwrap_or(0.0)
    })
}

/// Packs all weight matrices by alternating orientation. Fails if a layer needs
/// more than one ciphertext and `allow_multi` is false.
pub fn pack_weights_ap(ws: &[Matrix], dims: &[usize], slots: usize, allow_multi: bool) -> Result<Vec<(Vec<Vec<f64>>, PackingLayout)>> {
    if ws.is_empty() || dims.len() != ws.len() + 1 {
        return Err(PackError::Incompatible(format!("{} matrices for {} dims", ws.len(), dims.len())));
    }
    ws.iter()
        .enumerate()
        .map(|(i, w)| {
            let layout = layer_layout(dims, i + 1, slots);
            if layout.cipher_count > 1 && !allow_multi {
                return Err(PackError::DimensionOverflow { needed: layout.total_slots(), slots });
            }
            Ok((pack_matrix(w, &layout, slots), layout))
        })
        .collect()
}

/// `count` copies of `v` every `step` slots.
pub fn replicate(v: &[f64], count: usize, step: usize) -> Vec<f64> {
    assert!(v.len() <= step || count <= 1, "copies overlap");
    let mut out = vec![0.0; count.saturating_sub(1) * step + v.len()];
    for k in 0..count {
        out[k * step..k * step + v.len()].copy_from_slice(v);
    }
    out
}

/// Entries of `v` every `step` slots.
pub fn spread(v: &[f64], step: usize) -> Vec<f64> {
    let mut out = vec![0.0; v.len().saturating_sub(1) * step + 1];
    for (i, &x) in v.iter().enumerate() {
        out[i * step] = x;
    }
    out
}

/// The input row replicated `h_1` times with `max(h_1 - d, 0)` zeros between copies.
pub fn prepare_inputs(x: &[f64], h1: usize, d: usize, slots: usize) -> Result<Vec<f64>> {
    if x.len() != d {
        return Err(PackError::Incompatible(format!("row of length {} for d = {d}", x.len())));
    }
    let out = replicate(x, h1, d + h1.saturating_sub(d));
    check_fits(out.len(), slots)?;
    Ok(out)
}

/// Labels: for odd depth each entry is followed by `h_l` zeros, otherwise contiguous.
pub fn prepare_labels(y: &[f64], depth: usize, hl: usize) -> Vec<f64> {
    assert_eq!(y.len(), hl, "label length must equal the output width");
    if depth % 2 == 1 {
        let mut out = spread(y, hl + 1);
        out.resize(y.len() * (hl + 1), 0.0);
        out
    } else {
        y.to_vec()
    }
}

fn check_fits(needed: usize, slots: usize) -> Result<()> {
    if needed > slots {
        Err(PackError::DimensionOverflow { needed, slots })
    } else {
        Ok(())
    }
}

/// Masks for an odd layer: ones at block starts, and `hl` leading ones.
pub fn make_masks(stride: usize, blocks: usize, hl: usize) -> (Vec<f64>, Vec<f64>) {
    let mut m1 = spread(&vec![1.0; blocks], stride);
    m1.resize(blocks * stride, 0.0);
    (m1, vec![1.0; hl])
}

/// Convolution decomposition of one image.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvPacking {
    /// Patches (`f*f` padded to a power of two) packed back to back, `gap` apart.
    pub inputs: Vec<f64>,
    pub patch_count: usize,
    pub layout: PackingLayout,
}

/// Row-major `f x f` patches of a `rows x cols` image at `stride`.
pub fn patches(image: &Matrix, f: usize, stride: usize) -> Result<Vec<Vec<f64>>> {
    if f == 0 || stride == 0 || image.rows < f || image.cols < f || (image.rows - f) % stride != 0 || (image.cols - f) % stride != 0 {
        return Err(PackError::Incompatible(format!(
            "{}x{} image with {f}x{f} kernel at stride {stride}",
            image.rows, image.cols
        )));
    }
    let (pr, pc) = ((image.rows - f) / stride + 1, (image.cols - f) / stride + 1);
    Ok((0..pr * pc)
        .map(|p| {
            let (r0, c0) = ((p / pc) * stride, (p % pc) * stride);
            (0..f * f).map(|i| image.get(r0 + i / f, c0 + i % f)).collect()
        })
        .collect())
}

/// Decomposes an image into `t` kernel-sized patches. With a following FC
/// layer of width `next_h` each patch block is padded to `max(f*f, next_h)`;
/// otherwise patches are packed without gap. The kernel layout replicates the
/// kernel `t` times over the same blocks.
pub fn pack_conv(image: &Matrix, f: usize, stride: usize, next_h: Option<usize>, slots: usize) -> Result<ConvPacking> {
    let ps = patches(image, f, stride)?;
    let k = next_pow2(f * f);
    let block = next_h.map_or(k, |n| k.max(next_pow2(n)));
    let mut inputs = vec![0.0; ps.len() * block];
    for (i, p) in ps.iter().enumerate() {
        inputs[i * block..i * block + p.len()].copy_from_slice(p);
    }
    check_fits(inputs.len(), slots)?;
    let layout = PackingLayout {
        orientation: Orientation::Conv,
        gap: block - k,
        replication: ps.len(),
        stride: block,
        padded_dims: (k, next_pow2(ps.len())),
        cipher_count: 1,
    };
    Ok(ConvPacking { inputs, patch_count: ps.len(), layout })
}

/// Kernel (`f*f`, row-major) replicated over the conv layout's blocks.
pub fn pack_kernel(kernel: &[f64], layout: &PackingLayout) -> Vec<f64> {
    let mut out = replicate(kernel, layout.replication, layout.stride);
    out.resize(layout.total_slots(), 0.0);
    out
}

/// Rotate-for-inner-sum: `log2(s)` left rotations by `p, 2p, ..` each added
/// back, so every block's first slot holds the sum of its `s` entries `p` apart.
pub fn ris<B: Backend>(be: &B, c: &B::Ct, p: usize, s: usize) -> Result<B::Ct> {
    assert!(s.is_power_of_two(), "inner-sum width must be a power of two");
    let mut acc = c.clone();
    for i in 0..log2(s) {
        let r = be.rot_left(&acc, p << i)?;
        acc = be.add(&acc, &r)?;
    }
    Ok(acc)
}

/// Rotate-for-replication: `log2(s)` right rotations by `p, 2p, ..` each added
/// back, copying a run of `width` values into `s` positions `p` apart. The
/// copies must land on zeros: `width <= p` and `p * s <= slots`.
pub fn rr<B: Backend>(be: &B, c: &B::Ct, p: usize, s: usize, width: usize) -> Result<B::Ct> {
    assert!(s.is_power_of_two(), "replication count must be a power of two");
    if s > 1 && (width > p || p * s > be.slots()) {
        return Err(PackError::ReplicationOverlap { width, step: p, count: s });
    }
    let mut acc = c.clone();
    for i in 0..log2(s) {
        let r = be.rot_right(&acc, p << i)?;
        acc = be.add(&acc, &r)?;
    }
    Ok(acc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mhe::backend::RawOps;
    use crate::mhe::params::ChainSpec;
    use crate::mhe::reference::ReferenceBackend;
    use proptest::prelude::*;

    fn be() -> ReferenceBackend {
        ReferenceBackend::new(ChainSpec::toy(6, 2).build().unwrap(), 2).unwrap()
    }

    #[test]
    fn two_layer_gaps() {
        let dims = [4, 4, 2];
        let l1 = layer_layout(&dims, 1, 16);
        assert_eq!((l1.orientation, l1.gap, l1.stride), (Orientation::Column, 0, 4));
        let l2 = layer_layout(&dims, 2, 16);
        assert_eq!((l2.orientation, l2.gap, l2.stride), (Orientation::Row, 2, 4));
        let one = layer_layout(&[1, 1], 1, 16);
        assert_eq!((one.gap, one.total_slots()), (0, 1));
    }

    #[test]
    fn gaps_follow_both_protocol_branches() {
        let dims = [8, 2, 16, 4, 32];
        for j in 1..dims.len() {
            let l = layer_layout(&dims, j, 1 << 12);
            let expect = if j % 2 == 1 {
                h(&dims, j + 1).saturating_sub(dims[j - 1])
            } else {
                h(&dims, j.wrapping_sub(2)).saturating_sub(dims[j])
            };
            assert_eq!(l.gap, expect, "layer {j}");
            if j + 1 < dims.len() {
                assert_ne!(l.orientation, layer_layout(&dims, j + 1, 1 << 12).orientation);
            }
        }
    }

    #[test]
    fn inputs_and_labels() {
        assert_eq!(prepare_inputs(&[1.0, 2.0, 3.0, 4.0], 4, 4, 64).unwrap(), [1.0, 2.0, 3.0, 4.0].repeat(4));
        assert_eq!(prepare_inputs(&[1.0, 2.0], 4, 2, 64).unwrap(), vec![1.0, 2.0, 0.0, 0.0, 1.0, 2.0, 0.0, 0.0, 1.0, 2.0, 0.0, 0.0, 1.0, 2.0]);
        assert!(prepare_inputs(&[1.0; 8], 8, 8, 32).is_err());
        assert_eq!(prepare_labels(&[1.0, 0.0], 3, 2), vec![1.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        assert_eq!(prepare_labels(&[0.0, 1.0], 3, 2), vec![0.0, 0.0, 0.0, 1.0, 0.0, 0.0]);
        assert_eq!(prepare_labels(&[1.0, 0.0], 2, 2), vec![1.0, 0.0]);
        assert_eq!(prepare_labels(&[0.5], 1, 1), vec![0.5, 0.0]);
    }

    #[test]
    fn masks() {
        let (m1, m2) = make_masks(4, 4, 2);
        let ones: Vec<usize> = m1.iter().enumerate().filter(|(_, &v)| v == 1.0).map(|(i, _)| i).collect();
        assert_eq!(ones, vec![0, 4, 8, 12]);
        assert_eq!(m2, vec![1.0, 1.0]);
    }

    #[test]
    fn split_counts() {
        assert_eq!(multi_cipher_split(1024 * 64, 4096), 16);
        assert_eq!(multi_cipher_split(100, 4096), 1);
        assert_eq!(multi_cipher_split(5000, 4096), 2);
    }

    #[test]
    fn conv_patches() {
        let img = Matrix::from_fn(4, 4, |r, c| (r * 4 + c) as f64);
        let p = pack_conv(&img, 2, 2, None, 64).unwrap();
        assert_eq!(p.patch_count, 4);
        assert_eq!(&p.inputs[4..8], &[2.0, 3.0, 6.0, 7.0]);
        let k = pack_kernel(&[1.0, 2.0, 3.0, 4.0], &p.layout);
        assert_eq!(k.chunks(4).filter(|c| *c == [1.0, 2.0, 3.0, 4.0]).count(), p.patch_count);
        let fc = pack_conv(&img, 2, 2, Some(8), 64).unwrap();
        assert_eq!((fc.layout.gap, fc.layout.stride), (4, 8));
        let small = pack_conv(&Matrix::from_fn(2, 2, |r, c| (r + c) as f64), 2, 2, None, 64).unwrap();
        assert_eq!(small.patch_count, 1);
        assert!(pack_conv(&img, 3, 2, None, 64).is_err());
    }

    #[test]
    fn ris_and_rr() {
        let be = be();
        let c = be.encrypt(&[1.0, 2.0, 3.0, 4.0]).unwrap();
        be.instr().reset();
        let s = ris(&be, &c, 1, 4).unwrap();
        assert_eq!(be.decrypt(&s).unwrap()[0], 10.0);
        assert_eq!(be.instr().total().rotations, 2);
        let same = ris(&be, &c, 1, 1).unwrap();
        assert_eq!(be.decrypt(&same).unwrap(), be.decrypt(&c).unwrap());
        be.instr().reset();
        let a = be.encrypt(&[7.0]).unwrap();
        let r = rr(&be, &a, 1, 4, 1).unwrap();
        assert_eq!(&be.decrypt(&r).unwrap()[..5], &[7.0, 7.0, 7.0, 7.0, 0.0]);
        assert_eq!(be.instr().total().rotations, 2);
        // [a,0,0,0,b,0,0,0] -> [a,a,a,a,b,b,b,b]
        let v = be.encrypt(&[1.0, 0.0, 0.0, 0.0, 2.0]).unwrap();
        let r = rr(&be, &v, 1, 4, 1).unwrap();
        assert_eq!(&be.decrypt(&r).unwrap()[..8], &[1.0, 1.0, 1.0, 1.0, 2.0, 2.0, 2.0, 2.0]);
        assert!(matches!(rr(&be, &v, 1, 4, 2), Err(PackError::ReplicationOverlap { .. })));
    }

    proptest! {
        #[test]
        fn pack_round_trip(rows in 1usize..9, cols in 1usize..9, next in 1usize..9, seed in any::<u64>(), slots_log in 3usize..7) {
            let dims = [next_pow2(rows), next_pow2(cols), next_pow2(next)];
            let slots = 1 << slots_log;
            let w = Matrix::from_fn(rows, cols, |r, c| ((seed.wrapping_mul(31).wrapping_add((r * 17 + c) as u64)) % 1000) as f64 - 500.0);
            for j in [1, 2] {
                let (pr, pc) = (dims[j - 1], dims[j]);
                let layout = layer_layout(&dims, j, slots);
                let m = w.padded(pr, pc).cropped(pr.min(rows), pc.min(cols));
                let chunks = pack_matrix(&m, &layout, slots);
                prop_assert_eq!(chunks.len(), layout.cipher_count);
                prop_assert_eq!(unpack_matrix(&chunks, &layout, m.rows, m.cols, slots), m);
            }
        }

        #[test]
        fn ris_sums_every_block(vals in proptest::collection::vec(-100i32..100, 32), s_log in 0usize..4) {
            let be = be();
            let s = 1usize << s_log;
            let v: Vec<f64> = vals.iter().map(|&x| x as f64).collect();
            let c = be.encrypt(&v).unwrap();
            let out = be.decrypt(&ris(&be, &c, 1, s).unwrap()).unwrap();
            for b in 0..32 / s {
                let want: f64 = v[b * s..(b + 1) * s].iter().sum();
                prop_assert_eq!(out[b * s], want);
            }
        }
    }
}
