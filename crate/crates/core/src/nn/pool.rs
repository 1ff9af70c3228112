//! Average pooling carried out by a refresh instead of rotations.

use crate::mhe::backend::Backend;
use crate::mhe::transform::LinearTransform;
use crate::packing::ris;

use super::geometry::sparse_transform;
use super::Result;

/// Pooling stencil over a row-major `width x height` image with stride
/// `kernel`, and its adjoint: each pooled error fans out as `1/(f f)` to
/// its window.
pub fn pool_maps(width: usize, height: usize, kernel: usize, slots: usize) -> (LinearTransform, LinearTransform) {
    let forward = LinearTransform::AvgPool { width, height, kernel, stride: kernel };
    let ow = width / kernel;
    let w = 1.0 / (kernel * kernel) as f64;
    let mut back = Vec::new();
    for oy in 0..height / kernel {
        for ox in 0..ow {
            for ky in 0..kernel {
                for kx in 0..kernel {
                    back.push(((oy * kernel + ky) * width + ox * kernel + kx, oy * ow + ox, w));
                }
            }
        }
    }
    (forward, sparse_transform(&back, slots))
}

/// Pools `c` during a refresh; returns the pooled ciphertext at `(L, S)` and
/// the derivative map for the backward pass.
pub fn avg_pool_via_bootstrap<B: Backend>(be: &B, c: &B::Ct, width: usize, height: usize, kernel: usize) -> Result<(B::Ct, LinearTransform)> {
    let (forward, back) = pool_maps(width, height, kernel, be.slots());
    Ok((be.refresh(c, &forward)?, back))
}

/// Rotation-based pooling for comparison: window sums by inner sums along
/// rows then columns (`log2(f f)` rotations), then a scaling by `1/(f f)`.
/// Window `(i, j)` lands at slot `i f width + j f`.
pub fn avg_pool_by_rotation<B: Backend>(be: &B, c: &B::Ct, width: usize, kernel: usize) -> Result<B::Ct> {
    let rows = ris(be, c, 1, kernel)?;
    let both = ris(be, &rows, width, kernel)?;
    Ok(be.scale_by(&both, 1.0 / (kernel * kernel) as f64)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mhe::backend::RawOps;
    use crate::mhe::params::ChainSpec;
    use crate::mhe::reference::ReferenceBackend;
    use crate::packing::log2;

    fn be() -> ReferenceBackend {
        ReferenceBackend::new(ChainSpec::toy(5, 3).build().unwrap(), 2).unwrap()
    }

    #[test]
    fn constant_image_pools_to_constant() {
        let be = be();
        let c = be.encrypt(&[0.75; 16]).unwrap();
        let (p, _) = avg_pool_via_bootstrap(&be, &c, 4, 4, 2).unwrap();
        assert_eq!(&be.decrypt(&p).unwrap()[..4], &[0.75; 4]);
    }

    #[test]
    fn ramp_pools_to_quadrant_means() {
        let be = be();
        let img: Vec<f64> = (0..16).map(f64::from).collect();
        let c = be.encrypt(&img).unwrap();
        be.instr().reset();
        let (p, back) = avg_pool_via_bootstrap(&be, &c, 4, 4, 2).unwrap();
        let t = be.instr().total();
        assert_eq!((t.rotations, t.bootstraps), (0, 1));
        assert_eq!(be.level(&p), be.max_level());
        // Quadrant means of the ramp, computed by hand.
        assert_eq!(&be.decrypt(&p).unwrap()[..4], &[2.5, 4.5, 10.5, 12.5]);
        let fan = back.apply(&[4.0, 8.0, 0.0, 0.0].iter().copied().chain([0.0; 12]).collect::<Vec<_>>());
        assert_eq!(&fan[..8], &[1.0, 1.0, 2.0, 2.0, 1.0, 1.0, 2.0, 2.0]);
    }

    #[test]
    fn refresh_pooling_saves_the_window_rotations() {
        let be = be();
        let img: Vec<f64> = (0..16).map(|i| f64::from(i % 5)).collect();
        let c = be.encrypt(&img).unwrap();
        be.instr().reset();
        let r = avg_pool_by_rotation(&be, &c, 4, 2).unwrap();
        let by_rotation = be.instr().total().rotations;
        assert_eq!(by_rotation, log2(2 * 2) as u64);
        let (p, _) = avg_pool_via_bootstrap(&be, &c, 4, 4, 2).unwrap();
        assert_eq!(be.instr().total().rotations, by_rotation);
        let (rv, pv) = (be.decrypt(&r).unwrap(), be.decrypt(&p).unwrap());
        for (k, s) in [0, 2, 8, 10].into_iter().enumerate() {
            assert_eq!(rv[s], pv[k]);
        }
    }
}
