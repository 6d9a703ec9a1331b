//! Contrast augmentation: patch extraction, synthetic patches from NMR maps,
//! four-sample mini-batches, epoch scheduling over parameter grids and batch
//! file emission.

mod batch;
pub mod psab;
mod synth;

pub use batch::{
    assemble_minibatch, assemble_minibatch_with, emit_batches, emit_batches_to, epoch_schedule,
    epoch_schedule_indices, ContrastGrids, EmitConfig, EmitSummary, Subject, DEFAULT_LABEL_COUNT,
    DEFAULT_PATCH_SIZE,
};
pub use psab::{BatchRecord, Provenance, RecordMeta, RegressionRecord, TargetKind};
pub use synth::{synthesis_norm, synthesize_patch, SynthesisBasis};

use crate::error::{Error, Result};
use crate::volume::Volume;

/// Axis-aligned patch placement.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct PatchSpec {
    pub size: [usize; 3],
    pub corner: [usize; 3],
}

impl PatchSpec {
    pub fn new(size: [usize; 3], corner: [usize; 3]) -> Self {
        PatchSpec { size, corner }
    }

    pub fn voxel_count(&self) -> usize {
        self.size.iter().product()
    }

    pub fn check_within(&self, dims: [usize; 3]) -> Result<()> {
        for a in 0..3 {
            if self.size[a] == 0 || self.corner[a] + self.size[a] > dims[a] {
                return Err(Error::Bounds(format!(
                    "patch at corner {:?} with size {:?} does not fit volume dims {dims:?}",
                    self.corner, self.size
                )));
            }
        }
        Ok(())
    }

    /// Flat indices into a volume of `dims`, in patch voxel order.
    pub(crate) fn indices(&self, dims: [usize; 3]) -> impl Iterator<Item = usize> + '_ {
        let [cx, cy, cz] = self.corner;
        let [sx, sy, sz] = self.size;
        (cz..cz + sz).flat_map(move |k| {
            (cy..cy + sy).flat_map(move |j| {
                let row = dims[0] * (j + dims[1] * k);
                (cx..cx + sx).map(move |i| row + i)
            })
        })
    }
}

/// Copy the subvolume covered by `spec`.
pub fn extract_patch(v: &Volume, spec: &PatchSpec) -> Result<Volume> {
    spec.check_within(v.dims())?;
    let data = spec.indices(v.dims()).map(|i| v.data()[i]).collect();
    Ok(Volume::new(spec.size, v.spacing(), data, v.intent())?.with_orientation(*v.orientation()))
}

/// Mix a base seed with a stream tag and an index (splitmix64 finalizer), so
/// every record gets an independent, order-free seed.
pub fn derive_seed(seed: u64, stream: u64, index: u64) -> u64 {
    let mut z = seed
        ^ stream.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ index.wrapping_add(1).wrapping_mul(0xD1B5_4A32_D192_ED03);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::Intent;

    fn ramp(dims: [usize; 3]) -> Volume {
        Volume::from_fn(dims, [1.0; 3], Intent::Intensity, |i, j, k| (i + 100 * j + 10_000 * k) as f64).unwrap()
    }

    #[test]
    fn full_patch_is_identity() {
        let v = ramp([6, 5, 4]);
        let p = extract_patch(&v, &PatchSpec::new([6, 5, 4], [0, 0, 0])).unwrap();
        assert_eq!(p, v);
    }

    #[test]
    fn patch_matches_direct_indexing() {
        let v = ramp([4, 4, 4]);
        let p = extract_patch(&v, &PatchSpec::new([2, 2, 2], [1, 0, 0])).unwrap();
        let mut expected = Vec::new();
        for k in 0..2 {
            for j in 0..2 {
                for i in 1..3 {
                    expected.push(v.get(i, j, k));
                }
            }
        }
        assert_eq!(p.data(), expected.as_slice());
        assert_eq!(p.data()[..2], [1.0, 2.0]);
    }

    #[test]
    fn out_of_bounds() {
        let v = ramp([4, 4, 4]);
        assert!(matches!(
            extract_patch(&v, &PatchSpec::new([2, 2, 2], [3, 0, 0])),
            Err(Error::Bounds(_))
        ));
        assert!(extract_patch(&v, &PatchSpec::new([2, 2, 2], [9, 9, 9])).is_err());
    }

    #[test]
    fn derived_seeds_differ() {
        let a = derive_seed(1, 0, 0);
        assert_ne!(a, derive_seed(1, 0, 1));
        assert_ne!(a, derive_seed(1, 1, 0));
        assert_ne!(a, derive_seed(2, 0, 0));
        assert_eq!(a, derive_seed(1, 0, 0));
    }
}
