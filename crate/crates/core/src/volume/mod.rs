//! Volumes, brain masks and NMR parameter maps.
//!
//! Voxel data is stored row-major with the first axis varying fastest, i.e.
//! voxel `(i, j, k)` lives at `i + nx * (j + ny * k)`.

mod intensity;
pub mod nifti;
mod resample;

pub use intensity::{percentile_nearest_rank, scale_unit, standardize_wm, UNIT_SCALE_PERCENTILE};
pub use nifti::{read_nifti, write_nifti};
pub use resample::conform;

use crate::error::{Error, Result};

/// What the voxel values of a [`Volume`] represent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum Intent {
    #[default]
    Intensity,
    Label,
    NmrRho,
    NmrT1,
    NmrT2,
}

impl Intent {
    pub fn is_label(self) -> bool {
        matches!(self, Intent::Label)
    }

    pub(crate) fn tag(self) -> &'static str {
        match self {
            Intent::Intensity => "intensity",
            Intent::Label => "label",
            Intent::NmrRho => "nmr-rho",
            Intent::NmrT1 => "nmr-t1",
            Intent::NmrT2 => "nmr-t2",
        }
    }

    pub(crate) fn from_tag(tag: &str) -> Option<Self> {
        Some(match tag {
            "intensity" => Intent::Intensity,
            "label" => Intent::Label,
            "nmr-rho" => Intent::NmrRho,
            "nmr-t1" => Intent::NmrT1,
            "nmr-t2" => Intent::NmrT2,
            _ => return None,
        })
    }
}

/// Orientation fields of a NIfTI header. They are carried along unchanged and
/// never used for resampling; volumes are assumed axis-aligned.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Orientation {
    pub qform_code: i16,
    pub sform_code: i16,
    pub quatern: [f32; 3],
    pub qoffset: [f32; 3],
    pub srow: [[f32; 4]; 3],
}

/// A 3D scalar grid with voxel spacing in millimetres.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume {
    dims: [usize; 3],
    spacing: [f64; 3],
    data: Vec<f64>,
    intent: Intent,
    orientation: Orientation,
}

impl Volume {
    pub fn new(dims: [usize; 3], spacing: [f64; 3], data: Vec<f64>, intent: Intent) -> Result<Self> {
        if dims.iter().any(|&d| d == 0) {
            return Err(Error::Validation(format!("volume dims must be positive, got {dims:?}")));
        }
        let expected = dims[0] * dims[1] * dims[2];
        if data.len() != expected {
            return Err(Error::Validation(format!(
                "data length {} does not match dims {dims:?} ({expected} voxels)",
                data.len()
            )));
        }
        if spacing.iter().any(|&s| !(s.is_finite() && s > 0.0)) {
            return Err(Error::Validation(format!(
                "voxel spacing must be strictly positive, got {spacing:?}"
            )));
        }
        if intent.is_label() {
            if let Some(bad) = data.iter().find(|&&x| !(x >= 0.0 && x.fract() == 0.0)) {
                return Err(Error::Validation(format!(
                    "label volume contains non-integer or negative value {bad}"
                )));
            }
        }
        Ok(Volume {
            dims,
            spacing,
            data,
            intent,
            orientation: Orientation::default(),
        })
    }

    /// Volume with every voxel set to `value`.
    pub fn filled(dims: [usize; 3], spacing: [f64; 3], value: f64, intent: Intent) -> Result<Self> {
        let n = dims.iter().product();
        Volume::new(dims, spacing, vec![value; n], intent)
    }

    /// Build a volume by evaluating `f(i, j, k)` at every voxel.
    pub fn from_fn(
        dims: [usize; 3],
        spacing: [f64; 3],
        intent: Intent,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(dims.iter().product());
        for k in 0..dims[2] {
            for j in 0..dims[1] {
                for i in 0..dims[0] {
                    data.push(f(i, j, k));
                }
            }
        }
        Volume::new(dims, spacing, data, intent)
    }

    pub fn with_orientation(mut self, orientation: Orientation) -> Self {
        self.orientation = orientation;
        self
    }

    /// Same geometry, new data and intent.
    pub fn with_data(&self, data: Vec<f64>, intent: Intent) -> Result<Self> {
        Ok(Volume::new(self.dims, self.spacing, data, intent)?.with_orientation(self.orientation))
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn spacing(&self) -> [f64; 3] {
        self.spacing
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn intent(&self) -> Intent {
        self.intent
    }

    pub fn orientation(&self) -> &Orientation {
        &self.orientation
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.dims[0] * (j + self.dims[1] * k)
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, k: usize) -> f64 {
        self.data[self.index(i, j, k)]
    }

    pub fn same_grid(&self, other: &Volume) -> bool {
        self.dims == other.dims && self.spacing == other.spacing
    }

    /// Volume of one voxel in mm³.
    pub fn voxel_volume(&self) -> f64 {
        self.spacing.iter().product()
    }
}

/// Boolean brain mask over a volume grid.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BrainMask {
    dims: [usize; 3],
    data: Vec<bool>,
}

impl BrainMask {
    pub fn new(dims: [usize; 3], data: Vec<bool>) -> Result<Self> {
        if data.len() != dims.iter().product::<usize>() {
            return Err(Error::Validation(format!(
                "mask length {} does not match dims {dims:?}",
                data.len()
            )));
        }
        Ok(BrainMask { dims, data })
    }

    /// Every voxel inside the mask.
    pub fn full(dims: [usize; 3]) -> Self {
        BrainMask {
            dims,
            data: vec![true; dims.iter().product()],
        }
    }

    /// Voxels with a strictly positive value.
    pub fn from_positive(v: &Volume) -> Self {
        BrainMask {
            dims: v.dims(),
            data: v.data().iter().map(|&x| x > 0.0).collect(),
        }
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn data(&self) -> &[bool] {
        &self.data
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn to_volume(&self, spacing: [f64; 3]) -> Result<Volume> {
        let data = self.data.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
        Volume::new(self.dims, spacing, data, Intent::Label)
    }

    pub(crate) fn check_matches(&self, v: &Volume) -> Result<()> {
        if self.dims != v.dims() {
            return Err(Error::Validation(format!(
                "mask dims {:?} do not match volume dims {:?}",
                self.dims,
                v.dims()
            )));
        }
        Ok(())
    }

    pub(crate) fn require_nonempty(&self) -> Result<usize> {
        match self.count() {
            0 => Err(Error::Validation("brain mask has no voxels".into())),
            n => Ok(n),
        }
    }

    /// Values of `v` at in-mask voxels, in voxel order.
    pub fn select(&self, v: &Volume) -> Result<Vec<f64>> {
        self.check_matches(v)?;
        Ok(v.data()
            .iter()
            .zip(&self.data)
            .filter_map(|(&x, &m)| m.then_some(x))
            .collect())
    }
}

/// Co-registered proton density, T1 (ms) and T2 (ms) maps of one subject.
#[derive(Debug, Clone, PartialEq)]
pub struct NmrMaps {
    pub rho: Volume,
    pub t1: Volume,
    pub t2: Volume,
}

impl NmrMaps {
    pub fn new(rho: Volume, t1: Volume, t2: Volume) -> Result<Self> {
        if !rho.same_grid(&t1) || !rho.same_grid(&t2) {
            return Err(Error::Validation(
                "rho, T1 and T2 maps must share dims and spacing".into(),
            ));
        }
        Ok(NmrMaps { rho, t1, t2 })
    }

    pub fn dims(&self) -> [usize; 3] {
        self.rho.dims()
    }

    /// NMR triple at a flat voxel index.
    #[inline]
    pub fn beta(&self, idx: usize) -> [f64; 3] {
        [self.rho.data()[idx], self.t1.data()[idx], self.t2.data()[idx]]
    }

    /// Check that every in-mask voxel of all three maps is strictly positive.
    pub fn validate_positive(&self, mask: &BrainMask) -> Result<()> {
        mask.check_matches(&self.rho)?;
        for (name, map) in [("rho", &self.rho), ("T1", &self.t1), ("T2", &self.t2)] {
            let bad = map
                .data()
                .iter()
                .zip(mask.data())
                .position(|(&x, &m)| m && !(x.is_finite() && x > 0.0));
            if let Some(idx) = bad {
                return Err(Error::Domain(format!(
                    "{name} map is not strictly positive inside the mask (voxel {idx}, value {})",
                    map.data()[idx]
                )));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_length_mismatch() {
        assert!(Volume::new([2, 2, 2], [1.0; 3], vec![0.0; 7], Intent::Intensity).is_err());
    }

    #[test]
    fn rejects_bad_spacing() {
        assert!(Volume::new([1, 1, 1], [1.0, 0.0, 1.0], vec![0.0], Intent::Intensity).is_err());
    }

    #[test]
    fn label_intent_requires_nonnegative_integers() {
        assert!(Volume::new([2, 1, 1], [1.0; 3], vec![1.0, 2.5], Intent::Label).is_err());
        assert!(Volume::new([2, 1, 1], [1.0; 3], vec![1.0, -1.0], Intent::Label).is_err());
        assert!(Volume::new([2, 1, 1], [1.0; 3], vec![1.0, 2.0], Intent::Label).is_ok());
    }

    #[test]
    fn index_is_first_axis_fastest() {
        let v = Volume::from_fn([3, 4, 5], [1.0; 3], Intent::Intensity, |i, j, k| {
            (i + 10 * j + 100 * k) as f64
        })
        .unwrap();
        assert_eq!(v.data()[1], 1.0);
        assert_eq!(v.data()[3], 10.0);
        assert_eq!(v.get(2, 3, 4), 432.0);
    }

    #[test]
    fn nmr_positivity_checked_inside_mask_only() {
        let rho = Volume::new([2, 1, 1], [1.0; 3], vec![1.0, 0.0], Intent::NmrRho).unwrap();
        let t = Volume::filled([2, 1, 1], [1.0; 3], 100.0, Intent::NmrT1).unwrap();
        let maps = NmrMaps::new(rho, t.clone(), t).unwrap();
        let inside = BrainMask::new([2, 1, 1], vec![true, false]).unwrap();
        assert!(maps.validate_positive(&inside).is_ok());
        assert!(maps.validate_positive(&BrainMask::full([2, 1, 1])).is_err());
    }
}
