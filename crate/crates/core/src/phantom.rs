//! Deterministic three-tissue phantoms for tests, benchmarks and demos.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::estimate::TissueTable;
use crate::pulse::{approx_intensity, ThetaSet};
use crate::volume::{BrainMask, Intent, NmrMaps, Volume};

/// Outer radii of the WM core and GM shell relative to the brain radius,
/// giving CSF/GM/WM volume fractions of about 30/35/35%.
pub const SHELL_RADII: [f64; 2] = [0.705, 0.888];

/// Label of each tissue, 0 being background.
pub const TISSUE_LABELS: [u16; 3] = [1, 2, 3];

#[derive(Debug, Clone)]
pub struct Phantom {
    pub nmr: NmrMaps,
    pub labels: Volume,
    pub mask: BrainMask,
    /// Tissue index (0 CSF, 1 GM, 2 WM) of every voxel, `None` outside.
    pub classes: Vec<Option<usize>>,
}

fn shell(n: usize, i: usize, j: usize, k: usize) -> Option<usize> {
    let c = (n as f64 - 1.0) / 2.0;
    let r = [i, j, k].iter().map(|&x| (x as f64 - c).powi(2)).sum::<f64>().sqrt() / c;
    match r {
        r if r < SHELL_RADII[0] => Some(2),
        r if r < SHELL_RADII[1] => Some(1),
        r if r <= 1.0 => Some(0),
        _ => None,
    }
}

/// Concentric WM/GM/CSF shells in an `n`³ 1 mm grid with the table's NMR
/// values, each multiplied voxelwise by `1 + texture·u`, u uniform in
/// [-1, 1]. Background voxels carry CSF values and lie outside the mask.
pub fn shell_phantom(n: usize, table: &TissueTable, texture: f64, seed: u64) -> Result<Phantom> {
    let dims = [n; 3];
    let mut classes = Vec::with_capacity(n * n * n);
    for k in 0..n {
        for j in 0..n {
            for i in 0..n {
                classes.push(shell(n, i, j, k));
            }
        }
    }
    let tissues = table.tissues();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut maps = [Vec::new(), Vec::new(), Vec::new()];
    for c in &classes {
        let beta = tissues[c.unwrap_or(0)].as_beta();
        for p in 0..3 {
            let u: f64 = if texture > 0.0 { rng.random_range(-1.0..=1.0) } else { 0.0 };
            maps[p].push(beta[p] * (1.0 + texture * u));
        }
    }
    let [rho, t1, t2] = maps;
    let nmr = NmrMaps::new(
        Volume::new(dims, [1.0; 3], rho, Intent::NmrRho)?,
        Volume::new(dims, [1.0; 3], t1, Intent::NmrT1)?,
        Volume::new(dims, [1.0; 3], t2, Intent::NmrT2)?,
    )?;
    let labels = Volume::new(
        dims,
        [1.0; 3],
        classes.iter().map(|c| c.map_or(0.0, |c| TISSUE_LABELS[c] as f64)).collect(),
        Intent::Label,
    )?;
    let mask = BrainMask::from_positive(&labels);
    Ok(Phantom {
        nmr,
        labels,
        mask,
        classes,
    })
}

impl Phantom {
    pub fn dims(&self) -> [usize; 3] {
        self.nmr.dims()
    }

    /// Unnormalized approximate intensity in the mask, zero outside.
    pub fn image(&self, theta: &ThetaSet) -> Result<Volume> {
        let data = (0..self.classes.len())
            .map(|i| {
                if self.mask.data()[i] {
                    approx_intensity(self.nmr.beta(i), theta)
                } else {
                    Ok(0.0)
                }
            })
            .collect::<Result<Vec<_>>>()?;
        self.nmr.rho.with_data(data, Intent::Intensity)
    }
}
