use super::PatchSpec;
use crate::error::{Error, Result};
use crate::pulse::{log_intensity_unchecked, SequenceKind, ThetaSet};
use crate::volume::{percentile_nearest_rank, BrainMask, Intent, NmrMaps, Volume, UNIT_SCALE_PERCENTILE};

/// Voxelwise `approx_intensity / norm` clamped to [0, 1], zero outside the
/// mask.
pub fn synthesize_patch(nmr: &NmrMaps, mask: &BrainMask, theta: &ThetaSet, norm: f64) -> Result<Volume> {
    if !(norm > 0.0 && norm.is_finite()) {
        return Err(Error::Domain(format!("normalizer must be positive, got {norm}")));
    }
    nmr.validate_positive(mask)?;
    let data = (0..nmr.rho.len())
        .map(|i| {
            if mask.data()[i] {
                let [rho, t1, t2] = nmr.beta(i);
                synth_voxel(rho, t1, t2, theta, norm)
            } else {
                0.0
            }
        })
        .collect();
    nmr.rho.with_data(data, Intent::Intensity)
}

#[inline]
fn synth_voxel(rho: f64, t1: f64, t2: f64, theta: &ThetaSet, norm: f64) -> f64 {
    (log_intensity_unchecked(rho, t1, t2, theta).exp() / norm).clamp(0.0, 1.0)
}

/// Synthesize the region `spec` of already validated maps.
pub(crate) fn synthesize_region(
    nmr: &NmrMaps,
    mask: &BrainMask,
    spec: &PatchSpec,
    theta: &ThetaSet,
    norm: f64,
) -> Vec<f32> {
    spec.indices(nmr.dims())
        .map(|i| {
            if mask.data()[i] {
                let [rho, t1, t2] = nmr.beta(i);
                synth_voxel(rho, t1, t2, theta, norm) as f32
            } else {
                0.0
            }
        })
        .collect()
}

fn norm_from_logs(mut logs: Vec<f64>) -> Result<f64> {
    if logs.is_empty() {
        return Err(Error::Validation("brain mask has no voxels".into()));
    }
    // the nearest-rank percentile commutes with the monotone exp
    let norm = percentile_nearest_rank(&mut logs, UNIT_SCALE_PERCENTILE).exp();
    if !(norm > 0.0 && norm.is_finite()) {
        return Err(Error::DegenerateIntensity(format!(
            "synthetic intensity normalizer is {norm}"
        )));
    }
    Ok(norm)
}

/// 99.9th percentile of the synthetic intensity over in-mask voxels.
pub fn synthesis_norm(nmr: &NmrMaps, mask: &BrainMask, theta: &ThetaSet) -> Result<f64> {
    nmr.validate_positive(mask)?;
    let logs = (0..nmr.rho.len())
        .filter(|&i| mask.data()[i])
        .map(|i| {
            let [rho, t1, t2] = nmr.beta(i);
            log_intensity_unchecked(rho, t1, t2, theta)
        })
        .collect();
    norm_from_logs(logs)
}

/// Per-subject precomputed `ln ρ` and basis terms of every in-mask voxel, so
/// the normalizer of a new θ costs three multiply-adds per voxel.
#[derive(Debug, Clone)]
pub struct SynthesisBasis {
    ln_rho: Vec<f64>,
    // indexed by family: FLASH/SPGR, MPRAGE, T2-SPACE
    terms: [[Vec<f64>; 2]; 3],
}

fn family(kind: SequenceKind) -> usize {
    match kind {
        SequenceKind::Flash | SequenceKind::Spgr => 0,
        SequenceKind::Mprage => 1,
        SequenceKind::T2Space => 2,
    }
}

impl SynthesisBasis {
    pub fn new(nmr: &NmrMaps, mask: &BrainMask) -> Result<Self> {
        nmr.validate_positive(mask)?;
        let idx: Vec<usize> = (0..nmr.rho.len()).filter(|&i| mask.data()[i]).collect();
        let ln_rho = idx.iter().map(|&i| nmr.rho.data()[i].ln()).collect();
        let terms = [SequenceKind::Flash, SequenceKind::Mprage, SequenceKind::T2Space].map(|kind| {
            let (mut g1, mut g2) = (Vec::with_capacity(idx.len()), Vec::with_capacity(idx.len()));
            for &i in &idx {
                let [a, b] = kind.basis(nmr.t1.data()[i], nmr.t2.data()[i]);
                g1.push(a);
                g2.push(b);
            }
            [g1, g2]
        });
        Ok(SynthesisBasis { ln_rho, terms })
    }

    pub fn norm(&self, theta: &ThetaSet) -> Result<f64> {
        let [g1, g2] = &self.terms[family(theta.kind)];
        let [t0, t1, t2] = theta.theta;
        let logs = self
            .ln_rho
            .iter()
            .zip(g1)
            .zip(g2)
            .map(|((lr, a), b)| t0 + lr + t1 * a + t2 * b)
            .collect();
        norm_from_logs(logs)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pulse::approx_intensity;

    fn uniform_maps(dims: [usize; 3], rho: f64, t1: f64, t2: f64) -> NmrMaps {
        NmrMaps::new(
            Volume::filled(dims, [1.0; 3], rho, Intent::NmrRho).unwrap(),
            Volume::filled(dims, [1.0; 3], t1, Intent::NmrT1).unwrap(),
            Volume::filled(dims, [1.0; 3], t2, Intent::NmrT2).unwrap(),
        )
        .unwrap()
    }

    /// CSF/GM/WM slabs along x.
    fn phantom(dims: [usize; 3]) -> NmrMaps {
        let tissue = |i: usize| match i * 3 / dims[0] {
            0 => [1.0, 4000.0, 2000.0],
            1 => [0.86, 950.0, 100.0],
            _ => [0.77, 600.0, 80.0],
        };
        let make = |c: usize, intent| Volume::from_fn(dims, [1.0; 3], intent, |i, _, _| tissue(i)[c]).unwrap();
        NmrMaps::new(make(0, Intent::NmrRho), make(1, Intent::NmrT1), make(2, Intent::NmrT2)).unwrap()
    }

    #[test]
    fn zero_theta_passes_rho_through() {
        let maps = phantom([6, 2, 2]);
        let mask = BrainMask::full(maps.dims());
        let th = ThetaSet::new(SequenceKind::Mprage, [0.0; 3]).unwrap();
        let out = synthesize_patch(&maps, &mask, &th, 2.0).unwrap();
        for (o, r) in out.data().iter().zip(maps.rho.data()) {
            assert!((o - r / 2.0).abs() < 1e-15);
        }
    }

    #[test]
    fn uniform_maps_give_uniform_output() {
        let maps = uniform_maps([3, 3, 3], 0.8, 900.0, 90.0);
        let mask = BrainMask::full(maps.dims());
        let th = ThetaSet::new(SequenceKind::Flash, [0.3, -100.0, -10.0]).unwrap();
        let scalar = approx_intensity([0.8, 900.0, 90.0], &th).unwrap();
        let out = synthesize_patch(&maps, &mask, &th, 1.7).unwrap();
        assert!(out.data().iter().all(|&x| (x - scalar / 1.7).abs() < 1e-15));
        let norm = synthesis_norm(&maps, &mask, &th).unwrap();
        assert!((norm - scalar).abs() <= 1e-15 * scalar);
    }

    #[test]
    fn outside_mask_is_zero_and_clamped_inside() {
        let maps = uniform_maps([2, 1, 1], 1.0, 900.0, 90.0);
        let mask = BrainMask::new([2, 1, 1], vec![true, false]).unwrap();
        let th = ThetaSet::new(SequenceKind::Flash, [0.0; 3]).unwrap();
        let out = synthesize_patch(&maps, &mask, &th, 0.5).unwrap();
        assert_eq!(out.data(), &[1.0, 0.0]);
    }

    #[test]
    fn log_gap_becomes_intensity_ratio() {
        // GM/WM gap of 0.3 in log-intensity under FLASH
        let (gm, wm) = ([0.86, 950.0, 100.0], [0.77, 600.0, 80.0]);
        let dims = [2, 1, 1];
        let maps = NmrMaps::new(
            Volume::new(dims, [1.0; 3], vec![gm[0], wm[0]], Intent::NmrRho).unwrap(),
            Volume::new(dims, [1.0; 3], vec![gm[1], wm[1]], Intent::NmrT1).unwrap(),
            Volume::new(dims, [1.0; 3], vec![gm[2], wm[2]], Intent::NmrT2).unwrap(),
        )
        .unwrap();
        // choose θ2 = 0 and solve θ1 for ln(S_wm/S_gm) = 0.3
        let theta1 = (0.3 - (wm[0] / gm[0] as f64).ln()) / (1.0 / wm[1] - 1.0 / gm[1]);
        let th = ThetaSet::new(SequenceKind::Flash, [-3.0, theta1, 0.0]).unwrap();
        let out = synthesize_patch(&maps, &BrainMask::full(dims), &th, 1.0).unwrap();
        let ratio = out.data()[1] / out.data()[0];
        assert!((ratio - 0.3f64.exp()).abs() < 1e-6 * ratio, "{ratio}");
    }

    #[test]
    fn norm_scales_with_rho() {
        let maps = phantom([9, 3, 3]);
        let mask = BrainMask::full(maps.dims());
        let th = ThetaSet::new(SequenceKind::T2Space, [0.1, -2e-4, 20.0]).unwrap();
        let n1 = synthesis_norm(&maps, &mask, &th).unwrap();
        let scaled = NmrMaps::new(
            maps.rho.with_data(maps.rho.data().iter().map(|r| r * 3.5).collect(), Intent::NmrRho).unwrap(),
            maps.t1.clone(),
            maps.t2.clone(),
        )
        .unwrap();
        let n2 = synthesis_norm(&scaled, &mask, &th).unwrap();
        assert!((n2 / n1 - 3.5).abs() < 1e-12);
    }

    #[test]
    fn norm_matches_sorting_oracle_and_cached_basis() {
        let maps = phantom([30, 4, 4]);
        let mask = BrainMask::full(maps.dims());
        let basis = SynthesisBasis::new(&maps, &mask).unwrap();
        for kind in [SequenceKind::Flash, SequenceKind::Mprage, SequenceKind::T2Space] {
            let th = ThetaSet::new(kind, [0.2, -1e-4, -3e-8]).unwrap();
            let mut vals: Vec<f64> = (0..maps.rho.len())
                .map(|i| approx_intensity(maps.beta(i), &th).unwrap())
                .collect();
            vals.sort_by(f64::total_cmp);
            let rank = (0.999 * vals.len() as f64).ceil() as usize;
            let oracle = vals[rank - 1];
            let norm = synthesis_norm(&maps, &mask, &th).unwrap();
            assert!((norm - oracle).abs() <= 1e-12 * oracle, "{kind}");
            assert!((basis.norm(&th).unwrap() - oracle).abs() <= 1e-12 * oracle, "{kind}");
        }
    }

    #[test]
    fn invalid_inputs() {
        let maps = uniform_maps([2, 1, 1], 1.0, 900.0, 90.0);
        let mask = BrainMask::full([2, 1, 1]);
        let th = ThetaSet::new(SequenceKind::Flash, [0.0; 3]).unwrap();
        assert!(synthesize_patch(&maps, &mask, &th, 0.0).is_err());
        let empty = BrainMask::new([2, 1, 1], vec![false; 2]).unwrap();
        assert!(synthesis_norm(&maps, &empty, &th).is_err());
        let bad = uniform_maps([2, 1, 1], 0.0, 900.0, 90.0);
        assert!(matches!(synthesize_patch(&bad, &mask, &th, 1.0), Err(Error::Domain(_))));
    }
}
