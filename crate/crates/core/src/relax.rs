//! Variable flip angle relaxometry and synthetic training pairs for NMR
//! regressors.

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::augment::psab::{PsbrHeader, PsbrWriter, RecordMeta, RegressionRecord, TargetKind};
use crate::augment::{derive_seed, synthesis_norm, synthesize_patch, PatchSpec};
use crate::error::{Error, Result};
use crate::pulse::ThetaSet;
use crate::volume::{BrainMask, Intent, NmrMaps, Volume};

/// Multi-flip-angle FLASH acquisition with a shared TR and TE.
#[derive(Debug, Clone)]
pub struct MefAcquisition {
    pub images: Vec<Volume>,
    /// Radians, one per image.
    pub flip_angles: Vec<f64>,
    pub tr: f64,
    pub te: f64,
}

impl MefAcquisition {
    pub fn new(images: Vec<Volume>, flip_angles: Vec<f64>, tr: f64, te: f64) -> Result<Self> {
        if images.len() != flip_angles.len() {
            return Err(Error::Usage(format!(
                "{} images but {} flip angles",
                images.len(),
                flip_angles.len()
            )));
        }
        if images.len() < 2 {
            return Err(Error::Usage(format!("at least 2 flip angles are required, got {}", images.len())));
        }
        for (i, a) in flip_angles.iter().enumerate() {
            if !(a.is_finite() && *a > 0.0 && *a < std::f64::consts::FRAC_PI_2) {
                return Err(Error::Usage(format!("flip angle {a} rad outside (0, pi/2)")));
            }
            if flip_angles[..i].iter().any(|b| (a - b).abs() < 1e-12) {
                return Err(Error::Usage(format!("flip angle {a} rad repeated")));
            }
        }
        if !(tr > 0.0 && tr.is_finite()) || !(te >= 0.0 && te.is_finite()) {
            return Err(Error::Usage(format!("TR and TE must be positive, got {tr}, {te}")));
        }
        if images.iter().any(|v| !v.same_grid(&images[0])) {
            return Err(Error::Validation("MEF images are not on one grid".into()));
        }
        Ok(MefAcquisition {
            images,
            flip_angles,
            tr,
            te,
        })
    }

    pub fn dims(&self) -> [usize; 3] {
        self.images[0].dims()
    }
}

/// Gain-scaled proton density and T1 with the voxels the fit could resolve.
#[derive(Debug, Clone)]
pub struct RhoT1Fit {
    pub g_rho: Volume,
    pub t1: Volume,
    pub valid: BrainMask,
}

/// Linear fit of `S/sin a = E1 S/tan a + G rho (1 - E1)`; returns
/// `(G rho, T1)` or `None` for voxels outside the model.
pub fn fit_voxel(signal: &[f64], angles: &[f64], tr: f64) -> Option<(f64, f64)> {
    let smax = signal.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let smin = signal.iter().copied().fold(f64::INFINITY, f64::min);
    if !(smin > 0.0 && smax.is_finite()) || smax - smin <= 1e-12 * smax {
        return None;
    }
    let n = signal.len() as f64;
    let xs: Vec<f64> = signal.iter().zip(angles).map(|(s, a)| s / a.tan()).collect();
    let ys: Vec<f64> = signal.iter().zip(angles).map(|(s, a)| s / a.sin()).collect();
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxx, mut sxy) = (0.0, 0.0);
    for (x, y) in xs.iter().zip(&ys) {
        sxx += (x - mx) * (x - mx);
        sxy += (x - mx) * (y - my);
    }
    if sxx <= 1e-24 * mx * mx {
        return None;
    }
    let e1 = sxy / sxx;
    if !(e1 > 0.0 && e1 < 1.0) {
        return None;
    }
    let g_rho = (my - e1 * mx) / (1.0 - e1);
    let t1 = -tr / e1.ln();
    (g_rho > 0.0 && g_rho.is_finite() && t1.is_finite()).then_some((g_rho, t1))
}

/// Voxelwise proton density (up to the receive gain and TE decay) and T1.
/// Voxels where the fit fails are zero in both maps and cleared in `valid`.
pub fn fit_rho_t1(mef: &MefAcquisition, mask: &BrainMask) -> Result<RhoT1Fit> {
    mef.images.iter().try_for_each(|v| mask.check_matches(v))?;
    let n = mef.images[0].len();
    let fits: Vec<Option<(f64, f64)>> = (0..n)
        .into_par_iter()
        .with_min_len(4096)
        .map(|i| {
            if !mask.data()[i] {
                return None;
            }
            let s: Vec<f64> = mef.images.iter().map(|v| v.data()[i]).collect();
            fit_voxel(&s, &mef.flip_angles, mef.tr)
        })
        .collect();
    let reference = &mef.images[0];
    let g_rho = reference.with_data(fits.iter().map(|f| f.map_or(0.0, |f| f.0)).collect(), Intent::NmrRho)?;
    let t1 = reference.with_data(fits.iter().map(|f| f.map_or(0.0, |f| f.1)).collect(), Intent::NmrT1)?;
    let valid = BrainMask::new(reference.dims(), fits.iter().map(Option::is_some).collect())?;
    Ok(RhoT1Fit { g_rho, t1, valid })
}

#[derive(Debug, Clone)]
pub struct T2Solve {
    pub t2: Volume,
    pub valid: BrainMask,
}

/// Invert the FLASH approximation for T2 given the image, ρ, T1 and θ.
pub fn solve_t2(s: &Volume, rho: &Volume, t1: &Volume, theta: &ThetaSet, mask: &BrainMask) -> Result<T2Solve> {
    if !theta.kind.is_flash_like() {
        return Err(Error::Usage(format!("T2 solve needs a FLASH or SPGR theta, got {}", theta.kind)));
    }
    let [t0, t1c, t2c] = theta.theta;
    if t2c == 0.0 {
        return Err(Error::Usage("theta2 is zero, T2 is not identifiable".into()));
    }
    for v in [s, rho, t1] {
        mask.check_matches(v)?;
    }
    let out: Vec<Option<f64>> = (0..s.len())
        .into_par_iter()
        .with_min_len(4096)
        .map(|i| {
            let (sv, r, t) = (s.data()[i], rho.data()[i], t1.data()[i]);
            if !mask.data()[i] || !(sv > 0.0 && r > 0.0 && t > 0.0) {
                return None;
            }
            let den = sv.ln() - t0 - r.ln() - t1c / t;
            let t2 = t2c / den;
            (den != 0.0 && t2.is_finite() && t2 > 0.0).then_some(t2)
        })
        .collect();
    Ok(T2Solve {
        t2: s.with_data(out.iter().map(|v| v.unwrap_or(0.0)).collect(), Intent::NmrT2)?,
        valid: BrainMask::new(s.dims(), out.iter().map(Option::is_some).collect())?,
    })
}

/// Full-volume synthetic image of contrast `theta`, scaled to [0, 1].
pub fn synthesize_gamma_a(nmr: &NmrMaps, theta: &ThetaSet, mask: &BrainMask) -> Result<Volume> {
    let norm = synthesis_norm(nmr, mask, theta)?;
    synthesize_patch(nmr, mask, theta, norm)
}

pub struct RegressionExport<'a> {
    pub synth: &'a Volume,
    pub target: &'a Volume,
    pub target_kind: TargetKind,
    /// Contrast the synthetic image was generated with.
    pub theta: ThetaSet,
    pub subject_id: &'a str,
    pub patch_size: [usize; 3],
    pub count: usize,
    pub seed: u64,
}

/// Paired (synthetic image, NMR target) patches at uniformly drawn corners.
pub fn regression_pairs(ex: &RegressionExport) -> Result<Vec<RegressionRecord>> {
    if ex.count == 0 {
        return Err(Error::Usage("record count must be at least 1".into()));
    }
    if !ex.synth.same_grid(ex.target) {
        return Err(Error::Validation("synthetic image and target map are not co-registered".into()));
    }
    let dims = ex.synth.dims();
    PatchSpec::new(ex.patch_size, [0; 3]).check_within(dims)?;
    Ok((0..ex.count)
        .map(|r| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(ex.seed, 4, r as u64));
            let corner = [0, 1, 2].map(|a| rng.random_range(0..=dims[a] - ex.patch_size[a]));
            let spec = PatchSpec::new(ex.patch_size, corner);
            let take = |v: &Volume| spec.indices(dims).map(|i| v.data()[i] as f32).collect();
            RegressionRecord {
                meta: RecordMeta::synthetic(ex.subject_id, ex.theta, corner),
                intensity: take(ex.synth),
                target: take(ex.target),
            }
        })
        .collect())
}

pub fn export_regression_pairs(ex: &RegressionExport, out_path: impl AsRef<Path>) -> Result<usize> {
    let records = regression_pairs(ex)?;
    let path = out_path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let header = PsbrHeader {
        record_count: records.len() as u64,
        patch_dims: ex.patch_size.map(|d| d as u32),
        target_kind: ex.target_kind,
    };
    let mut w = PsbrWriter::new(BufWriter::new(file), header)?;
    for r in &records {
        w.write_record(r)?;
    }
    w.finish()?;
    Ok(records.len())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::augment::psab::read_psbr;
    use crate::pulse::{flash_theoretical, SequenceKind, TheoreticalFlashParams};
    use approx::assert_relative_eq;

    const DEG: f64 = std::f64::consts::PI / 180.0;

    fn signals(g_rho: f64, t1: f64, tr: f64, angles: &[f64]) -> Vec<f64> {
        angles
            .iter()
            .map(|&a| flash_theoretical(g_rho, t1, 50.0, &TheoreticalFlashParams::new(1.0, tr, 0.0, a).unwrap()).unwrap())
            .collect()
    }

    #[test]
    fn four_angle_recovery() {
        let angles = [3.0, 5.0, 10.0, 20.0].map(|a| a * DEG);
        let (g, t1) = fit_voxel(&signals(1.0, 900.0, 20.0, &angles), &angles, 20.0).unwrap();
        assert!((t1 - 900.0).abs() < 0.1);
        assert!((g - 1.0).abs() < 1e-4);
    }

    #[test]
    fn two_angles_exact() {
        let angles = [4.0 * DEG, 18.0 * DEG];
        let (g, t1) = fit_voxel(&signals(2.5, 1400.0, 15.0, &angles), &angles, 15.0).unwrap();
        assert_relative_eq!(t1, 1400.0, max_relative = 1e-9);
        assert_relative_eq!(g, 2.5, max_relative = 1e-9);
    }

    #[test]
    fn degenerate_voxels_invalid() {
        let angles = [3.0, 5.0, 10.0, 20.0].map(|a| a * DEG);
        assert!(fit_voxel(&[0.2; 4], &angles, 20.0).is_none());
        assert!(fit_voxel(&[0.0; 4], &angles, 20.0).is_none());
        assert!(fit_voxel(&[0.1, -0.1, 0.2, 0.3], &angles, 20.0).is_none());
        // signal rising faster than any E1 < 1 allows
        assert!(fit_voxel(&[0.01, 0.1, 0.5, 2.0], &angles, 20.0).is_none());
    }

    #[test]
    fn mef_validation() {
        let v = Volume::filled([2, 2, 2], [1.0; 3], 1.0, Intent::Intensity).unwrap();
        assert!(matches!(MefAcquisition::new(vec![v.clone()], vec![0.1], 20.0, 5.0), Err(Error::Usage(_))));
        assert!(MefAcquisition::new(vec![v.clone(), v.clone()], vec![0.1, 0.1], 20.0, 5.0).is_err());
        assert!(MefAcquisition::new(vec![v.clone(), v], vec![0.1, 0.2], 20.0, 5.0).is_ok());
    }

    #[test]
    fn volume_fit_flags_and_scales() {
        let angles: Vec<f64> = [3.0, 5.0, 10.0, 20.0].iter().map(|a| a * DEG).collect();
        let dims = [3, 2, 2];
        let t1_of = |i: usize| 500.0 + 200.0 * i as f64;
        let images = |c: f64| -> Vec<Volume> {
            angles
                .iter()
                .map(|&a| {
                    Volume::from_fn(dims, [1.0; 3], Intent::Intensity, |i, j, k| {
                        let idx = i + 3 * (j + 2 * k);
                        if idx == 5 {
                            0.3
                        } else {
                            c * signals(0.9, t1_of(idx), 20.0, &[a])[0]
                        }
                    })
                    .unwrap()
                })
                .collect()
        };
        let mask = BrainMask::full(dims);
        let base = fit_rho_t1(&MefAcquisition::new(images(1.0), angles.clone(), 20.0, 4.0).unwrap(), &mask).unwrap();
        let scaled = fit_rho_t1(&MefAcquisition::new(images(3.0), angles.clone(), 20.0, 4.0).unwrap(), &mask).unwrap();
        assert!(!base.valid.data()[5] && base.t1.data()[5] == 0.0 && base.g_rho.data()[5] == 0.0);
        assert_eq!(base.valid.count(), 11);
        for i in (0..12).filter(|&i| i != 5) {
            assert_relative_eq!(base.t1.data()[i], t1_of(i), max_relative = 1e-3);
            assert_relative_eq!(scaled.t1.data()[i], base.t1.data()[i], max_relative = 1e-9);
            assert_relative_eq!(scaled.g_rho.data()[i], 3.0 * base.g_rho.data()[i], max_relative = 1e-9);
        }
    }

    fn vol(v: f64, intent: Intent) -> Volume {
        Volume::filled([2, 1, 1], [1.0; 3], v, intent).unwrap()
    }

    #[test]
    fn t2_inverts_approximation() {
        let theta = ThetaSet::new(SequenceKind::Flash, [0.3, -120.0, -6.0]).unwrap();
        let (rho, t1, t2) = (0.8, 950.0, 80.0);
        let s = crate::pulse::approx_intensity([rho, t1, t2], &theta).unwrap();
        let out = solve_t2(
            &vol(s, Intent::Intensity),
            &vol(rho, Intent::NmrRho),
            &vol(t1, Intent::NmrT1),
            &theta,
            &BrainMask::full([2, 1, 1]),
        )
        .unwrap();
        assert!((out.t2.data()[0] - 80.0).abs() < 1e-9);
        assert_eq!(out.valid.count(), 2);
    }

    #[test]
    fn t2_zero_denominator_invalid() {
        let theta = ThetaSet::new(SequenceKind::Flash, [0.0, 0.0, -6.0]).unwrap();
        // ln S - ln rho == 0
        let out = solve_t2(
            &vol(0.5, Intent::Intensity),
            &vol(0.5, Intent::NmrRho),
            &vol(900.0, Intent::NmrT1),
            &theta,
            &BrainMask::full([2, 1, 1]),
        )
        .unwrap();
        assert_eq!(out.valid.count(), 0);
        assert!(out.t2.data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn t2_needs_nonzero_theta2() {
        let theta = ThetaSet::new(SequenceKind::Flash, [0.0, -10.0, 0.0]).unwrap();
        let v = vol(1.0, Intent::Intensity);
        let r = solve_t2(&v, &v, &v, &theta, &BrainMask::full([2, 1, 1]));
        assert!(matches!(r, Err(Error::Usage(_))));
    }

    fn maps() -> NmrMaps {
        let d = [6, 5, 4];
        let f = |base: f64, intent| Volume::from_fn(d, [1.0; 3], intent, |i, j, k| base * (1.0 + 0.05 * (i + 2 * j + 3 * k) as f64)).unwrap();
        NmrMaps::new(f(0.7, Intent::NmrRho), f(800.0, Intent::NmrT1), f(70.0, Intent::NmrT2)).unwrap()
    }

    #[test]
    fn gamma_a_zero_theta_is_normalized_rho() {
        let m = maps();
        let mask = BrainMask::full(m.dims());
        let out = synthesize_gamma_a(&m, &ThetaSet::new(SequenceKind::Mprage, [0.0; 3]).unwrap(), &mask).unwrap();
        let max = m.rho.data().iter().copied().fold(0.0, f64::max);
        for (o, r) in out.data().iter().zip(m.rho.data()) {
            assert_relative_eq!(*o, r / max, max_relative = 1e-12);
        }
    }

    #[test]
    fn regression_export_round_trip() {
        let m = maps();
        let theta = ThetaSet::new(SequenceKind::Mprage, [0.1, 1e-3, -2e-7]).unwrap();
        let synth = synthesize_gamma_a(&m, &theta, &BrainMask::full(m.dims())).unwrap();
        let ex = RegressionExport {
            synth: &synth,
            target: &m.t1,
            target_kind: TargetKind::T1,
            theta,
            subject_id: "s1",
            patch_size: [3, 2, 2],
            count: 5,
            seed: 11,
        };
        let dir = tempfile::tempdir().unwrap();
        let (p1, p2) = (dir.path().join("a.psbr"), dir.path().join("b.psbr"));
        assert_eq!(export_regression_pairs(&ex, &p1).unwrap(), 5);
        export_regression_pairs(&ex, &p2).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
        let (h, recs) = read_psbr(&p1).unwrap();
        assert_eq!(h.target_kind, TargetKind::T1);
        assert_eq!(recs.len(), 5);
        for r in &recs {
            let c = r.meta.corner.map(|c| c as usize);
            let mut n = 0;
            for k in 0..2 {
                for j in 0..2 {
                    for i in 0..3 {
                        assert_eq!(r.target[n], m.t1.get(c[0] + i, c[1] + j, c[2] + k) as f32);
                        n += 1;
                    }
                }
            }
        }
        assert!(matches!(regression_pairs(&RegressionExport { count: 0, ..ex }), Err(Error::Usage(_))));
    }
}
