use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::psab::{BatchRecord, PsabHeader, PsabWriter, RecordMeta};
use super::synth::{synthesize_region, SynthesisBasis};
use super::{derive_seed, PatchSpec};
use crate::error::{Error, Result};
use crate::grid::{sample_uniform, ParamGrid};
use crate::pulse::{SequenceKind, ThetaSet};
use crate::volume::{scale_unit, BrainMask, NmrMaps, Volume};

pub const DEFAULT_PATCH_SIZE: [usize; 3] = [96, 96, 96];
pub const DEFAULT_LABEL_COUNT: u32 = 41;

const STREAM_THETA: u64 = 1;
const STREAM_CORNER: u64 = 2;
const STREAM_SCHEDULE: u64 = 3;
const MAX_CORNER_DRAWS: usize = 1000;
/// Mini-batch groups generated in parallel before being written in order.
const GROUPS_PER_CHUNK: usize = 32;

/// One training subject: an acquired image with its labels, NMR maps and
/// brain mask, all on the same grid.
#[derive(Debug)]
pub struct Subject {
    pub id: String,
    /// Acquired image scaled to [0, 1] by its 99.9th in-mask percentile.
    pub image: Volume,
    pub image_kind: SequenceKind,
    pub nmr: NmrMaps,
    pub labels: Volume,
    pub mask: BrainMask,
    basis: SynthesisBasis,
    mask_integral: OnceLock<Vec<u32>>,
}

impl Subject {
    pub fn new(
        id: impl Into<String>,
        image: &Volume,
        image_kind: SequenceKind,
        nmr: NmrMaps,
        labels: Volume,
        mask: BrainMask,
    ) -> Result<Self> {
        let id = id.into();
        let dims = image.dims();
        if nmr.dims() != dims || labels.dims() != dims || mask.dims() != dims {
            return Err(Error::Validation(format!(
                "subject {id}: image, NMR maps, labels and mask must share dims {dims:?}"
            )));
        }
        if !labels.intent().is_label() {
            return Err(Error::Validation(format!("subject {id}: label volume must have label intent")));
        }
        let basis = SynthesisBasis::new(&nmr, &mask)?;
        let image = scale_unit(image, &mask)?;
        Ok(Subject {
            id,
            image,
            image_kind,
            nmr,
            labels,
            mask,
            basis,
            mask_integral: OnceLock::new(),
        })
    }

    pub fn dims(&self) -> [usize; 3] {
        self.image.dims()
    }

    pub fn max_label(&self) -> f64 {
        self.labels.data().iter().copied().fold(0.0, f64::max)
    }

    pub fn synthesis_norm(&self, theta: &ThetaSet) -> Result<f64> {
        self.basis.norm(theta)
    }

    /// Summed-area table of the mask with a zero border.
    fn integral(&self) -> &[u32] {
        self.mask_integral.get_or_init(|| {
            let [nx, ny, nz] = self.dims();
            let (sx, sy) = (nx + 1, ny + 1);
            let mut s = vec![0u32; sx * sy * (nz + 1)];
            let m = self.mask.data();
            for k in 0..nz {
                for j in 0..ny {
                    for i in 0..nx {
                        let v = m[i + nx * (j + ny * k)] as u32;
                        let at = |i: usize, j: usize, k: usize| i + sx * (j + sy * k);
                        s[at(i + 1, j + 1, k + 1)] = v + s[at(i, j + 1, k + 1)] + s[at(i + 1, j, k + 1)]
                            + s[at(i + 1, j + 1, k)]
                            - s[at(i, j, k + 1)]
                            - s[at(i, j + 1, k)]
                            - s[at(i + 1, j, k)]
                            + s[at(i, j, k)];
                    }
                }
            }
            s
        })
    }

    /// Number of in-mask voxels inside the patch.
    pub fn mask_count(&self, spec: &PatchSpec) -> usize {
        let s = self.integral();
        let [nx, ny, _] = self.dims();
        let (sx, sy) = (nx + 1, ny + 1);
        let at = |i: usize, j: usize, k: usize| s[i + sx * (j + sy * k)] as i64;
        let [x0, y0, z0] = spec.corner;
        let [x1, y1, z1] = [0, 1, 2].map(|a| spec.corner[a] + spec.size[a]);
        (at(x1, y1, z1) - at(x0, y1, z1) - at(x1, y0, z1) - at(x1, y1, z0) + at(x0, y0, z1) + at(x0, y1, z0)
            + at(x1, y0, z0)
            - at(x0, y0, z0)) as usize
    }

    fn label_patch(&self, spec: &PatchSpec) -> Vec<u16> {
        spec.indices(self.dims()).map(|i| self.labels.data()[i] as u16).collect()
    }

    fn image_patch(&self, spec: &PatchSpec) -> Vec<f32> {
        spec.indices(self.dims()).map(|i| self.image.data()[i] as f32).collect()
    }
}

/// Parameter grids of the three synthetic contrasts of a mini-batch.
#[derive(Debug, Clone, PartialEq)]
pub struct ContrastGrids {
    pub flash: ParamGrid,
    pub t2space: ParamGrid,
    pub mprage: ParamGrid,
}

impl ContrastGrids {
    pub fn new(flash: ParamGrid, t2space: ParamGrid, mprage: ParamGrid) -> Result<Self> {
        if !flash.kind.is_flash_like() || t2space.kind != SequenceKind::T2Space || mprage.kind != SequenceKind::Mprage {
            return Err(Error::Usage(format!(
                "grids must be FLASH/SPGR, T2SPACE and MPRAGE, got {}, {}, {}",
                flash.kind, t2space.kind, mprage.kind
            )));
        }
        Ok(ContrastGrids { flash, t2space, mprage })
    }

    /// Pick one grid per family from an unordered list.
    pub fn from_list(grids: &[ParamGrid]) -> Result<Self> {
        let find = |pred: &dyn Fn(SequenceKind) -> bool, name: &str| {
            let mut it = grids.iter().filter(|g| pred(g.kind));
            match (it.next(), it.next()) {
                (Some(g), None) => Ok(*g),
                (None, _) => Err(Error::Usage(format!("missing {name} grid"))),
                _ => Err(Error::Usage(format!("more than one {name} grid"))),
            }
        };
        ContrastGrids::new(
            find(&|k| k.is_flash_like(), "FLASH/SPGR")?,
            find(&|k| k == SequenceKind::T2Space, "T2SPACE")?,
            find(&|k| k == SequenceKind::Mprage, "MPRAGE")?,
        )
    }

    pub fn as_array(&self) -> [&ParamGrid; 3] {
        [&self.flash, &self.t2space, &self.mprage]
    }
}

/// Four records at one patch location: the real image followed by synthetic
/// FLASH/SPGR, T2-SPACE and MPRAGE contrasts, all sharing one label patch.
pub fn assemble_minibatch_with(subject: &Subject, spec: &PatchSpec, thetas: [ThetaSet; 3]) -> Result<[BatchRecord; 4]> {
    spec.check_within(subject.dims())?;
    let labels = subject.label_patch(spec);
    let real = BatchRecord {
        meta: RecordMeta::real(&subject.id, subject.image_kind, spec.corner),
        intensity: subject.image_patch(spec),
        labels: labels.clone(),
    };
    let synth = |theta: ThetaSet| -> Result<BatchRecord> {
        let norm = subject.synthesis_norm(&theta)?;
        Ok(BatchRecord {
            meta: RecordMeta::synthetic(&subject.id, theta, spec.corner),
            intensity: synthesize_region(&subject.nmr, &subject.mask, spec, &theta, norm),
            labels: labels.clone(),
        })
    };
    let [a, b, c] = thetas;
    Ok([real, synth(a)?, synth(b)?, synth(c)?])
}

/// [`assemble_minibatch_with`] using θ sampled uniformly from each grid.
pub fn assemble_minibatch(subject: &Subject, grids: &ContrastGrids, spec: &PatchSpec, seed: u64) -> Result<[BatchRecord; 4]> {
    let thetas = [0u64, 1, 2].map(|f| sample_uniform(grids.as_array()[f as usize], derive_seed(seed, STREAM_THETA, f)));
    assemble_minibatch_with(subject, spec, thetas)
}

/// Flat grid indices for `n_batches` slots: every point at least once, the
/// remainder drawn uniformly, the whole sequence shuffled.
pub fn epoch_schedule_indices(grid: &ParamGrid, n_batches: usize, seed: u64) -> Result<Vec<usize>> {
    let points = grid.point_count();
    if n_batches < points {
        return Err(Error::Coverage(format!(
            "{n_batches} batches cannot cover {points} grid points ({} bins per dimension); \
             lower the bin count or raise the batch count",
            grid.bins
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut slots: Vec<usize> = (0..points).collect();
    slots.extend((points..n_batches).map(|_| grid.sample_index(&mut rng)));
    slots.shuffle(&mut rng);
    Ok(slots)
}

pub fn epoch_schedule(grid: &ParamGrid, n_batches: usize, seed: u64) -> Result<Vec<ThetaSet>> {
    Ok(epoch_schedule_indices(grid, n_batches, seed)?
        .into_iter()
        .map(|i| grid.point_at(i))
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmitConfig {
    /// Total records; must be a multiple of four.
    pub count: usize,
    pub patch_size: [usize; 3],
    pub label_count: u32,
    pub seed: u64,
    /// Minimum fraction of in-mask voxels in a patch; 0 disables the check.
    pub min_brain_fraction: f64,
}

impl Default for EmitConfig {
    fn default() -> Self {
        EmitConfig {
            count: 4,
            patch_size: DEFAULT_PATCH_SIZE,
            label_count: DEFAULT_LABEL_COUNT,
            seed: 0,
            min_brain_fraction: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmitSummary {
    pub records: usize,
    pub groups: usize,
    /// Whether θ came from full-coverage epoch schedules (otherwise sampled).
    pub full_coverage: bool,
    pub path: Option<PathBuf>,
}

fn sample_corner(subject: &Subject, size: [usize; 3], min_fraction: f64, rng: &mut ChaCha8Rng) -> Result<[usize; 3]> {
    let dims = subject.dims();
    let needed = (min_fraction * size.iter().product::<usize>() as f64).ceil() as usize;
    for _ in 0..MAX_CORNER_DRAWS {
        let corner = [0, 1, 2].map(|a| rng.random_range(0..=dims[a] - size[a]));
        if min_fraction <= 0.0 || subject.mask_count(&PatchSpec::new(size, corner)) >= needed {
            return Ok(corner);
        }
    }
    Err(Error::Validation(format!(
        "subject {}: no patch position with at least {:.1}% brain voxels found in {MAX_CORNER_DRAWS} draws",
        subject.id,
        100.0 * min_fraction
    )))
}

fn validate_emit(subjects: &[Subject], cfg: &EmitConfig) -> Result<()> {
    if subjects.is_empty() {
        return Err(Error::Usage("at least one subject is required".into()));
    }
    if cfg.count == 0 || cfg.count % 4 != 0 {
        return Err(Error::Usage(format!(
            "record count must be a positive multiple of 4 (one real and three synthetic per group), got {}",
            cfg.count
        )));
    }
    if !(0.0..=1.0).contains(&cfg.min_brain_fraction) {
        return Err(Error::Usage(format!("brain fraction must lie in [0, 1], got {}", cfg.min_brain_fraction)));
    }
    if cfg.label_count == 0 || cfg.label_count > u16::MAX as u32 + 1 {
        return Err(Error::Usage(format!("label count {} out of range", cfg.label_count)));
    }
    for s in subjects {
        PatchSpec::new(cfg.patch_size, [0; 3])
            .check_within(s.dims())
            .map_err(|_| Error::Usage(format!("patch size {:?} exceeds subject {} dims {:?}", cfg.patch_size, s.id, s.dims())))?;
        if s.max_label() >= cfg.label_count as f64 {
            return Err(Error::Validation(format!(
                "subject {} has label {} outside the label set of size {}",
                s.id,
                s.max_label(),
                cfg.label_count
            )));
        }
    }
    Ok(())
}

/// Write `cfg.count` records as consecutive four-record groups. Subjects are
/// cycled round-robin, patch corners drawn uniformly over valid positions.
/// When the number of groups covers a grid, θ follow its epoch schedule;
/// otherwise they are sampled uniformly. Output depends only on the inputs
/// and the seed, not on thread count.
pub fn emit_batches_to<W: Write>(
    subjects: &[Subject],
    grids: &ContrastGrids,
    cfg: &EmitConfig,
    out: W,
) -> Result<(W, EmitSummary)> {
    validate_emit(subjects, cfg)?;
    let groups = cfg.count / 4;
    let full_coverage = grids.as_array().iter().all(|g| groups >= g.point_count());
    let schedules: Option<Vec<Vec<usize>>> = if full_coverage {
        Some(
            grids
                .as_array()
                .iter()
                .enumerate()
                .map(|(f, g)| epoch_schedule_indices(g, groups, derive_seed(cfg.seed, STREAM_SCHEDULE, f as u64)))
                .collect::<Result<_>>()?,
        )
    } else {
        None
    };
    let theta_for = |g: usize, family: usize| -> ThetaSet {
        let grid = grids.as_array()[family];
        match &schedules {
            Some(s) => grid.point_at(s[family][g]),
            None => sample_uniform(grid, derive_seed(derive_seed(cfg.seed, STREAM_THETA, g as u64), STREAM_THETA, family as u64)),
        }
    };
    let make_group = |g: usize| -> Result<[BatchRecord; 4]> {
        let subject = &subjects[g % subjects.len()];
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, STREAM_CORNER, g as u64));
        let corner = sample_corner(subject, cfg.patch_size, cfg.min_brain_fraction, &mut rng)?;
        let spec = PatchSpec::new(cfg.patch_size, corner);
        assemble_minibatch_with(subject, &spec, [theta_for(g, 0), theta_for(g, 1), theta_for(g, 2)])
            .map_err(|e| Error::Validation(format!("group {g} (subject {}): {e}", subject.id)))
    };

    let header = PsabHeader {
        record_count: cfg.count as u64,
        patch_dims: cfg.patch_size.map(|d| d as u32),
        label_count: cfg.label_count,
    };
    let mut writer = PsabWriter::new(out, header)?;
    let mut start = 0;
    while start < groups {
        let end = (start + GROUPS_PER_CHUNK).min(groups);
        let chunk: Vec<[BatchRecord; 4]> = (start..end).into_par_iter().map(make_group).collect::<Result<_>>()?;
        for rec in chunk.iter().flatten() {
            writer.write_record(rec)?;
        }
        start = end;
    }
    let out = writer.finish()?;
    Ok((
        out,
        EmitSummary {
            records: cfg.count,
            groups,
            full_coverage,
            path: None,
        },
    ))
}

pub fn emit_batches(subjects: &[Subject], grids: &ContrastGrids, cfg: &EmitConfig, out_path: impl AsRef<Path>) -> Result<EmitSummary> {
    let path = out_path.as_ref();
    validate_emit(subjects, cfg)?;
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let (_, mut summary) = emit_batches_to(subjects, grids, cfg, BufWriter::with_capacity(1 << 20, file))?;
    summary.path = Some(path.to_path_buf());
    Ok(summary)
}
