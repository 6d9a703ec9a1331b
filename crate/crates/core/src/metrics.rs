//! Overlap and multi-acquisition consistency statistics for segmentations.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::volume::Volume;

/// Label id to structure acronym.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StructureSet {
    entries: Vec<(u32, String)>,
}

impl Default for StructureSet {
    fn default() -> Self {
        let pairs = [
            (2, "WM"),
            (3, "CT"),
            (4, "LV"),
            (7, "CWM"),
            (8, "CCT"),
            (10, "TH"),
            (11, "CA"),
            (12, "PU"),
            (13, "PA"),
            (16, "BS"),
            (17, "HI"),
            (18, "AM"),
        ];
        StructureSet::new(pairs.iter().map(|(i, s)| (*i, s.to_string())).collect()).unwrap()
    }
}

impl StructureSet {
    pub fn new(entries: Vec<(u32, String)>) -> Result<Self> {
        let ids: BTreeSet<_> = entries.iter().map(|e| e.0).collect();
        let names: BTreeSet<_> = entries.iter().map(|e| e.1.as_str()).collect();
        if ids.len() != entries.len() || names.len() != entries.len() {
            return Err(Error::Validation("structure ids and acronyms must be unique".into()));
        }
        Ok(StructureSet { entries })
    }

    /// Lines of `id acronym`; `#` starts a comment.
    pub fn parse(text: &str, source_name: &str) -> Result<Self> {
        let mut entries = Vec::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |message: String| Error::Parse {
                source_name: source_name.to_string(),
                line: n + 1,
                message,
            };
            let mut parts = line.split_whitespace();
            let (Some(id), Some(name), None) = (parts.next(), parts.next(), parts.next()) else {
                return Err(err(format!("expected `id acronym`, got `{line}`")));
            };
            let id = id.parse().map_err(|_| err(format!("bad label id `{id}`")))?;
            entries.push((id, name.to_string()));
        }
        StructureSet::new(entries)
    }

    pub fn entries(&self) -> &[(u32, String)] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

fn check_label(v: &Volume, what: &str) -> Result<()> {
    if v.intent().is_label() {
        Ok(())
    } else {
        Err(Error::Usage(format!("{what} must be a label volume")))
    }
}

/// `2|A∩B| / (|A|+|B|)` for one label; 1 when the label is absent from both.
pub fn dice(a: &Volume, b: &Volume, label: u32) -> Result<f64> {
    if a.dims() != b.dims() {
        return Err(Error::Usage(format!("dims differ: {:?} vs {:?}", a.dims(), b.dims())));
    }
    let l = label as f64;
    let (mut na, mut nb, mut both) = (0usize, 0usize, 0usize);
    for (x, y) in a.data().iter().zip(b.data()) {
        let (ia, ib) = (*x == l, *y == l);
        na += ia as usize;
        nb += ib as usize;
        both += (ia && ib) as usize;
    }
    if na + nb == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * both as f64 / (na + nb) as f64)
}

/// Volume in mm³ of every structure, zero for absent labels.
pub fn structure_volumes(seg: &Volume, structures: &StructureSet) -> Result<Vec<(String, f64)>> {
    check_label(seg, "segmentation")?;
    let mut counts: BTreeMap<u32, usize> = BTreeMap::new();
    for v in seg.data() {
        if *v >= 0.0 {
            *counts.entry(*v as u32).or_default() += 1;
        }
    }
    let vox = seg.voxel_volume();
    Ok(structures
        .entries()
        .iter()
        .map(|(id, name)| (name.clone(), counts.get(id).copied().unwrap_or(0) as f64 * vox))
        .collect())
}

fn mean_of(volumes: &[f64]) -> Result<f64> {
    if volumes.len() < 2 {
        return Err(Error::Usage(format!("at least 2 acquisitions are required, got {}", volumes.len())));
    }
    let mu = volumes.iter().sum::<f64>() / volumes.len() as f64;
    if !(mu.abs() > 0.0) {
        return Err(Error::DegenerateIntensity(format!("mean structure volume is {mu}")));
    }
    Ok(mu)
}

/// Population mean and standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mu = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / n;
    (mu, var.sqrt())
}

/// `100 σ/μ` of one structure's volume across acquisitions, σ the
/// population standard deviation.
pub fn coefficient_of_variation(volumes: &[f64]) -> Result<f64> {
    mean_of(volumes)?;
    let (mu, sd) = mean_std(volumes);
    Ok(100.0 * sd / mu)
}

/// `100 (v_d − μ)/μ` for each acquisition d.
pub fn signed_relative_difference(volumes: &[f64]) -> Result<Vec<f64>> {
    let mu = mean_of(volumes)?;
    Ok(volumes.iter().map(|v| 100.0 * (v - mu) / mu).collect())
}

/// Structure volumes of one segmentation.
#[derive(Debug, Clone)]
pub struct Measurement {
    pub subject: String,
    pub acquisition: String,
    pub volumes: Vec<(String, f64)>,
}

/// Study-level consistency: per structure, the across-subject mean and std
/// of the per-subject CoV and of each acquisition's signed difference.
#[derive(Debug, Clone, PartialEq)]
pub struct ConsistencyReport {
    pub acquisitions: Vec<String>,
    pub subjects: usize,
    /// (structure, CoV mean/std, per-acquisition signed difference mean/std)
    pub rows: Vec<(String, (f64, f64), Vec<(f64, f64)>)>,
}

pub fn consistency_report(measurements: &[Measurement], structures: &StructureSet) -> Result<ConsistencyReport> {
    let acquisitions: Vec<String> = measurements
        .iter()
        .map(|m| m.acquisition.clone())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let mut by_subject: BTreeMap<&str, BTreeMap<&str, &Measurement>> = BTreeMap::new();
    for m in measurements {
        if by_subject.entry(&m.subject).or_default().insert(&m.acquisition, m).is_some() {
            return Err(Error::Usage(format!(
                "subject {} has acquisition {} twice",
                m.subject, m.acquisition
            )));
        }
    }
    if by_subject.is_empty() {
        return Err(Error::Usage("no measurements".into()));
    }
    for (s, acq) in &by_subject {
        if acq.len() != acquisitions.len() {
            return Err(Error::Usage(format!(
                "subject {s} has {} of {} acquisitions",
                acq.len(),
                acquisitions.len()
            )));
        }
    }
    let rows = structures
        .entries()
        .par_iter()
        .enumerate()
        .map(|(si, (_, name))| {
            let mut covs = Vec::new();
            let mut srds = vec![Vec::new(); acquisitions.len()];
            for acq in by_subject.values() {
                let vols: Vec<f64> = acquisitions.iter().map(|a| acq[a.as_str()].volumes[si].1).collect();
                covs.push(coefficient_of_variation(&vols).map_err(|e| Error::Validation(format!("{name}: {e}")))?);
                for (d, v) in signed_relative_difference(&vols)?.into_iter().enumerate() {
                    srds[d].push(v);
                }
            }
            Ok((name.clone(), mean_std(&covs), srds.iter().map(|v| mean_std(v)).collect()))
        })
        .collect::<Result<_>>()?;
    Ok(ConsistencyReport {
        acquisitions,
        subjects: by_subject.len(),
        rows,
    })
}

impl ConsistencyReport {
    /// Tab-separated table, cells `mean (std)` across subjects.
    pub fn to_tsv(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "# subjects={}; CoV uses the population std across acquisitions; cells are mean (std) across subjects",
            self.subjects
        );
        let _ = write!(s, "structure\tcov_percent");
        for a in &self.acquisitions {
            let _ = write!(s, "\tsrd_percent:{a}");
        }
        s.push('\n');
        for (name, cov, srd) in &self.rows {
            let _ = write!(s, "{name}\t{:.4} ({:.4})", cov.0, cov.1);
            for (m, sd) in srd {
                let _ = write!(s, "\t{:.4} ({:.4})", m + 0.0, sd);
            }
            s.push('\n');
        }
        s
    }
}

/// Per-structure Dice of two segmentations, as TSV; empty/empty pairs are
/// marked.
pub fn dice_table(a: &Volume, b: &Volume, structures: &StructureSet) -> Result<String> {
    check_label(a, "segmentation")?;
    check_label(b, "segmentation")?;
    let mut s = String::from("structure\tdice\n");
    for (id, name) in structures.entries() {
        let d = dice(a, b, *id)?;
        let absent = !a.data().contains(&(*id as f64)) && !b.data().contains(&(*id as f64));
        let _ = writeln!(s, "{name}\t{d:.6}{}", if absent { "\tempty" } else { "" });
    }
    Ok(s)
}
