//! Pulse-sequence parameter estimation from tissue class means, and the
//! linear map between parameter sets at two field strengths.

use std::fmt;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::{self, Mat3};
use crate::pulse::{SequenceKind, ThetaSet};
use crate::tissue::{assign_tissues, fit_gmm3, ClassMeans, GmmFit};
use crate::volume::{BrainMask, Volume};

/// Mean NMR values of one tissue. Times in ms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TissueNmr {
    pub rho: f64,
    pub t1: f64,
    pub t2: f64,
}

impl TissueNmr {
    pub fn as_beta(&self) -> [f64; 3] {
        [self.rho, self.t1, self.t2]
    }
}

/// Mean CSF/GM/WM NMR values at one field strength.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TissueTable {
    pub field_tesla: f64,
    pub csf: TissueNmr,
    pub gm: TissueNmr,
    pub wm: TissueNmr,
}

pub const TISSUE_NAMES: [&str; 3] = ["csf", "gm", "wm"];

impl TissueTable {
    pub fn new(field_tesla: f64, csf: TissueNmr, gm: TissueNmr, wm: TissueNmr) -> Result<Self> {
        let t = TissueTable { field_tesla, csf, gm, wm };
        if !(field_tesla > 0.0 && field_tesla.is_finite()) {
            return Err(Error::Validation(format!("field strength must be positive, got {field_tesla}")));
        }
        for (name, tissue) in TISSUE_NAMES.iter().zip(t.tissues()) {
            if tissue.as_beta().iter().any(|v| !(v.is_finite() && *v > 0.0)) {
                return Err(Error::Validation(format!(
                    "{name} NMR values must be positive and finite, got {:?}",
                    tissue.as_beta()
                )));
            }
        }
        Ok(t)
    }

    /// `[csf, gm, wm]`.
    pub fn tissues(&self) -> [TissueNmr; 3] {
        [self.csf, self.gm, self.wm]
    }

    /// Parse the plain-text table: a `field_tesla <T>` line and one
    /// `<tissue> <rho> <t1_ms> <t2_ms>` line for each of csf, gm, wm.
    pub fn parse(text: &str, source_name: &str) -> Result<Self> {
        let mut field = None;
        let mut rows: [Option<TissueNmr>; 3] = [None; 3];
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |message: String| Error::Parse {
                source_name: source_name.to_string(),
                line: i + 1,
                message,
            };
            let fields: Vec<&str> = line.split_whitespace().collect();
            let num = |s: &str| s.parse::<f64>().map_err(|_| err(format!("invalid number {s:?}")));
            match fields[0].to_ascii_lowercase().as_str() {
                "field_tesla" if fields.len() == 2 => field = Some(num(fields[1])?),
                name => {
                    let idx = TISSUE_NAMES
                        .iter()
                        .position(|t| *t == name)
                        .ok_or_else(|| err(format!("unknown entry {:?}", fields[0])))?;
                    if fields.len() != 4 {
                        return Err(err("expected `tissue rho t1_ms t2_ms`".into()));
                    }
                    rows[idx] = Some(TissueNmr {
                        rho: num(fields[1])?,
                        t1: num(fields[2])?,
                        t2: num(fields[3])?,
                    });
                }
            }
        }
        let missing = |what: &str| Error::Parse {
            source_name: source_name.to_string(),
            line: 0,
            message: format!("missing {what} entry"),
        };
        let field = field.ok_or_else(|| missing("field_tesla"))?;
        let [c, g, w] = [0, 1, 2].map(|i| rows[i].ok_or_else(|| missing(TISSUE_NAMES[i])));
        TissueTable::new(field, c?, g?, w?)
    }
}

impl fmt::Display for TissueTable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "field_tesla {}", self.field_tesla)?;
        for (name, t) in TISSUE_NAMES.iter().zip(self.tissues()) {
            writeln!(f, "{name} {} {} {}", t.rho, t.t1, t.t2)?;
        }
        Ok(())
    }
}

/// Rows `[1, g1, g2]` of the approximation's basis for CSF, GM and WM.
pub fn design_matrix(table: &TissueTable, kind: SequenceKind) -> Mat3 {
    table.tissues().map(|t| {
        let [g1, g2] = kind.basis(t.t1, t.t2);
        [1.0, g1, g2]
    })
}

/// Solve `B θ = ln s − ln ρ` for the three approximate parameters.
pub fn estimate_theta(means: &ClassMeans, table: &TissueTable, kind: SequenceKind) -> Result<ThetaSet> {
    let s = means.as_array();
    if let Some(bad) = s.iter().find(|v| !(**v > 0.0)) {
        return Err(Error::Domain(format!("class means must be positive to take logs, got {bad}")));
    }
    let rhs = [0, 1, 2].map(|i| s[i].ln() - table.tissues()[i].rho.ln());
    let theta = linalg::solve3(&design_matrix(table, kind), &rhs, &format!("{kind} design matrix"))?;
    ThetaSet::new(kind, theta)
}

/// Full single-image estimate: mixture fit, tissue means and θ.
#[derive(Debug, Clone, PartialEq)]
pub struct Estimate {
    pub fit: GmmFit,
    pub means: ClassMeans,
    pub theta: ThetaSet,
}

/// Positive in-mask intensities, the samples entering the mixture fit.
pub fn brain_samples(v: &Volume, mask: &BrainMask) -> Result<Vec<f64>> {
    Ok(mask.select(v)?.into_iter().filter(|&x| x > 0.0).collect())
}

pub fn estimate_from_volume(
    v: &Volume,
    mask: &BrainMask,
    kind: SequenceKind,
    table: &TissueTable,
) -> Result<Estimate> {
    let fit = fit_gmm3(&brain_samples(v, mask)?)?;
    let means = assign_tissues(&fit, kind)?;
    let theta = estimate_theta(&means, table, kind)?;
    Ok(Estimate { fit, means, theta })
}

/// Estimate θ for every image of a corpus. Per-item failures are returned in
/// place without aborting the rest.
pub fn estimate_corpus(
    items: &[(Volume, BrainMask, SequenceKind)],
    table: &TissueTable,
) -> Result<Vec<Result<ThetaSet>>> {
    if items.is_empty() {
        return Err(Error::Usage("corpus is empty".into()));
    }
    Ok(items
        .par_iter()
        .map(|(v, m, k)| estimate_from_volume(v, m, *k, table).map(|e| e.theta))
        .collect())
}

/// `K = B_from_table⁻¹ B_other` mapping parameters estimated against one
/// field's tissue table onto the equivalent parameters for another.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldTransform {
    pub k: Mat3,
    pub kind: SequenceKind,
    /// Field whose parameters are the input of [`map_theta`].
    pub from_field: f64,
    /// Field whose tissue table the mapped parameters apply to.
    pub to_field: f64,
    /// `‖B_to K − B_from‖∞`, kept for inspection.
    pub residual: f64,
}

impl FieldTransform {
    pub fn identity(kind: SequenceKind, field: f64) -> Self {
        FieldTransform {
            k: linalg::IDENTITY,
            kind,
            from_field: field,
            to_field: field,
            residual: 0.0,
        }
    }

    pub fn inverse(&self) -> Result<FieldTransform> {
        Ok(FieldTransform {
            k: linalg::inverse3(&self.k, "field transform")?,
            kind: self.kind,
            from_field: self.to_field,
            to_field: self.from_field,
            residual: self.residual,
        })
    }
}

/// Build `K = B_target⁻¹ B_source` where `target` is the table the mapped
/// parameters will be used with (e.g. 1.5 T) and `source` is the field the
/// images were acquired at (e.g. 3 T).
pub fn build_field_transform(
    target: &TissueTable,
    source: &TissueTable,
    kind: SequenceKind,
) -> Result<FieldTransform> {
    let b_target = design_matrix(target, kind);
    let b_source = design_matrix(source, kind);
    linalg::solve3(&b_source, &[0.0; 3], "source design matrix")?;
    let k = linalg::solve3_mat(&b_target, &b_source, "target design matrix")?;
    let residual = linalg::max_abs_diff(&linalg::matmul(&b_target, &k), &b_source);
    Ok(FieldTransform {
        k,
        kind,
        from_field: source.field_tesla,
        to_field: target.field_tesla,
        residual,
    })
}

/// `K θ`: the parameters that reproduce the same class intensities against
/// the target field's tissue table.
pub fn map_theta(theta: &ThetaSet, xf: &FieldTransform) -> Result<ThetaSet> {
    let compatible = theta.kind == xf.kind || (theta.kind.is_flash_like() && xf.kind.is_flash_like());
    if !compatible {
        return Err(Error::Usage(format!(
            "cannot map {} parameters with a {} field transform",
            theta.kind, xf.kind
        )));
    }
    ThetaSet::new(theta.kind, linalg::matvec(&xf.k, &theta.theta))
}
