//! Pulse-sequence adaptive contrast synthesis for brain MRI.
//!
//! Tissue NMR maps (proton density, T1, T2) are turned into images of a
//! chosen contrast through three-parameter approximations of the FLASH/SPGR,
//! MPRAGE and T2-SPACE imaging equations. The same approximations make the
//! parameters of an acquired image estimable from its CSF/GM/WM mean
//! intensities, which in turn define per-sequence parameter grids used to
//! generate contrast-augmented training batches.

pub mod augment;
pub mod error;
pub mod estimate;
pub mod grid;
pub mod linalg;
pub mod metrics;
pub mod phantom;
pub mod pulse;
pub mod relax;
pub mod tissue;
pub mod volume;

pub use augment::{
    assemble_minibatch, emit_batches, epoch_schedule, extract_patch, synthesis_norm, synthesize_patch, BatchRecord,
    ContrastGrids, EmitConfig, PatchSpec, Provenance, Subject,
};
pub use error::{Error, Result};
pub use estimate::{
    build_field_transform, design_matrix, estimate_corpus, estimate_from_volume, estimate_theta, map_theta,
    Estimate, FieldTransform, TissueNmr, TissueTable,
};
pub use grid::{build_grid, build_grid_with, enumerate_grid, sample_uniform, BoundsRule, ParamGrid};
pub use metrics::{
    coefficient_of_variation, consistency_report, dice, signed_relative_difference, structure_volumes, StructureSet,
};
pub use pulse::{
    approx_intensity, approx_log_intensity, fit_approximation_to_theory, flash_theoretical, SequenceKind,
    TheoreticalFlashParams, TheoreticalParams, TheoreticalT2SpaceParams, ThetaSet,
};
pub use relax::{
    export_regression_pairs, fit_rho_t1, solve_t2, synthesize_gamma_a, MefAcquisition, RegressionExport, RhoT1Fit,
};
pub use tissue::{assign_tissues, fit_gmm3, ClassMeans, GmmFit};
pub use volume::{conform, read_nifti, scale_unit, standardize_wm, write_nifti, BrainMask, Intent, NmrMaps, Volume};
