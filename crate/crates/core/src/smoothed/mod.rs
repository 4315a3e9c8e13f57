//! Smoothed-analysis laboratory: ρ-perturbations, Khatri-Rao conditioning
//! sweeps, projections of perturbed product vectors, robust column
//! dimensions, and ordered θ-orthogonal systems.

mod blocks;
mod orthosys;
mod perturb;
mod projection;
mod qmatrix;
mod sweep;

pub use blocks::robust_column_dimensions;
pub use orthosys::{build_orthogonal_system, verify_orthogonal_system, OrthogonalSystem, Verification};
pub use perturb::{base_matrix, perturb, BaseFamily, PerturbationModel};
pub use projection::{projection_experiment, HistogramBin, ProjectionReport};
pub use qmatrix::{q_matrix, q_matrix_experiment, QExperiment};
pub use sweep::{kr_sigma_min_sweep, quantile, SweepGrid, SweepRecord, SweepResult};
