//! Numerical laboratory for the random double-well energy
//!
//! ```text
//! G₁(v, ω, Λₙ) = ∫_{Λₙ} |∇v|² + W(v) − θ g₁(x, ω) v  dx
//! ```
//!
//! on boxes of `n^d` unit cells carrying an i.i.d. bounded field. The crate
//! samples and transforms field realizations ([`field`]), provides the
//! double-well potential ([`potential`]), discretizes the energy and its
//! Euler–Lagrange residual ([`grid`]), computes minimizers and the extremal
//! pair under `±(1 + C₀θ‖g‖∞)` boundary data ([`solver`]), and runs the
//! Monte Carlo estimators built on them ([`stats`]).

mod chain;
pub mod error;
pub mod field;
pub mod grid;
mod linalg;
pub mod potential;
pub mod solver;
pub mod stats;

pub use error::{Error, Result};
pub use field::{derive_seed, DistributionKind, DistributionSpec, FieldRealization, Site};
pub use grid::{
    cell_integral, integral, truncate, BcKind, DiscreteProfile, EnergyBreakdown, Functional,
    GridSpec, Provenance, Region, TruncationGap,
};
pub use potential::{verify_h1, H1Report, PotentialSpec};
pub use solver::{ExtremalAudit, ExtremalPair, Scheme, Solution, Solver, SolverOptions};
pub use stats::{
    clt_check, compensated_sum, decreasing_trend, gap_scaling, ks_normal, loglog_slope,
    uniqueness_diagnostic, write_records, CellAggregate, CltCell, CltReport, DerivativeCheck,
    Estimate, IncrementMode, Increments, Lab, MonotonicityRow, Nested, ScalingReport, StatRecord,
    Summary, Trend, UniquenessReport, VarianceCell, VarianceRow,
};
