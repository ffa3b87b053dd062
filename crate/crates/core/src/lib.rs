//! Sensitivity analysis for Baron-Kenny mediation estimates under unmeasured
//! confounding.
//!
//! The confounder's strength is described by partial correlations with the
//! exposure, the mediators and the outcome. From those the crate computes
//! bias-adjusted direct and indirect effects, bootstrap uncertainty,
//! worst-case t statistics and robustness values, and bounds relative to an
//! observed covariate. [`oracle`] builds explicit confounder columns that
//! realize any feasible parameters, which is how the formulas are tested.

pub mod benchmarking;
pub mod error;
pub mod inference;
pub mod linalg;
pub mod mediation;
pub mod oracle;
pub mod ovb;
pub mod robustness;

pub use benchmarking::{BenchmarkMoments, BenchmarkSpec, BenchmarkWorst, LeaveOneOut};
pub use error::{Error, Result};
pub use inference::{BootstrapPlan, BootstrapSummary};
pub use linalg::{DataMatrix, LsFit, Mat, RMatrix, Vector};
pub use mediation::{
    EffectKind, EffectReport, MediationData, MediationMoments, Method, NaturalSensitivity, SampleR2,
};
pub use oracle::{ConfounderTarget, RvRatioRow, RatioDesign};
pub use ovb::{OvbMoments, ScalarUSensitivity, VectorUSensitivity};
pub use robustness::{ConfounderMode, Criterion, RVReport, RhoBudget, SearchOptions, TSurface};
