//! Correspondences between discrete multivariate stationary fields,
//! Θ-self-similar fields on the exponential clock, and stationary-increment
//! fields, with exact Gaussian simulation of fractional Brownian sheets and the
//! fractional Ornstein–Uhlenbeck fields built from them.

pub mod algebra;
pub mod ar1;
pub mod cli;
pub mod error;
pub mod fields;
pub mod fou;
pub mod gaussian;
pub mod numfmt;
pub mod stats;
pub mod transforms;

pub use algebra::{check_commuting, mat_exp_sym, star_apply, star_index, SymMatrix, ThetaTuple};
pub use ar1::{
    ar1_drift, ar1_residual, noise_from_stationary, stationary_solution, verify_ar1, Ar1System,
    ResidualReport,
};
pub use error::{Error, Result};
pub use fields::{read_field, write_field, Clock, FieldWindow, MultiIndex, Sidecar, Window};
pub use fou::{fou_batch, fou_first_kind, fou_second_kind, FouConfig, FouKind, FouPlan};
pub use gaussian::{
    build_cov_matrix, fbs_cov, sample_gaussian_field, sample_multivariate_sheet, HurstSpec,
    MixingMatrix, SampleBatch, SheetSampler,
};
pub use stats::{
    empirical_moments, increment_stationarity_check, self_similarity_check, stationarity_check,
    EnsembleReport,
};
pub use transforms::{
    lamperti, lamperti_inv, m_forward, m_inverse_largest, m_inverse_truncated, truncation_depth,
    TransformKind, TransformRecord, Truncated, TruncationPolicy,
};
