//! Numeric tolerances and finite-difference step sizes used across the crate.
//!
//! Every tolerance that affects an observable decision lives here so tests can
//! reference the same constant the implementation uses.

/// Absolute tolerance on the AIDS parameter constraints (adding-up, symmetry,
/// zero row and column sums).
pub const PARAM: f64 = 1e-12;

/// Relative slack allowed on the budget feasibility check `p . x <= income`.
pub const BUDGET_SLACK: f64 = 1e-9;

/// Denominators smaller than this in the weak-separability ratio restriction
/// make the point singular.
pub const SINGULAR_RATIO: f64 = 1e-10;

/// Cross effects with magnitude at or below this are treated as boundary
/// cases by the complementarity indicators.
pub const SIGN_BOUNDARY: f64 = 1e-10;

/// Largest Slutsky eigenvalue accepted as negative semidefinite when
/// screening sampled parameters.
pub const NSD_PROBE: f64 = 1e-9;

/// Relative step for first income derivatives (two-point central stencil).
pub const INCOME_STEP_REL: f64 = 1e-5;

/// Absolute floor for the first-derivative income step.
pub const INCOME_STEP_MIN: f64 = 1e-7;

/// Relative step for second income derivatives.  The five-point stencil needs
/// a wider step than the first derivative to keep roundoff below truncation.
pub const INCOME2_STEP_REL: f64 = 1e-3;

/// Absolute floor for the second-derivative income step.
pub const INCOME2_STEP_MIN: f64 = 1e-5;

/// Relative step for price derivatives, scaled by each coordinate.
pub const PRICE_STEP_REL: f64 = 1e-5;

/// Step scale for directional derivatives along null-space directions,
/// multiplied by `1 + max |coordinate|`.
pub const DIRECTION_STEP_REL: f64 = 1e-5;

/// Eigenvalues of the row-normalized Gram matrix below this count as null
/// directions when extracting the constrained perturbation space.
pub const NULL_SPACE_EIG: f64 = 1e-12;
