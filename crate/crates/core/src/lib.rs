//! Sufficient dimension reduction for right-censored survival outcomes.
//!
//! The central subspace of `T | X` is estimated from `(Y, δ, X)` with
//! `Y = min(T, C)` through estimating equations built on the counting process
//! `N(u) = I(Y ≤ u, δ = 1)` and the at-risk process `Y(u) = I(Y ≥ u)`:
//!
//! - [`EstimatorKind::CpSir`]: closed form, SVD of a sliced covariance matrix.
//! - [`EstimatorKind::Forward`]: forward-regression moments (d = 1).
//! - [`EstimatorKind::IrCp`]: counting-process inverse regression.
//! - [`EstimatorKind::IrSemi`]: semiparametric (doubly robust) inverse
//!   regression using a kernel conditional hazard.
//!
//! The three moment-based estimators minimize `ψₙ(B)ᵀψₙ(B)` over the Stiefel
//! manifold `BᵀB = I` with a Cayley-transform curvilinear search
//! ([`stiefel::optimize`]), warm-started from CP-SIR.
//!
//! ```no_run
//! use survsdr::{estimators, simulate::{generate, SimSetting}, EstimatorKind, OptimConfig};
//!
//! let (ds, truth) = generate(&SimSetting::new(1, 6, 400, 7)).unwrap();
//! let report = estimators::fit(&ds, 1, EstimatorKind::IrCp, &Default::default()).unwrap();
//! let score = survsdr::metrics::score(&ds, truth.b_true.matrix(), report.b_hat.matrix()).unwrap();
//! println!("{:.3}", score.frob);
//! ```

pub mod data;
pub mod error;
pub mod estimators;
pub mod inference;
pub mod metrics;
pub mod nonparam;
pub mod objectives;
pub mod simulate;
pub mod stiefel;

pub use data::{DirectionMatrix, EstimatorKind, NormalizedDirection, RiskOrder, SurvivalDataset};
pub use error::{Result, SdrError};
pub use estimators::FitConfig;
pub use nonparam::{KernelPlan, NonparamConfig};
pub use stiefel::{FitReport, OptimConfig};
