//! Estimators for disaggregated evaluation of a model's per-group
//! performance from scarce data.
//!
//! The crate models group means as a heteroskedastic Gaussian vector
//! `y ~ N(mu, Sigma)` with `Sigma_gg = sigma^2 / n_g` and provides:
//!
//! - closed-form baselines (naive, pooled, Bock shrinkage, and their
//!   multi-task counterparts) in [`baselines`];
//! - MAP estimation under an additive intersectional-effects prior whose
//!   covariance is a nonnegative combination of subset-agreement indicator
//!   matrices ([`prior`], [`objectives`]);
//! - SURE objectives with analytic gradients and the bound-constrained
//!   quasi-Newton fitting drivers ([`objectives`], [`optimizer`]);
//! - an independent weighted-ridge-regression formulation of the same
//!   estimators used for cross-checking ([`oracle`]).

pub mod baselines;
mod error;
mod linalg;
pub mod objectives;
pub mod optimizer;
pub mod oracle;
pub mod prior;
pub mod space;
pub mod summary;

pub use error::{Error, Result};
pub use space::{Attribute, AttributeSpace};
pub use summary::{GroundTruth, RecordBatch, SummarizeConfig, TaskSummary};
