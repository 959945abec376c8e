//! Two-stage semiparametric estimation with orthogonal moment conditions.
//!
//! The first stage fits a nonparametric nuisance function `ĥ` on an
//! auxiliary split of the data. The second stage solves the empirical moment
//! equation `(1/n) Σ m(Z_t, θ, ĥ(X_t)) = 0` for `θ` with Newton's method and
//! attaches sandwich inference. Around that pipeline the crate ships the
//! instrumentation needed to check the root-n asymptotics empirically:
//! the realized Taylor terms of the estimator, orthogonality diagnostics,
//! first-stage rate measurement and a deterministic Monte Carlo engine.
//!
//! Module map:
//!
//! * [`numerics`]: small dense linear algebra, finite differences, normal
//!   distribution helpers and seeded random streams.
//! * [`moments`]: the [`MomentModel`] abstraction, the built-in models and
//!   orthogonality checks.
//! * [`firststage`]: nonparametric learners producing a [`NuisanceFunction`].
//! * [`secondstage`]: sample splitting, the Z-estimator and inference.
//! * [`diagnostics`]: the `B = C + D + E` decomposition and related checks.
//! * [`montecarlo`]: data-generating processes and the replication engine.

pub mod diagnostics;
pub mod error;
pub mod firststage;
pub mod moments;
pub mod montecarlo;
pub mod numerics;
pub mod secondstage;

pub use error::{Error, Result};
pub use firststage::{ClipSpec, LearnerChoice, LearnerKind, LearnerSpec, NuisanceFunction, Target};
pub use moments::{MomentModel, Observation};
pub use numerics::{Matrix, RngStream, Vector};
