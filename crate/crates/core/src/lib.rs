//! Offset-time model for combined vergence/saccade eye movements.
//!
//! The pipeline runs from raw binocular gaze traces to a continuous
//! probabilistic model:
//!
//! 1. [`trials`] smooths traces, detects when both eyes land on the target and
//!    validates the resulting offset time.
//! 2. [`exgauss`] fits an exponentially modified Gaussian to the offset times
//!    of each displacement condition by maximum likelihood.
//! 3. [`model`] regresses the per-condition parameters onto three Gaussian
//!    [`rbf`] networks, giving a differentiable `(Δvergence, Δsaccade) ->
//!    ExGauss` map.
//! 4. [`eval`] measures goodness of fit (discrete KL, KS) and builds the
//!    single-axis ablations and cross-validation splits.
//! 5. [`apps`] uses the model to estimate gaze overhead from fixation-depth
//!    distributions and to place a HUD at the depth that minimizes expected
//!    offset time.
//!
//! All angles are degrees and all times are seconds.

pub mod apps;
pub mod error;
pub mod eval;
pub mod exgauss;
pub mod geometry;
pub mod model;
pub mod rbf;
pub mod trials;

mod special;

pub use error::{Error, Result};
pub use exgauss::ExGaussParams;
pub use geometry::{GazeDisplacement, GazePoint, ObserverGeometry};
pub use model::{GazeModel, TrainConfig};
pub use rbf::RbfNet;
