//! Numerical approximation of the stationary regime of SDEs driven by
//! fractional Brownian motion (Hurst index `H > 1/2`).
//!
//! The pipeline is
//!
//! 1. [`fgn`]: exact fractional Gaussian noise by circulant embedding,
//! 2. [`euler`]: the continuous-time Euler scheme with step `gamma`,
//! 3. [`ergodic`]: occupation measures of the scheme and their functional averages,
//! 4. [`density`]: kernel density estimates of the marginal occupation measure,
//!    plus semi-explicit oracles (`H = 1/2` speed measure, fractional OU variance).
//!
//! [`model`] holds coefficient/Lyapunov descriptions and sampling checks of the
//! stability assumption, [`pathspace`] the Hölder, p-variation and Young-sum
//! functionals used for diagnostics.

pub mod density;
pub mod ergodic;
pub mod error;
pub mod euler;
pub mod fgn;
pub mod model;
pub mod pathspace;
pub mod stats;

pub use density::{DensityEstimate, Grid, KernelMode, KernelSpec};
pub use ergodic::{MarginalOccupation, OccupationMeasureView, TimeAverageSeries};
pub use error::{Error, ErrorCategory, Result};
pub use euler::{EulerConfig, Trajectory};
pub use fgn::{FgnConfig, FgnSequence};
pub use model::{CoefficientModel, LyapunovSpec, ModelRegistry};
pub use pathspace::{HolderReport, PathView, SampledPath};
