//! Regularized odd power variations of Gaussian and martingale-driven
//! Volterra processes: path simulation, Monte Carlo estimators, exact second
//! moments by quadrature, and numerical checks of the structural hypotheses
//! under which the variations vanish.

// Domain guards are written as `!(x >= lo)` so that NaN fails them.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod conditions;
pub mod error;
pub mod functions;
pub mod metrics;
pub mod numeric;
pub mod parallel;
pub mod rng;
pub mod simulate;
pub mod theory;
pub mod variation;

pub use error::{Error, Result};
pub use functions::ScalarFn;
pub use metrics::{BivariateMetric, Descriptor, TimeGrid, UnivariateMetric, VolterraKernel};
pub use simulate::{MartingaleVolterra, PathEnsemble, ProcessModel, Sampler, VolatilityModel};
