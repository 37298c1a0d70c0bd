//! A laboratory for maximum-margin linear classification.
//!
//! The crate computes the exact max-margin separator of a finite dataset
//! through its dual (the minimum-norm point of the signed hull), exposes
//! the smoothed margin that gradient methods actually ascend, and runs
//! several training dynamics whose iterates provably drift toward the
//! max-margin direction:
//!
//! * [`optim`]: gradient flow (integrated with RK4) and three discrete
//!   stepsize schedules on the smoothed margin;
//! * [`deep`]: Riemannian ascent over products of Frobenius-normalized
//!   layer matrices (deep linear networks);
//! * [`kernel`]: the same dual and ascent dynamics in an RKHS.
//!
//! Every run can be checked after the fact: [`analysis::verify_trajectory`]
//! replays the recorded iterates against the quantitative guarantees the
//! dynamics are supposed to satisfy (margin-gap decay, norm growth,
//! gradient-norm bounds, distance-to-optimum interlacing), and
//! [`analysis::fit_rate`] estimates empirical convergence rates.
//!
//! All of it assumes features live in the unit ball and labels are +/-1;
//! [`dataset::validate`] reports violations of that contract instead of
//! silently rescaling.

pub mod analysis;
pub mod dataset;
pub mod deep;
pub mod error;
pub mod kernel;
pub mod margin;
pub mod minnorm;
pub mod optim;
pub mod smooth;
pub mod trajectory;

pub use error::{Error, Result};
