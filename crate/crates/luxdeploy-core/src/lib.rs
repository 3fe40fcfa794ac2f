//! Power-minimal deployment of visible-light-communication UAVs.
//!
//! The crate covers the full loop from ambient-light measurements to
//! per-UAV positions and transmit powers:
//!
//! 1. [`grid`] — rasterised radiance snapshots of the service area and
//!    their on-disk CSV form.
//! 2. [`gmm`] — a K-component Gaussian-mixture summary of each snapshot,
//!    fitted by weighted expectation-maximization, with a stable
//!    component ordering across time and a flat feature-vector encoding.
//! 3. [`gru`] — a from-scratch gated recurrent unit trained by gradient
//!    descent through time to forecast the next frame's mixture
//!    parameters.
//! 4. [`channel`] — the Lambertian VLC link budget: channel gain,
//!    capacity, and the power a user's rate and illumination demands
//!    require.
//! 5. [`solver`] — the per-UAV convex placement/power subproblem solved
//!    by Lagrangian dual ascent with closed-form primal updates, plus a
//!    brute-force verification oracle.
//! 6. [`scenario`] / [`pipeline`] — synthetic data generation, user
//!    placement, and the end-to-end orchestration with baseline
//!    comparisons.

pub mod channel;
pub mod error;
pub mod geometry;
pub mod gmm;
pub mod grid;
pub mod gru;
pub mod kmeans;
pub mod pipeline;
pub mod scenario;
pub mod solver;

pub use error::{Error, Result};
pub use geometry::Point2;
