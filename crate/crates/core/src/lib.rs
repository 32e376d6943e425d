//! Toolkit for f-divergence based concept unlearning in diffusion models.
//!
//! * [`divergence`]: generators, Fenchel conjugates and output activations.
//! * [`gaussian`]: closed-form divergences between diagonal Gaussians and a
//!   quadrature oracle.
//! * [`variational`]: sample-based divergence estimation with a trained critic.
//! * [`diffusion`]: a small conditional DDPM on 2-D mixture data.
//! * [`unlearn`]: closed-form and min-max unlearning losses and training loops.
//! * [`dynamics`]: the continuous-time min-max flow, its equilibrium Jacobian
//!   and spectral bounds.
//! * [`eval`]: erase/preserve metrics, divergence sweeps and chained erasure.
//! * [`report`] and [`plot`]: CSV tables, TOML run manifests and SVG plots.

pub mod diffusion;
pub mod divergence;
pub mod dynamics;
pub mod error;
pub mod eval;
pub mod gaussian;
pub mod nn;
pub mod plot;
pub mod quadrature;
pub mod report;
pub mod special;
pub mod unlearn;
pub mod variational;

pub use error::{Error, Result};
