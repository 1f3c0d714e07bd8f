//! Operator-learning thermal simulation toolkit.
//!
//! The crate solves the steady heat-conduction equation for modular chip
//! configurations in two complementary ways:
//!
//! * [`fdm`] — a finite-difference reference solver (7-point stencil,
//!   Jacobi-preconditioned conjugate gradient) that serves as ground truth.
//! * [`operator`] + [`trainer`] — a multi-input branch/trunk operator
//!   network trained purely from PDE and boundary-condition residuals,
//!   mapping power maps and boundary-condition functions to full-chip
//!   temperature fields in one forward pass.
//!
//! Supporting modules: [`config`] (chip geometry, mesh, boundary conditions,
//! power maps and the experiment file format), [`grf`] (Gaussian random
//! field sampling of training power maps), [`autodiff`] (second-order
//! forward duals plus reverse-mode parameter gradients), [`eval`]
//! (MAPE/PAPE metrics, benchmarks, slice export) and [`experiment`]
//! (end-to-end experiment pipelines).

pub mod autodiff;
pub mod config;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod fdm;
pub mod grf;
pub mod numfmt;
pub mod operator;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
