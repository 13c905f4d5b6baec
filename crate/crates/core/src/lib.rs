//! Edge detection for piecewise-smooth 2D data through higher-order
//! topological sensitivities.
//!
//! Data `f` is smoothed by solving `u + α(-1)^m (∇·)^m (v ∇^m u) = f` with
//! clamped boundary conditions. Thin stripes, segments thickened to width
//! `ε²`, are then inserted one at a time where the topological gradient
//! predicts the largest decrease of the regularized energy. The sensitivity
//! of a stripe with direction `τ` is governed by the polarization tensor
//! `M(τ, κ)`, whose spectral decomposition lives in [`symtensor`].
//!
//! Modules:
//! - [`symtensor`]: symmetric tensors over R², the polarization tensor, and
//!   direction rules.
//! - [`grid`]: pixel grids, fields, and the discrete `∇^m` with its adjoint.
//! - [`stripes`]: stripe geometry, rasterization, dilation, segment I/O.
//! - [`solver`]: conjugate-gradient solvers and energy functionals.
//! - [`detect`]: the greedy detection algorithms.
//! - [`qpat`]: synthetic quantitative photoacoustic data.
//! - [`oracle`]: brute-force validation of the asymptotics and the solvers.
//! - [`io`]: CSV field matrices, image row order, normalization and
//!   resampling.

pub mod detect;
pub mod error;
pub mod grid;
pub mod io;
pub mod oracle;
pub mod qpat;
pub mod solver;
pub mod stripes;
pub mod symtensor;

pub use error::{Error, Result};
pub use grid::{Closure, DerivOp, Grid, Mask, ScalarField, TensorField};
pub use stripes::{Stripe, StripeSet};
pub use symtensor::{Polarization, SymTensor, TensorBasis};
