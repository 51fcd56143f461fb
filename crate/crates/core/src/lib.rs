//! Discontinuous Galerkin S_N transport with second moment method (SMM)
//! acceleration.
//!
//! The high-order problem is a linear DG discretization of steady,
//! mono-energetic transport on structured quadrilateral meshes, solved by
//! upwind sweeps. Each outer iteration computes angular moments and
//! half-range closures of the sweep result, solves a low-order diffusion
//! system (P1, LDG or interior penalty) with correction sources, and feeds
//! its scalar flux back as the scattering source.

// Index loops mirror the element/face formulas; `!(x > 0.0)` also rejects NaN.
#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord, clippy::too_many_arguments)]

pub mod angular_quad;
pub mod closures;
pub mod dg_space;
pub mod driver;
pub mod error;
pub mod harness;
pub mod linalg;
pub mod lo_diffusion;
pub mod mesh;
pub mod problem;
pub mod transport;

pub use error::{Error, Result};
