//! Numerical workbench for inverse potential scattering with sources and
//! receivers on one closed surface S outside the scatterer.
//!
//! The crate simulates the near-field operator `F_S` two independent ways
//! (a direct spectral solve and the factorization
//! `F_S = (1/4π) L* (F₀ - F^out)(F_n - F^out)^{-1}(F₀ - F_n) L`), synthesizes
//! physically emittable source densities reproducing `F_S φ`, and recovers the
//! interior Dirichlet-to-Neumann map and a parametric radial potential from
//! `F_S` alone.

pub mod dtn;
pub mod emission;
pub mod error;
pub mod forward;
pub mod inversion;
pub mod layer;
pub mod linalg;
pub mod scene;
pub mod specfun;
pub mod sphere;

pub use error::{NearFieldError, Result};
pub use num_complex::Complex64;
