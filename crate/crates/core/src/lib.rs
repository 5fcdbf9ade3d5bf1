//! Mean-field equations for point vortices with variable intensities.
//!
//! The crate discretizes `-Δv = λ ∫ α e^{αv} P(dα) / ∫∫ e^{αv} P(dα) dx` on
//! rectangles, the unit disk and flat tori, continues solution branches in
//! `λ`, and measures how solutions concentrate.

pub mod blowup;
pub mod error;
pub mod greens;
pub mod io;
pub mod grid;
pub mod kirchhoff;
pub mod linalg;
pub mod measure;
pub mod scenario;
pub mod solver;

pub use error::{Error, Result};
pub use grid::{Domain, Field, Grid, StencilKind};
pub use measure::{IntensityMeasure, Moments, SupportExtrema};

/// A point in the plane.
pub type Point = [f64; 2];
