//! Time-harmonic Maxwell finite elements for surface plasmon-polaritons on a
//! conducting sheet.
//!
//! The sheet `y = 0` carries a surface conductivity that enters the weak form
//! as an interface integral; a vertical dipole above the sheet excites the
//! plasmon. The crate contains the full pipeline (mesh, order-2 edge
//! elements, PML, assembly, direct solver, goal-oriented adaptivity) and an
//! analytic oracle for the tangential field on the sheet.
//!
//! All quantities are dimensionless: lengths are measured in units of the
//! inverse free-space wave number, so `k0 = 1` everywhere below [`units`].

pub mod assembly;
pub mod dwr;
pub mod error;
pub mod fespace;
pub mod harness;
pub mod mesh;
pub mod oracle;
pub mod pml;
pub mod solver;
pub mod units;

pub use error::{Error, Result};
pub use num_complex::Complex64;

/// Imaginary unit.
pub const I: Complex64 = Complex64 { re: 0.0, im: 1.0 };
