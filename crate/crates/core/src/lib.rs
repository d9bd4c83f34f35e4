//! Numerical laboratory for sign-changing bubble towers of the critical
//! Lane-Emden equation `-div(a grad u) = a |u|^{4/(n-2)} u` on a ball with a
//! small hole.

pub mod bubbles;
pub mod energy;
pub mod error;
pub mod fd;
pub mod geom;
pub mod green;
pub mod quadrature;
pub mod reduced;
pub mod shooting;
pub mod special;

pub use error::{Error, Result};
pub use special::{dim_constants, DimConstants};
