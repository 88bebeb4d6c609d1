//! Finite element and barycentric box discretizations of fractional elliptic
//! problems `L^β u = f` with `L = −div(A∇) + κ²`.

pub mod assembly;
pub mod config;
pub mod dual;
pub mod error;
pub mod fracop;
pub mod harness;
pub mod linsolve;
pub mod mesh;
pub mod projection;
pub mod quadrature;
pub mod reference;
pub mod sparse;

pub use error::{Error, Result};
