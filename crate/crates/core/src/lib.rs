//! Numerical toolkit for the conformal geometry of spacelike hypersurfaces
//! in the three Lorentzian space forms: curvature data, Möbius and conformal
//! invariants, the light-cone model with its O(n+3,2) action, a catalog of
//! closed-form surfaces, and residual-based verification of the structure
//! identities.

pub mod catalog;
pub mod conformal;
pub mod error;
pub mod hypersurface;
pub mod jet;
pub mod linalg;
pub mod moebius;
pub mod report;

pub use error::{Error, Result};
