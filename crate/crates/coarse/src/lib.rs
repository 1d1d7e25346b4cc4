//! Finite, desk-scale models of coarse geometry.
//!
//! The crate implements exact checkers for the basic objects of coarse
//! geometry over finite point sets: entourage calculus, branched coarse
//! coverings with parallel transport, Rips complexes and multiscale
//! (cone / squeezing) models, dimension-at-scale certificates, controlled
//! block operators, and the transfer / trace machinery with its norm and
//! ghost estimates.
//!
//! Everything is exact set arithmetic except operator norms, which are
//! computed numerically with pinned tolerances.

pub mod covering;
pub mod dimension;
pub mod io;
pub mod multiscale;
pub mod operators;
pub mod scenario;
pub mod space;
pub mod suite;
pub mod transfer;





pub use space::{BigFamily, CoverFamily, Entourage, FiniteCoarseSpace, PointId};
