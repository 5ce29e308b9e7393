//! Sample paths and ensemble statistics for coupled classical-quantum systems.
//!
//! The quantum part of each classical sector evolves under a non-unitary
//! flow; the classical part jumps at random times with state-dependent rates.
//! [`engine`] generates individual histories of this piecewise deterministic
//! process, [`ensemble`] integrates the corresponding master equation and
//! compares it with trajectory averages, and [`applications`] packages the
//! two-sector telegraph and resonance-fluorescence examples.

pub mod applications;
pub mod engine;
pub mod ensemble;
pub mod io;
pub mod linalg;
pub mod model;
pub mod quad;

pub use linalg::{ComplexMatrix, ComplexVector};
pub use model::{build_chain, build_model, BlockMatrix, HybridModel, PureHybridState, SectorIndex};
