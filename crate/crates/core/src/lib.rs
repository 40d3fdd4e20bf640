//! Linear-scaling density-matrix response via second-order spectral projection.

pub mod error;
pub mod harness;
pub mod io;
pub mod linalg;
pub mod mixed;
pub mod models;
pub mod oracles;
pub mod response;
pub mod scf;
pub mod sp2;
pub mod sparse;
pub mod thermal;

pub use error::{Error, Result};
pub use linalg::{Matrix, SpectralBounds, SymmetricMatrix};
pub use sp2::Sp2Trace;
