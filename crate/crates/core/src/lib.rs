//! Workbench for natural left invertible operators on sequence spaces.
//!
//! The crate provides exact symbolic descriptions of banded operators
//! (shifts, Toeplitz operators, block compositions), certified rectangular
//! truncations, Moore-Penrose inverses and the left-inverse family, Wold-type
//! subspace analysis, Schauder basis / dual basis machinery, the associated
//! Cowen-Douglas sections and reproducing kernels, and a confluent rewriter
//! for the algebra generated by an operator and its Moore-Penrose inverse.

pub mod basis;
pub mod cdmodel;
pub mod cli;
pub mod error;
pub mod numerics;
pub mod opmodel;
pub mod pseudoinv;
pub mod symalg;
pub mod wold;

pub use error::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;
