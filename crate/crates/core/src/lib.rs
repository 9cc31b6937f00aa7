//! Band degeneracies, local charges and sliced Chern numbers for smooth
//! families of Hermitian matrices over tori.

pub mod analysis;
pub mod degeneracy;
pub mod error;
pub mod linalg;
pub mod localmodel;
pub mod models;
pub mod optimize;
pub mod report;
pub mod topology;

pub use error::{Error, ErrorKind, Result};
