//! Barotropic quasi-geostrophic dynamics with a free-surface boundary closure.

pub mod cli;
pub mod diagnostics;
pub mod elliptic;
pub mod error;
pub mod flowmap;
pub mod geometry;
pub mod io;
pub mod kernels;
mod linalg;
pub mod scheme;

pub use error::{Error, Result};
