mod conic;
pub mod cli;
pub mod config;
pub mod datamat;
pub mod error;
pub mod evalrep;
pub mod exo;
pub mod fourier;
pub mod imodel;
pub mod io;
pub mod linalg;
pub mod matser;
pub mod plant;
pub mod synth;

pub use error::{Error, Result};
