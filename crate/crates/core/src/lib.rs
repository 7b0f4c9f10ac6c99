pub mod cli;
pub mod diagnostics;
pub mod error;
pub mod exec;
pub mod fit;
pub mod fixtures;
pub mod io;
pub mod manifest;
pub mod optim;
pub mod spectral;
pub mod synth;
pub mod unmix;

pub use error::{Error, Result};
