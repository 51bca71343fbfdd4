pub mod error;
pub mod fixtures;
pub mod measure;
pub mod model;
pub mod reduction;
pub mod solvers;
pub mod diagnostics;
pub mod io;
pub mod cli;
