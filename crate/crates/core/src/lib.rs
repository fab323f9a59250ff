pub mod autodiff;
pub mod config;
pub mod datagen;
pub mod error;
pub mod eval;
pub mod linear;
pub mod losses;
pub mod pipeline;
pub mod pqmf;
pub mod signal;
pub mod stfgcrn;
pub mod tde;
pub mod train;

pub use error::{Error, Result};
