pub mod adam;
pub mod candidates;
pub mod data;
pub mod error;
mod fastmath;
pub mod hmc;
pub mod io;
pub mod library;
pub mod net;
pub mod pde;
pub mod pipeline;
pub mod regression;

pub use error::{Error, Result};
