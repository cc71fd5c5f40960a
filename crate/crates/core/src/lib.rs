pub mod checkpoint;
pub mod config;
pub mod decoder;
pub mod error;
pub mod geometry;
pub mod gradsuite;
pub mod hoa;
pub mod io;
pub mod optim;
pub mod params;
pub mod render;
pub mod scene;
pub mod train;

pub use error::{Error, Result};
