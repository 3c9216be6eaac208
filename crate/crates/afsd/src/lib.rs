pub mod annotation;
pub mod config;
pub mod error;
pub mod eval;
pub mod interval;
pub mod losses;
pub mod model;
pub mod pipeline;
pub mod verify;

pub use annotation::Instance;
pub use config::Config;
pub use error::{AfsdError, Result};
pub use interval::tiou;
