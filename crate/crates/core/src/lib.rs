pub mod cubic;
pub mod ed;
pub mod error;
pub mod linalg;
pub mod model;
pub mod params;
pub mod sw;

pub use error::{Error, Result};
