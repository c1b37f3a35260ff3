pub mod bnb;
pub mod dist;
pub mod error;
pub mod ingest;
pub mod lp;
pub mod maximize;
pub mod minimize;
pub mod pipeline;
pub mod pwl;
pub mod stats;

pub use error::{Error, Result};
