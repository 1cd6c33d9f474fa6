//! Run configuration, artifact files and stage orchestration for the `evcs`
//! command-line tool. The algorithms live in `evcs-core`.

pub mod artifacts;
pub mod config;
pub mod error;
pub mod pipeline;

pub use config::{load_config, parse_config, RunConfig};
pub use error::Error;
pub use pipeline::{run, RunOptions, Stage, Summary};
