//! File formats, pipelines, experiment grids and latency benches around
//! [`jamsense_core`].

pub mod bench;
pub mod checkpoint;
pub mod error;
pub mod fading_file;
pub mod grid;
pub mod pipeline;
pub mod runfile;
pub mod store;

pub use error::{Error, Result};
pub use jamsense_core as core;

use sha2::{Digest, Sha256};

/// Lower-case hex SHA-256 of `bytes`.
pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}
