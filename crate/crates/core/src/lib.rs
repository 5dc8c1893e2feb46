//! Cluster-event exposure notification.
//!
//! Tested-positive clients report `(anonym, location-time)` pairs for their
//! critical period through a batching mix. A cluster engine publishes the
//! location-times where enough distinct reporters were copresent, and every
//! client, reporting or not, matches the public bulletin against its own
//! location history locally.

pub mod adversary;
pub mod authority;
pub mod bulletin;
pub mod client;
pub mod cluster;
pub mod error;
pub mod exec;
pub mod geometry;
pub mod mix;
pub mod model;
pub mod pipeline;
pub mod scenario;
pub mod union_find;
pub mod wire;

pub use error::{Error, Result};
pub use exec::Exec;
