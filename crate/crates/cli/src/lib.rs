//! Command line and HTTP front end for `cluster-notify`.

pub mod commands;
pub mod service;
