//! Library side of the `herd` binary, exposed for integration tests.

pub mod bridge;
pub mod commands;
pub mod config;
pub mod protocol;
pub mod render;
pub mod teleop;
