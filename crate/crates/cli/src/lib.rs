//! Command implementations behind the `tinyaction` binary.

pub mod commands;
pub mod pipeline;
