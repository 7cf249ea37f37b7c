//! Library side of the `fbqs` command-line tool: command implementations and
//! the machine-readable report model. The binary in `main.rs` is a thin
//! argument-parsing layer over this.

pub mod commands;
pub mod report;
