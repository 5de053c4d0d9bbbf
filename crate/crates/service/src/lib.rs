//! HTTP service and CLI for the empathetic response pipeline.

pub mod cli;
pub mod server;
