pub mod commands;
pub mod config;
pub mod harness;
pub mod output;
pub mod svg;
