//! Front end for the pipeline: batch runs, replay, plots and an HTTP
//! session service.

pub mod commands;
pub mod config;
pub mod plot;
pub mod server;
pub mod terminal;
