//! Experiment driver for the villani toolkit: config loading, output
//! directories, plotting and one function per subcommand.

pub mod commands;
pub mod config;
pub mod error;
pub mod output;
pub mod plot;
pub mod subspace;
