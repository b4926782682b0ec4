pub mod commands;
pub mod config;
pub mod data;
pub mod ply;

pub use commands::run;
