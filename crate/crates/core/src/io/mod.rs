//! Shared data model and the on-disk formats.

pub mod config;
pub mod pgm;
pub mod stack;
pub mod table;
