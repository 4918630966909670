//! Explicit-state deadlock verification for IMDS models of autonomous
//! moving platforms.

pub mod cli;
pub mod deadlock;
pub mod diag;
pub mod lts;
pub mod model;
pub mod promela;
pub mod scenario;
pub mod syntax;
pub mod views;
