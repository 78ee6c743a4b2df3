//! Experiment driver: configuration, runners and output writers behind the
//! `shearmix` binary.

pub mod app;
pub mod certify;
pub mod config;
pub mod dissipation;
pub mod mixing;
pub mod output;
