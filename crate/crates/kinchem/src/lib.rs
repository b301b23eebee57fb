//! Command-line front end: configuration files, output formats and the
//! built-in scenarios.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod models;
pub mod output;
pub mod scenarios;
