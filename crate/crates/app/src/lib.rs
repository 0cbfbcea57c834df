//! Command-line interface and HTTP inference service for the plant leaf
//! disease classifier.

pub mod cli;
pub mod service;
