//! File formats, dataset tooling, training and evaluation drivers, and the
//! `asabeam` command-line front end built on [`asabeam_core`].

pub mod cli;
pub mod config;
pub mod dataset;
pub mod error;
pub mod evaluate;
pub mod gradsuite;
pub mod train_loop;
pub mod wav;
pub mod weights_file;

pub use asabeam_core as core;
pub use error::{AppError, Result};
