//! Adversarial feature augmentation for unsupervised domain adaptation.

extern crate self as difa;

pub mod adapt;
pub mod analysis;
pub mod autodiff;
pub mod cli;
pub mod data;
pub mod error;
pub mod nn;

pub use error::{Error, Result};
