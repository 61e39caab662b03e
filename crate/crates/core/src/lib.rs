//! Free-form video inpainting toolkit: a 3-D gated-convolution generator, a
//! temporal patch discriminator, the training loss suite, procedural free-form
//! mask generation, and bit-exact frame/checkpoint IO.

#![allow(clippy::needless_range_loop)]

pub mod config;
pub mod demo;
pub mod error;
pub mod gradcheck;
pub mod io;
pub mod loss;
pub mod mask;
pub mod model;
pub mod nn;
pub mod rng;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
