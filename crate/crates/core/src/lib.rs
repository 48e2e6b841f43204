//! Identity-free expression recognition with a conditional GAN.
//!
//! A U-Net generator re-renders the expression of an input face onto a
//! synthetic "average" identity, a patch discriminator judges realism of
//! `(neutral average, input, candidate)` tuples, and a residual classifier
//! recognizes the expression from the `(input, average-identity)` pair. All
//! three are trained jointly on a small reverse-mode autodiff engine
//! ([`tensor`]) with Adam ([`nn`]).

pub mod checkpoint;
pub mod data;
pub mod error;
pub mod losses;
pub mod models;
pub mod nn;
pub mod tensor;
pub mod training;
pub mod verify;

pub use error::{Error, Result};
