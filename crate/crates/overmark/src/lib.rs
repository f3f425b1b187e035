//! Full-screen overlay watermarking toolkit.
//!
//! A bit message is diffused into an irregular full-screen pattern, blended
//! over arbitrary screen content at low opacity, and recovered from distorted
//! screenshots. The model side has three trainable parts:
//!
//! - a message **diffuser** (bits → pattern) and **reverser** (pattern →
//!   bits), paired in stage 1 under image-level attacks;
//! - a fully convolutional **screen decoder** (screenshot → pattern
//!   estimate), pre-trained in stage 2 with the codec frozen, under
//!   pixel-level attacks;
//! - stage 3 fine-tunes everything jointly under composed attacks.
//!
//! The rest of the crate is the infrastructure to run that protocol: the
//! alpha compositor, the attack simulators in exact and differentiable forms,
//! metrics and robustness sweeps, a synthetic screenshot corpus generator,
//! and checkpointing.

pub mod checkpoint;
pub mod compositor;
pub mod codec;
pub mod config;
pub mod datakit;
pub mod distort;
pub mod error;
pub mod evalkit;
pub mod image;
pub mod losses;
pub mod message;
pub mod nn;
pub mod pipeline;
pub mod rng;
pub mod screen_decoder;

pub use error::{Error, Result};
