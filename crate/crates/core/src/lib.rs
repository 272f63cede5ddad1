//! Desk-scale speech recognition with two modeling levels: an encoder trained
//! with syllable-level CTC and a decoder that converts syllable sequences to
//! character sequences, trained with label-smoothed cross entropy plus
//! intermediate-layer auxiliary losses. Inference runs CTC prefix beam search
//! over syllables followed by attention rescoring.
//!
//! Everything is built on the small reverse-mode autodiff engine in
//! [`tensor`]; the stack is generic over `f32`/`f64` so numeric oracle tests
//! can run at 64-bit precision while training defaults to 32-bit.

pub mod decode;
pub mod error;
pub mod frontend;
pub mod lexicon;
pub mod losses;
pub mod model;
pub mod parallel;
pub mod rng;
pub mod selfcheck;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
