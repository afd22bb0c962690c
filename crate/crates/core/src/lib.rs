//! Interactive task encoding, the pure part.
//!
//! Everything in this crate is `no_std` + `alloc`: the task-model IR and its
//! text format, the luminance-change segmentation chain, the instruction
//! classifier, the skill-parameter daemons and the review state machine.
//! File formats, persistence, the CLI and the HTTP service live in the `ites`
//! crate.

#![no_std]
#![forbid(unsafe_code)]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod geom;
pub mod recognition;
pub mod segmentation;
pub mod session;
pub mod skillparams;
pub mod taskmodel;
mod text;

pub use geom::{Point2, Vec3};
pub use taskmodel::{TaskLabel, TaskModel, TaskStep};
