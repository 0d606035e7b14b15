//! Luminosity-corrected pupillometry.
//!
//! The toolkit predicts the light-driven part of pupil size from what is on
//! screen, subtracts it from the measured pupil trace and relates the
//! remaining, arousal-driven residual to self-reported emotional arousal.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod luminance;
pub mod plr;
pub mod preprocess;
pub mod metrics;
pub mod decouple;
pub mod scaling;
pub mod adm;
pub mod gbt;
pub mod io;
pub mod synth;
pub mod config;
pub mod pipeline;

pub use error::{Error, Result};
