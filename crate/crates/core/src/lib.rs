//! Simulator of a flexible-bandwidth IM/DD discrete multitone WDM link.
//!
//! The crate covers the transmit DSP ([`txdsp`]), adaptive loading
//! ([`loading`]), the linear optical channel ([`channel`]), the receiver DSP
//! ([`rxdsp`]) and an experiment harness ([`harness`]) for required-OSNR,
//! detuning and rate/reach studies, whose artifacts [`persist`] writes.

// `!(x > 0.0)` is the NaN-rejecting form used by every validator.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod channel;
pub mod dsp;
pub mod error;
pub mod frame;
pub mod harness;
pub mod loading;
pub mod persist;
pub mod qam;
pub mod rxdsp;
pub mod txdsp;
pub mod types;

pub use error::{Error, Result};
pub use frame::{frame_geometry, target_bits_per_symbol, FrameGeometry};
pub use types::{BerReport, DmtConfig, OpticalField, RealWaveform, SubcarrierPlan};
