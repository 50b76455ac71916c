//! Stability analysis and gain synthesis for discrete-time switched linear
//! systems whose Markov mode is only observed at renewal instants.
//!
//! Modes are 0-indexed throughout the library; file formats, the CLI and the
//! Python bindings present them 1-indexed.

pub mod builtin;
pub mod cli;
pub mod config;
pub mod error;
pub mod lmi;
pub mod markov;
pub mod modeseq;
pub mod renewal;
pub mod reproduce;
pub mod rng;
pub mod simulate;
pub mod stability;
pub mod synthesis;

pub use error::{Error, Result};
pub use markov::{ModeChain, ModePath};
pub use modeseq::{ModeSequence, TruncatedSequenceSpace};
pub use renewal::{DistributionKind, IntervalDistribution, ObservationTimes};
pub use stability::{SwitchedSystem, ZetaCertificate};
pub use synthesis::{GainSet, SearchMode, SynthesisConfig};
