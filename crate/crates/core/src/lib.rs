//! Evaluation toolkit for stimulus-reconstruction auditory attention decoding.
//!
//! The crate covers the whole evaluation loop for such decoders:
//!
//! * [`balance`]: how evenly each audio stimulus is used as attended versus
//!   competing speech, summarized as a balance index in `[0, 1]`;
//! * [`partition`]: cross-validation splits keyed by trial (LOTO), by the
//!   unordered attended/unattended stimulus pair (LOPEO) or by the attended
//!   stimulus (LOEO), plus an auditor that reports leaks in any split;
//! * [`metrics`] and [`stats`]: correlation, windowed decoding accuracy,
//!   correlation losses with analytic gradients, and paired Wilcoxon tests;
//! * [`decoder`]: linear backward models (ridge and first-order training) and
//!   a memorizing decoder that exhibits stimulus-identity leakage;
//! * [`synth`]: synthetic envelopes and EEG for balanced and unbalanced designs;
//! * [`experiment`]: the end-to-end runner and results tables.

pub mod balance;
pub mod dataset;
pub mod decoder;
pub mod error;
pub mod experiment;
pub mod metrics;
pub mod partition;
pub mod signal;
pub mod signal_io;
pub mod stats;
pub mod synth;

pub use error::{Error, MetadataIssue, Result};
