//! Low-resolution multi-label action recognition on a synthetic,
//! long-tailed, dual-resolution video benchmark.
//!
//! The pipeline: [`synthdata`] generates and balances the data, [`net`] is a
//! residual MLP classifier with hand-written backward pass, [`losses`] holds
//! BCE, the distillation objective and the asymmetric loss, [`optim`] has
//! AdamW and the warmup + cosine warm-restart schedule, [`distill`] trains
//! teachers, baselines and distilled students, and [`fusion`] ensembles
//! scores, calibrates per-class thresholds, applies group exclusivity and
//! computes multi-label F1.

pub mod checkpoint;
pub mod distill;
pub mod error;
pub mod fsutil;
pub mod fusion;
pub mod kvfile;
pub mod losses;
pub mod net;
pub mod optim;
pub mod seed;
pub mod synthdata;

pub use error::{Error, Result};
