//! Quasi-reversible queueing systems and balanced admission control.

pub mod balance;
pub mod config;
pub mod control;
pub mod error;
pub mod oiqueue;
pub mod qrcore;
pub mod rl;
pub mod simenv;
pub mod verify;
pub mod whittle;

pub use error::{QrError, Result};
