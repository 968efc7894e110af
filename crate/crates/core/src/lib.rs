//! Discrete-event simulator of the LTE-V2X Mode-4 sidelink: semi-persistent
//! scheduling over an abstracted PHY, with CBR-driven transmit power control
//! for periodic safety messages and full-power event messages.

pub mod channel;
pub mod cli;
pub mod config;
pub mod congestion;
pub mod engine;
pub mod error;
pub mod grid;
pub mod mac_sps;
pub mod metrics;
pub mod rng;
pub mod scenario;

pub use config::RunConfig;
pub use engine::{run, sweep, SweepAxis, Transmission};
pub use error::{Error, Result};
pub use metrics::MetricsStore;
