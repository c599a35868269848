//! Capacity of faster-than-Nyquist signaling over MIMO channels.

extern crate blas_src;
extern crate openblas_src;

pub mod capacity_freq;
pub mod capacity_time;
pub mod channel;
pub mod error;
pub mod gram;
pub mod grid;
pub mod harness;
pub mod linalg;
pub mod oracle;
pub mod pulse;
pub mod waterfill;

pub use channel::{FlatChannel, FsChannel};
pub use error::{FtnError, Result};
pub use gram::{GramMatrix, GramSpectrum, ShiftedGram};
pub use grid::FrequencyGrid;
pub use pulse::PulseConfig;
