//! Monte Carlo simulator for uplink pilot-phase channel estimation in
//! cell-free massive MIMO.
//!
//! Three estimators are compared on identical channel and noise draws:
//! local LMMSE at each access point, centralized LMMSE at the CPU over all
//! antennas, and master-assisted estimation (MACE), where each user's master
//! AP fuses one scalar per pilot sample from every assisting AP.

pub mod config;
pub mod engine;
pub mod error;
pub mod estimators;
pub mod harness;
pub mod linalg;
pub mod metrics;
pub mod network;
pub mod pilot;
pub mod tracker;

pub use config::{Averaging, Fading, LosMode, SimConfig};
pub use engine::{BlockOutcome, Realization, StatsMode};
pub use error::{Result, SimError};
pub use estimators::{ChannelEstimate, FusionSet, LmmseFilter, Scheme};
pub use harness::{
    emit_csv, emit_plot_data, load_spec, run, run_detailed, simulate_realization, write_outputs, ExperimentSpec, Preset,
    ResultRow, Sweep, SweepParam,
};
pub use metrics::{fronthaul, inversion_dim, NmseAccumulator, ResourceReport};
