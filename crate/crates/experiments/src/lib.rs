//! Scenario files, the four canned comparisons between IP routing and
//! MPLS switching, calibration of the cost model, and report output.

pub mod calibrate;
pub mod chart;
pub mod config;
pub mod e1;
pub mod e2;
pub mod e3;
pub mod e4;
pub mod output;
pub mod result;
pub mod scenario;

pub use config::{load_scenario, parse_scenario, ConfigError, Scenario};
pub use result::{Check, ExperimentResult, Ratio};
pub use scenario::{build_network, run_scenario, ModeSelect};

/// LAN link of the latency experiments: 100 Mbit/s, 100 µs propagation,
/// no DiffServ.
pub fn lan_link() -> lspsim_core::qos::PhbConfig {
    lspsim_core::qos::PhbConfig::plain(100_000_000, 100)
}
