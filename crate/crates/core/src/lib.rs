//! Finite-volume simulation of metal-ion sorption by coagulating polymers.
//!
//! The state is a density `f(p, r)` of polymers with size `p` and bound-ion
//! fraction `r`, coupled to a free-ion concentration `u`.

pub mod coagulation;
pub mod config;
pub mod diagnostics;
pub mod error;
pub mod field;
pub mod mesh;
pub mod output;
pub mod rates;
pub mod simulation;
pub mod stepper;
pub mod transport;

pub use config::{parse_config, SimConfig};
pub use error::{Error, Result};
pub use field::Field;
pub use mesh::{GridSpec, TimeSpec};
pub use simulation::Simulation;
