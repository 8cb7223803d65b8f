//! Wave scattering by one-dimensional arrays of high-contrast resonators
//! whose bulk modulus is modulated periodically in time.

pub mod energy;
pub mod error;
pub mod interior;
pub mod linalg;
pub mod model;
pub mod modulation;
pub mod quasifreq;
pub mod scattering;

pub use energy::{energy_sweep, mode_table, ModeScatteringTable, Regime, SweepAxis};
pub use error::{ConfigError, Error, NumericalError, Result};
pub use model::{uniform_array, IncidentSpec, PhysicalParams, ResonatorArray, SimulationConfig, Truncation};
pub use modulation::{ModulationEntry, ModulationProfile};
pub use quasifreq::{fold, Method, QuasifrequencySet};
pub use scattering::{solve, ScatteringSolution};
