//! Simulated LwM2M clients.
//!
//! A [`SimHandle`] runs one device: bootstrap, handshake with the
//! device-management server, register, then keep the registration alive
//! and serve reads, writes, executes and observations of the Server (1),
//! Device (3) and Temperature (3303) objects. The Security object (0) holds
//! the provisioned credentials and is never readable remotely.

pub mod control;
mod device;
mod fleet;
pub mod objects;
mod temperature;

pub use device::{
    backoff_delay, Phase, SimConfig, SimCounters, SimError, SimHandle, SimStatus, BACKOFF_INITIAL, BACKOFF_MAX,
    DEFAULT_LIFETIME_S, DEFAULT_TEMP_PERIOD,
};
pub use fleet::{
    fleet_endpoint, format_psk_line, parse_psk_file, spawn_fleet, DeviceCredentials, Fleet, FleetConfig,
    FleetError, PskFileError,
};
pub use temperature::{temperature, TemperatureModel};
