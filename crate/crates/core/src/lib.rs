//! Residential heating telemetry pipeline.
//!
//! - [`domain`]: property vocabulary, value formats, measurement and campaign types.
//! - [`protocols`]: DSMR P1 telegrams and OpenTherm frames.
//! - [`server`]: the campaign and measurement service with its HTTP API.
//! - [`sim`]: deterministic discrete-event simulation of the measurement devices.
//! - [`geo`]: weather-zone assignment on the hexagonal grid.

pub mod domain;
pub mod geo;
pub mod protocols;
pub mod server;
pub mod sim;

pub use domain::{Measurement, PropertyDescriptor, UnixTime, Upload, ValueFormat};
