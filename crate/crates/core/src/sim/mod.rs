//! Deterministic simulation of a measurement campaign: houses, meters,
//! boilers, device clocks and batteries, driven against the service API.

pub mod buffer;
pub mod bus;
pub mod clock;
pub mod engine;
pub mod house;
pub mod meter;
pub mod occupancy;
pub mod power;
pub mod qr;
pub mod report;
pub mod scenario;

pub use buffer::MeasurementBuffer;
pub use clock::DeviceClock;
pub use engine::{run_campaign, run_in_process, InProcessRun, SimError, SimOutcome, SimTarget, PROVISION_LEAD_S};
pub use house::{House, HouseParams};
pub use meter::{render_telegram, DsmrVersion, MeterIdentity, RegisterSnapshot};
pub use occupancy::{occupancy_scan, OccupancyRegistry, PhoneId};
pub use power::{choose_power_strategy, EnergyMeter, PowerMode, PowerProfile};
pub use qr::{make_qr_payload, QrPayload};
pub use report::{CampaignReport, HouseholdReport, SourceReport, Totals};
pub use scenario::{
    derive_seed, ClockSpec, DeviceSpec, GeneratedHouseholds, HouseholdSpec, Outage, RandomOutages, Scenario,
    ScenarioError,
};
