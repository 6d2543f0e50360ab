//! Declarative simulation scenarios.

use std::collections::BTreeSet;
use std::path::Path;

use chrono::DateTime;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::house::STEP_S;
use super::meter::DsmrVersion;
use super::power::PowerProfile;
use crate::domain::catalog::{
    Catalog, BOILER_MONITOR_SATELLITE, LIVING_ROOM_MODULE, OPENTHERM_MONITOR,
    ROOM_MONITOR_SATELLITE, SMART_METER_MODULE, WEATHER_ZONE_QUERY,
};
use crate::domain::{DataSourceVariant, UnixTime};

#[derive(Debug, thiserror::Error)]
pub enum ScenarioError {
    #[error("reading scenario: {0}")]
    Io(#[from] std::io::Error),
    #[error("scenario syntax: {0}")]
    Syntax(#[from] toml::de::Error),
    #[error("invalid scenario: {0}")]
    Invalid(String),
}

fn invalid(msg: impl Into<String>) -> ScenarioError {
    ScenarioError::Invalid(msg.into())
}

/// A device model installed in every household.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeviceSpec {
    /// Catalog device type name.
    #[serde(rename = "type")]
    pub type_name: String,
    /// Name used in reports; defaults to the type name.
    #[serde(default)]
    pub label: Option<String>,
    /// Label of the device that forwards this satellite's data.
    #[serde(default)]
    pub relay: Option<String>,
}

impl DeviceSpec {
    pub fn new(type_name: &str) -> Self {
        Self {
            type_name: type_name.to_string(),
            label: None,
            relay: None,
        }
    }

    pub fn relayed_by(type_name: &str, relay: &str) -> Self {
        Self {
            relay: Some(relay.to_string()),
            ..Self::new(type_name)
        }
    }

    pub fn label(&self) -> &str {
        self.label.as_deref().unwrap_or(&self.type_name)
    }

    pub fn is_satellite(&self) -> bool {
        matches!(self.type_name.as_str(), BOILER_MONITOR_SATELLITE | ROOM_MONITOR_SATELLITE)
    }
}

/// Internet outage, relative to the simulation start.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Outage {
    pub start_s: i64,
    pub duration_s: i64,
}

impl Outage {
    pub fn hours(start_h: i64, duration_h: i64) -> Self {
        Self {
            start_s: start_h * 3600,
            duration_s: duration_h * 3600,
        }
    }

    pub fn end_s(&self) -> i64 {
        self.start_s + self.duration_s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HouseholdSpec {
    pub label: String,
    #[serde(default = "default_dsmr")]
    pub dsmr_version: DsmrVersion,
    /// Residents whose phones are onboarded; at most the resident count.
    #[serde(default)]
    pub registered_phones: Option<u8>,
    /// Home location; generated when absent. Used only on the resident side.
    #[serde(default)]
    pub location: Option<(f64, f64)>,
    #[serde(default)]
    pub outages: Vec<Outage>,
    /// Device labels that never manage to upload.
    #[serde(default)]
    pub silenced: BTreeSet<String>,
}

fn default_dsmr() -> DsmrVersion {
    DsmrVersion::V50
}

impl HouseholdSpec {
    pub fn new(label: &str) -> Self {
        Self {
            label: label.to_string(),
            dsmr_version: default_dsmr(),
            registered_phones: None,
            location: None,
            outages: Vec::new(),
            silenced: BTreeSet::new(),
        }
    }
}

/// Random outages added to every generated household.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RandomOutages {
    pub per_household: u32,
    pub min_hours: f64,
    pub max_hours: f64,
}

/// Households produced from the seed instead of listed one by one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratedHouseholds {
    pub count: u32,
    #[serde(default = "all_versions")]
    pub dsmr_versions: Vec<DsmrVersion>,
    #[serde(default)]
    pub random_outages: Option<RandomOutages>,
}

fn all_versions() -> Vec<DsmrVersion> {
    DsmrVersion::ALL.to_vec()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClockSpec {
    /// Crystal drift bound; each device draws its drift uniformly within it.
    pub max_drift_ppm: f64,
    pub sync_tolerance_s: f64,
    pub sync_interval_s: i64,
}

impl Default for ClockSpec {
    fn default() -> Self {
        Self {
            max_drift_ppm: 20.0,
            sync_tolerance_s: 1.0,
            sync_interval_s: 86_400,
        }
    }
}

impl ClockSpec {
    pub fn ideal() -> Self {
        Self {
            max_drift_ppm: 0.0,
            sync_tolerance_s: 0.0,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    #[serde(default = "default_app")]
    pub app_name: String,
    pub seed: u64,
    /// RFC 3339 start instant on a full hour.
    pub start: String,
    pub days: u32,
    #[serde(default = "default_tz")]
    pub timezone: String,
    #[serde(default = "default_upload")]
    pub upload_interval_s: i64,
    #[serde(default = "default_heartbeat")]
    pub heartbeat_interval_s: i64,
    /// How often the fleet status is polled for overdue episodes.
    #[serde(default = "default_monitor")]
    pub monitor_interval_s: i64,
    #[serde(default)]
    pub clock: ClockSpec,
    #[serde(default)]
    pub power: PowerProfile,
    /// Measurements per upload request.
    #[serde(default = "default_chunk")]
    pub max_upload_batch: usize,
    /// Buffer capacity in hours of measurements at each device's cadence.
    #[serde(default = "default_buffer_hours")]
    pub buffer_hours: f64,
    /// Standard deviation of the weather-zone displacement, metres.
    #[serde(default = "default_sigma")]
    pub weather_zone_sigma_m: f64,
    pub devices: Vec<DeviceSpec>,
    #[serde(default = "default_queries")]
    pub queries: Vec<String>,
    #[serde(default)]
    pub households: Vec<HouseholdSpec>,
    #[serde(default)]
    pub generate: Option<GeneratedHouseholds>,
}

fn default_app() -> String {
    "NeedForHeat GearUp".into()
}
fn default_tz() -> String {
    "Europe/Amsterdam".into()
}
fn default_upload() -> i64 {
    6 * 3600
}
fn default_heartbeat() -> i64 {
    600
}
fn default_monitor() -> i64 {
    3600
}
fn default_chunk() -> usize {
    5000
}
fn default_buffer_hours() -> f64 {
    48.0
}
fn default_sigma() -> f64 {
    crate::geo::DEFAULT_SIGMA_M
}
fn default_queries() -> Vec<String> {
    vec![WEATHER_ZONE_QUERY.to_string()]
}

/// Stable 64-bit seed for a named sub-stream.
pub fn derive_seed(seed: u64, parts: &[&str]) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_be_bytes());
    for p in parts {
        h.update((p.len() as u64).to_be_bytes());
        h.update(p.as_bytes());
    }
    let d = h.finalize();
    u64::from_be_bytes(d[..8].try_into().expect("8 bytes"))
}

impl Scenario {
    /// Smart meter, living room module, OpenTherm monitor and weather zone.
    pub fn household_basics(name: &str, seed: u64, days: u32) -> Self {
        Self {
            name: name.to_string(),
            app_name: default_app(),
            seed,
            start: "2024-10-21T00:00:00Z".into(),
            days,
            timezone: default_tz(),
            upload_interval_s: default_upload(),
            heartbeat_interval_s: default_heartbeat(),
            monitor_interval_s: default_monitor(),
            clock: ClockSpec::default(),
            power: PowerProfile::default(),
            max_upload_batch: default_chunk(),
            buffer_hours: default_buffer_hours(),
            weather_zone_sigma_m: default_sigma(),
            devices: vec![
                DeviceSpec::new(SMART_METER_MODULE),
                DeviceSpec::new(LIVING_ROOM_MODULE),
                DeviceSpec::new(OPENTHERM_MONITOR),
            ],
            queries: default_queries(),
            households: Vec::new(),
            generate: None,
        }
    }

    /// The fleet used by `gearctl simulate` when no file is given: five
    /// households with a boiler satellite relayed by the smart meter.
    pub fn standard_fleet(seed: u64) -> Self {
        let mut s = Self::household_basics("simulated-fleet", seed, 7);
        s.devices
            .push(DeviceSpec::relayed_by(BOILER_MONITOR_SATELLITE, SMART_METER_MODULE));
        s.generate = Some(GeneratedHouseholds {
            count: 5,
            dsmr_versions: all_versions(),
            random_outages: Some(RandomOutages {
                per_household: 2,
                min_hours: 1.0,
                max_hours: 6.0,
            }),
        });
        s
    }

    pub fn from_toml(text: &str) -> Result<Self, ScenarioError> {
        let s: Scenario = toml::from_str(text)?;
        s.validate()?;
        Ok(s)
    }

    pub fn load(path: &Path) -> Result<Self, ScenarioError> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn start_unix(&self) -> Result<UnixTime, ScenarioError> {
        DateTime::parse_from_rfc3339(&self.start)
            .map(|d| d.timestamp())
            .map_err(|e| invalid(format!("start {:?}: {e}", self.start)))
    }

    pub fn horizon_s(&self) -> i64 {
        self.days as i64 * 86_400
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        let start = self.start_unix()?;
        if start.rem_euclid(3600) != 0 || start.rem_euclid(STEP_S) != 0 {
            return Err(invalid("start must be on a full hour"));
        }
        if self.days == 0 {
            return Err(invalid("days must be positive"));
        }
        crate::protocols::dsmr_time::parse_tz(&self.timezone).map_err(|e| invalid(e.to_string()))?;
        for (what, v) in [
            ("upload_interval_s", self.upload_interval_s),
            ("heartbeat_interval_s", self.heartbeat_interval_s),
            ("monitor_interval_s", self.monitor_interval_s),
            ("clock.sync_interval_s", self.clock.sync_interval_s),
        ] {
            if v <= 0 {
                return Err(invalid(format!("{what} must be positive")));
            }
        }
        if self.max_upload_batch == 0 || self.buffer_hours.is_nan() || self.buffer_hours <= 0.0 {
            return Err(invalid("upload batch and buffer size must be positive"));
        }
        if !self.power.is_valid() {
            return Err(invalid("power profile values must be finite and non-negative"));
        }
        if !(self.clock.max_drift_ppm >= 0.0 && self.clock.sync_tolerance_s >= 0.0) {
            return Err(invalid("clock drift and tolerance must be non-negative"));
        }
        let catalog = Catalog::shipped();
        let mut labels = BTreeSet::new();
        for d in &self.devices {
            let ty = catalog
                .get(&d.type_name)
                .ok_or_else(|| invalid(format!("unknown device type {:?}", d.type_name)))?;
            if ty.variant != DataSourceVariant::DeviceType {
                return Err(invalid(format!("{} is not a device type", d.type_name)));
            }
            if !labels.insert(d.label()) {
                return Err(invalid(format!("duplicate device label {:?}", d.label())));
            }
            let fastest = ty.fastest_interval_s().unwrap_or(1);
            if self.upload_interval_s % fastest != 0 {
                return Err(invalid(format!(
                    "upload interval must be a multiple of {}s for {}",
                    fastest, d.type_name
                )));
            }
        }
        for d in &self.devices {
            match (&d.relay, d.is_satellite()) {
                (Some(r), true) => {
                    let relay = self
                        .devices
                        .iter()
                        .find(|x| x.label() == r)
                        .ok_or_else(|| invalid(format!("relay {r:?} of {} is not installed", d.label())))?;
                    if relay.is_satellite() {
                        return Err(invalid(format!("relay {r:?} is itself a satellite")));
                    }
                }
                (Some(_), false) => return Err(invalid(format!("{} is not a satellite", d.label()))),
                (None, _) => {}
            }
        }
        for q in &self.queries {
            let ok = catalog.get(q).is_some_and(|t| t.variant == DataSourceVariant::EnergyQuery);
            if !ok {
                return Err(invalid(format!("unknown energy query {q:?}")));
            }
        }
        let households = self.expand_households();
        if households.is_empty() {
            return Err(invalid("scenario has no households"));
        }
        let mut seen = BTreeSet::new();
        for h in &households {
            if !seen.insert(&h.label) {
                return Err(invalid(format!("duplicate household {:?}", h.label)));
            }
            for o in &h.outages {
                if o.duration_s <= 0 || o.start_s < 0 {
                    return Err(invalid(format!("{}: outage must start at or after 0 and last", h.label)));
                }
            }
            if let Some(bad) = h.silenced.iter().find(|s| !labels.contains(s.as_str())) {
                return Err(invalid(format!("{}: silenced device {bad:?} is not installed", h.label)));
            }
        }
        if self.generate.as_ref().is_some_and(|g| g.dsmr_versions.is_empty()) {
            return Err(invalid("generate.dsmr_versions is empty"));
        }
        if let Some(r) = self.generate.as_ref().and_then(|g| g.random_outages) {
            if !(r.min_hours > 0.0 && r.max_hours >= r.min_hours) {
                return Err(invalid("random outage hours must satisfy 0 < min <= max"));
            }
        }
        Ok(())
    }

    /// Listed households followed by generated ones.
    pub fn expand_households(&self) -> Vec<HouseholdSpec> {
        let mut out = self.households.clone();
        let Some(g) = &self.generate else {
            return out;
        };
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(self.seed, &["households"]));
        let horizon = self.horizon_s();
        for i in 0..g.count {
            let mut h = HouseholdSpec::new(&format!("hh{:02}", out.len() + 1));
            h.dsmr_version = g.dsmr_versions[i as usize % g.dsmr_versions.len().max(1)];
            if let Some(r) = g.random_outages {
                for _ in 0..r.per_household {
                    let hours = rng.random_range(r.min_hours..=r.max_hours);
                    let duration_s = (hours * 3600.0).round() as i64;
                    let latest = (horizon - duration_s).max(1);
                    h.outages.push(Outage {
                        start_s: rng.random_range(0..latest),
                        duration_s,
                    });
                }
                h.outages.sort_by_key(|o| o.start_s);
            }
            out.push(h);
        }
        out
    }

    /// Device types and queries every account's campaign lists.
    pub fn data_source_list(&self) -> Vec<String> {
        let mut list: Vec<String> = self.devices.iter().map(|d| d.type_name.clone()).collect();
        list.extend(self.queries.iter().cloned());
        list
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn standard_fleet_is_valid_and_stable() {
        let s = Scenario::standard_fleet(7);
        s.validate().unwrap();
        let a = s.expand_households();
        assert_eq!(a.len(), 5);
        assert_eq!(a, s.expand_households());
        for h in &a {
            for o in &h.outages {
                assert!((3600..=6 * 3600).contains(&o.duration_s));
                assert!(o.end_s() <= s.horizon_s());
            }
        }
    }

    #[test]
    fn toml_round_trip() {
        let s = Scenario::standard_fleet(7);
        let text = toml::to_string(&s).unwrap();
        assert_eq!(Scenario::from_toml(&text).unwrap(), s);
    }

    #[test]
    fn rejects_bad_relay_and_unknown_types() {
        let mut s = Scenario::household_basics("x", 1, 1);
        s.households.push(HouseholdSpec::new("a"));
        s.devices.push(DeviceSpec::relayed_by(BOILER_MONITOR_SATELLITE, "nope"));
        assert!(s.validate().is_err());
        s.devices.pop();
        s.devices.push(DeviceSpec::new("toaster"));
        assert!(s.validate().is_err());
        s.devices.pop();
        s.devices.push(DeviceSpec::new(crate::domain::catalog::INTEGRATED_BOILER_MONITOR));
        s.validate().unwrap();
        s.start = "2024-10-21T00:30:00Z".into();
        assert!(s.validate().is_err());
    }

    #[test]
    fn derived_seeds_differ() {
        assert_ne!(derive_seed(1, &["a", "b"]), derive_seed(1, &["ab"]));
        assert_eq!(derive_seed(1, &["a"]), derive_seed(1, &["a"]));
    }
}
