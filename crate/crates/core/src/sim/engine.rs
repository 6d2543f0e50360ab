//! Discrete-event campaign runner: provisions households through the API,
//! then drives every device on one virtual clock.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap};
use std::sync::Arc;

use chrono_tz::Tz;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::bus::{exchange, POLL_CYCLE};
use super::buffer::MeasurementBuffer;
use super::clock::{DeviceClock, Micros, MICROS};
use super::house::{House, HouseParams};
use super::meter::{render_telegram, MeterIdentity, RegisterSnapshot};
use super::occupancy::{occupancy_scan, OccupancyRegistry, PhoneId};
use super::power::EnergyMeter;
use super::qr::{make_qr_payload, QrPayload};
use super::report::{CampaignReport, HouseholdReport, SourceReport};
use super::scenario::{derive_seed, DeviceSpec, HouseholdSpec, Scenario, ScenarioError};
use crate::domain::catalog::{
    Catalog, BOILER_MONITOR_SATELLITE, INTEGRATED_BOILER_MONITOR, LIVING_ROOM_MODULE, OPENTHERM_MONITOR,
    ROOM_MONITOR_SATELLITE, SMART_METER_MODULE, WEATHER_ZONE_QUERY,
};
use crate::domain::{render_value, Measurement, PropertyDescriptor, RawValue, UnixTime, ValueFormat};
use crate::geo::assign_weather_zone;
use crate::protocols::{
    parse_p1_bytes, telegram_to_reading_with, verify_telegram_crc, CrcVerdict, FrameSampler, ObisMap,
    ReadingContext,
};
use crate::server::{
    ensure_app, ApiError, CreateCampaign, DeviceRegistration, EnergyQueryRequest, GearApi, ManualClock,
    ServerConfig, Service, StatusQuery, UploadBody,
};

const HEARTBEAT: &str = "heartbeat__0";

/// Devices are booted and provisioned this long before measuring starts.
pub const PROVISION_LEAD_S: i64 = 3600;

#[derive(Debug, thiserror::Error)]
pub enum SimError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error("campaign setup failed: {0}")]
    Setup(ApiError),
}

/// Where the simulated fleet sends its traffic.
pub struct SimTarget<'a> {
    pub api: &'a dyn GearApi,
    pub admin_token: &'a str,
    /// Moves the server clock, when the server runs on virtual time.
    pub set_time: Option<&'a dyn Fn(UnixTime)>,
}

#[derive(Debug, Clone)]
pub struct SimOutcome {
    pub report: CampaignReport,
    /// One line per upload, sync, skip and status change.
    pub log: Vec<String>,
    /// Household label to account id.
    pub accounts: BTreeMap<String, String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Action {
    Sync,
    Bus,
    Heartbeat,
    Sample,
    Clamp,
    Upload,
    Monitor,
}

type Event = Reverse<(Micros, Action, u64, usize, usize)>;

#[derive(Debug)]
enum Behavior {
    LivingRoom { registry: OccupancyRegistry },
    SmartMeter { meter: MeterIdentity, prev_time: Option<UnixTime> },
    OpenTherm { sampler: FrameSampler, thermostat_bias: f64 },
    BoilerClamps,
    RoomSensors,
}

struct Device {
    label: String,
    type_name: String,
    properties: BTreeMap<String, PropertyDescriptor>,
    qr: QrPayload,
    session: Option<String>,
    source_id: Option<i64>,
    clock: DeviceClock,
    clock_rng: ChaCha8Rng,
    noise_rng: ChaCha8Rng,
    buffer: MeasurementBuffer,
    relay: Option<usize>,
    heartbeat: u64,
    energy: EnergyMeter,
    last_event: Option<Micros>,
    behavior: Behavior,
    /// Extra sampling timer for the integrated monitor's pipe clamps.
    clamps: bool,
    silenced: bool,
    report: SourceReport,
    overdue: bool,
}

impl Device {
    /// Satellites have no network of their own.
    fn is_uploader(&self) -> bool {
        self.relay.is_none() && !matches!(self.behavior, Behavior::BoilerClamps | Behavior::RoomSensors)
    }
}

struct Household {
    spec: HouseholdSpec,
    house: House,
    devices: Vec<Device>,
    outages: Vec<(Micros, Micros)>,
    report: HouseholdReport,
    account_id: Option<String>,
}

impl Household {
    fn offline(&self, t: Micros) -> bool {
        self.outages.iter().any(|&(a, b)| a <= t && t < b)
    }
}

fn noise(rng: &mut ChaCha8Rng, sd: f64) -> f64 {
    Normal::new(0.0, sd).expect("valid sd").sample(rng)
}

/// Render a sensor reading under the property's format.
fn render(format: ValueFormat, x: f64) -> String {
    let raw = match format {
        ValueFormat::Unsigned => RawValue::Int(x.round().max(0.0) as i64),
        ValueFormat::Signed => RawValue::Int(x.round() as i64),
        _ => RawValue::Float(x),
    };
    render_value(format, &raw).expect("sensor values render")
}

/// Buffer capacity covering `hours` of a type's full output.
fn capacity_for(properties: &[PropertyDescriptor], hours: f64) -> usize {
    let per_hour: f64 = properties.iter().map(|p| 3600.0 / p.default_interval_s as f64).sum();
    ((per_hour * hours).ceil() as usize).max(1)
}

struct Engine<'a> {
    scenario: &'a Scenario,
    target: &'a SimTarget<'a>,
    tz: Tz,
    start: UnixTime,
    end: Micros,
    campaign_id: i64,
    households: Vec<Household>,
    source_index: BTreeMap<i64, (usize, usize)>,
    heap: BinaryHeap<Event>,
    seq: u64,
    log: Vec<String>,
}

pub fn run_campaign(scenario: &Scenario, target: &SimTarget) -> Result<SimOutcome, SimError> {
    scenario.validate()?;
    let start = scenario.start_unix()?;
    let tz: Tz = scenario.timezone.parse().map_err(|_| ScenarioError::Invalid("timezone".into()))?;
    let mut engine = Engine {
        scenario,
        target,
        tz,
        start,
        end: (start + scenario.horizon_s()) * MICROS,
        campaign_id: 0,
        households: Vec::new(),
        source_index: BTreeMap::new(),
        heap: BinaryHeap::new(),
        seq: 0,
        log: Vec::new(),
    };
    engine.set_time(start - PROVISION_LEAD_S);
    engine.campaign_id = engine.setup_campaign().map_err(SimError::Setup)?;
    for spec in scenario.expand_households() {
        engine.add_household(spec);
    }
    engine.schedule_all();
    engine.run();
    Ok(engine.finish())
}

/// Result of [`run_in_process`]. The service holds the stored data.
pub struct InProcessRun {
    pub outcome: SimOutcome,
    pub service: Arc<Service>,
    pub clock: ManualClock,
    pub admin_token: String,
}

/// Run against a fresh in-process server on virtual time. Without an admin
/// token in `config` one is derived from the seed.
pub fn run_in_process(scenario: &Scenario, mut config: ServerConfig) -> Result<InProcessRun, SimError> {
    let admin = config
        .admin_token
        .get_or_insert_with(|| format!("sim-{:016x}", derive_seed(scenario.seed, &["admin"])))
        .clone();
    let clock = ManualClock::new(scenario.start_unix()? - PROVISION_LEAD_S);
    let service = Service::deterministic(&config, Arc::new(clock.clone()), derive_seed(scenario.seed, &["server"]))
        .map_err(SimError::Setup)?;
    let service = Arc::new(service);
    let set = |t: UnixTime| clock.set(t);
    let target = SimTarget {
        api: &*service,
        admin_token: &admin,
        set_time: Some(&set),
    };
    let outcome = run_campaign(scenario, &target)?;
    service.flush().map_err(SimError::Setup)?;
    Ok(InProcessRun {
        outcome,
        service,
        clock,
        admin_token: admin,
    })
}

impl Engine<'_> {
    fn set_time(&self, t: UnixTime) {
        if let Some(f) = self.target.set_time {
            f(t);
        }
    }

    fn setup_campaign(&self) -> Result<i64, ApiError> {
        let api = self.target.api;
        let admin = self.target.admin_token;
        let app_id = ensure_app(api, admin, &self.scenario.app_name)?;
        let campaign = api.create_campaign(
            admin,
            &CreateCampaign {
                app_id,
                name: self.scenario.name.clone(),
                data_source_list: self.scenario.data_source_list(),
                overdue_multiplier: None,
                upload_interval_s: Some(self.scenario.upload_interval_s),
            },
        )?;
        Ok(campaign.campaign_id)
    }

    fn build_device(&self, spec: &DeviceSpec, hh: &HouseholdSpec, house: &House, rng: &mut ChaCha8Rng) -> Device {
        let s = self.scenario;
        let ty = Catalog::shipped().get(&spec.type_name).expect("validated type");
        let label = spec.label().to_string();
        let seed = |what: &str| derive_seed(s.seed, &[&hh.label, &label, what]);
        let mut clock_rng = ChaCha8Rng::seed_from_u64(seed("clock"));
        let mut noise_rng = ChaCha8Rng::seed_from_u64(seed("noise"));
        let drift = if s.clock.max_drift_ppm > 0.0 {
            clock_rng.random_range(-s.clock.max_drift_ppm..=s.clock.max_drift_ppm)
        } else {
            0.0
        };
        let tolerance = (s.clock.sync_tolerance_s * MICROS as f64).round() as i64;
        let boot = (self.start - PROVISION_LEAD_S) * MICROS;
        let mut clock = DeviceClock::new(drift, tolerance, boot);
        clock.sync(boot, &mut clock_rng);
        let mac: u64 = rng.random::<u64>() & 0xFFFF_FFFF_FFFF;
        let qr = make_qr_payload(&spec.type_name, mac, rng);
        let behavior = match spec.type_name.as_str() {
            LIVING_ROOM_MODULE => {
                let residents = house.params.residents;
                let n = hh.registered_phones.unwrap_or(residents).min(residents);
                Behavior::LivingRoom {
                    registry: OccupancyRegistry::new((1..=n as PhoneId).collect::<Vec<_>>()),
                }
            }
            SMART_METER_MODULE => Behavior::SmartMeter {
                meter: MeterIdentity::new(hh.dsmr_version, rng.random()),
                prev_time: None,
            },
            OPENTHERM_MONITOR | INTEGRATED_BOILER_MONITOR => Behavior::OpenTherm {
                sampler: FrameSampler::new(
                    ty.properties
                        .iter()
                        .filter(|p| !p.name.starts_with("boilerTemp"))
                        .map(|p| (p.name.clone(), p.default_interval_s, p.value_format)),
                ),
                thermostat_bias: noise(&mut noise_rng, 0.2),
            },
            BOILER_MONITOR_SATELLITE => Behavior::BoilerClamps,
            ROOM_MONITOR_SATELLITE => Behavior::RoomSensors,
            other => unreachable!("validated device type {other}"),
        };
        Device {
            label: label.clone(),
            type_name: spec.type_name.clone(),
            properties: ty.properties.iter().map(|p| (p.name.clone(), p.clone())).collect(),
            session: None,
            source_id: None,
            clock,
            clock_rng,
            noise_rng,
            buffer: MeasurementBuffer::new(capacity_for(&ty.properties, s.buffer_hours)),
            relay: None,
            heartbeat: 0,
            energy: EnergyMeter::default(),
            last_event: None,
            behavior,
            clamps: spec.type_name == INTEGRATED_BOILER_MONITOR,
            silenced: hh.silenced.contains(&label),
            report: SourceReport {
                type_name: spec.type_name.clone(),
                device_name: qr.name.clone(),
                syncs: 1,
                ..SourceReport::default()
            },
            qr,
            overdue: false,
        }
    }

    fn add_household(&mut self, spec: HouseholdSpec) {
        let s = self.scenario;
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(s.seed, &[&spec.label, "provision"]));
        let mut params_rng = ChaCha8Rng::seed_from_u64(derive_seed(s.seed, &[&spec.label, "params"]));
        let params = HouseParams::random(&mut params_rng);
        let house_seed = derive_seed(s.seed, &[&spec.label, "house"]);
        let house = House::new(params, self.tz, house_seed, self.start - PROVISION_LEAD_S);
        let mut devices: Vec<Device> = s
            .devices
            .iter()
            .map(|d| self.build_device(d, &spec, &house, &mut rng))
            .collect();
        for (i, d) in s.devices.iter().enumerate() {
            if let Some(r) = &d.relay {
                devices[i].relay = s.devices.iter().position(|x| x.label() == r);
            }
        }
        let outages = spec
            .outages
            .iter()
            .map(|o| ((self.start + o.start_s) * MICROS, (self.start + o.end_s()) * MICROS))
            .collect::<Vec<_>>();
        let mut hh = Household {
            report: HouseholdReport {
                dsmr_version: spec.dsmr_version.to_string(),
                outages: outages.iter().map(|&(a, b)| (a / MICROS, b / MICROS)).collect(),
                ..HouseholdReport::default()
            },
            spec,
            house,
            devices,
            outages,
            account_id: None,
        };
        let idx = self.households.len();
        if let Err(e) = self.provision(idx, &mut hh, &mut rng) {
            self.log.push(format!("{} {} provisioning failed: {e}", self.start - PROVISION_LEAD_S, hh.spec.label));
            hh.report.aborted = Some(format!("provisioning: {e}"));
        }
        self.households.push(hh);
    }

    fn provision(&mut self, idx: usize, hh: &mut Household, rng: &mut ChaCha8Rng) -> Result<(), ApiError> {
        let api = self.target.api;
        let admin = self.target.admin_token;
        let account = api.create_account(admin, self.campaign_id)?;
        let activation = api.activate_account(&account.activation_token)?;
        hh.account_id = Some(account.account_id.to_string());
        for q in &self.scenario.queries {
            if q == WEATHER_ZONE_QUERY {
                let (lat, lon) = hh
                    .spec
                    .location
                    .unwrap_or_else(|| (rng.random_range(51.4..53.2), rng.random_range(4.2..6.9)));
                let zone = assign_weather_zone(lat, lon, self.scenario.weather_zone_sigma_m, &self.scenario.timezone, rng)
                    .map_err(|e| ApiError::invalid(e.to_string()))?;
                let payload = serde_json::to_value(&zone).expect("zone serializes");
                let req = EnergyQueryRequest {
                    query_kind: q.clone(),
                    payload,
                };
                api.energy_query(&activation.session_token, &req)?;
                hh.report.weather_zone = Some(zone.cell_id);
            }
        }
        for (di, d) in hh.devices.iter_mut().enumerate() {
            api.register_device(
                admin,
                &DeviceRegistration {
                    device_type: d.type_name.clone(),
                    device_name: d.qr.name.clone(),
                    proof_of_possession: d.qr.pop.clone(),
                },
            )?;
            let act = api.activate_device(&activation.session_token, &d.qr.name, &d.qr.pop)?;
            d.session = Some(act.session_token);
            d.source_id = Some(act.source_id);
            self.source_index.insert(act.source_id, (idx, di));
        }
        Ok(())
    }

    fn push(&mut self, at: Micros, action: Action, h: usize, d: usize) {
        self.seq += 1;
        self.heap.push(Reverse((at, action, self.seq, h, d)));
    }

    fn schedule_all(&mut self) {
        let s = self.scenario;
        let t0 = self.start * MICROS;
        for h in 0..self.households.len() {
            if self.households[h].report.aborted.is_some() {
                continue;
            }
            for d in 0..self.households[h].devices.len() {
                let dev = &self.households[h].devices[d];
                let mut first = Vec::new();
                if dev.properties.contains_key(HEARTBEAT) {
                    first.push((t0, Action::Heartbeat));
                }
                match dev.behavior {
                    Behavior::OpenTherm { .. } => first.push((t0, Action::Bus)),
                    _ => first.push((t0, Action::Sample)),
                }
                if dev.clamps {
                    first.push((t0, Action::Clamp));
                }
                if dev.is_uploader() {
                    first.push((t0 + s.upload_interval_s * MICROS, Action::Upload));
                }
                let boot = (self.start - PROVISION_LEAD_S) * MICROS;
                first.push((boot + s.clock.sync_interval_s * MICROS, Action::Sync));
                for (at, action) in first {
                    self.push(at, action, h, d);
                }
            }
        }
        self.push(t0 + s.monitor_interval_s * MICROS, Action::Monitor, 0, 0);
    }

    fn period(&self, h: usize, d: usize, action: Action) -> Micros {
        let s = self.scenario;
        let dev = &self.households[h].devices[d];
        let seconds = match action {
            Action::Sync => s.clock.sync_interval_s,
            Action::Bus => 1,
            Action::Heartbeat => s.heartbeat_interval_s,
            Action::Upload => s.upload_interval_s,
            Action::Monitor => s.monitor_interval_s,
            Action::Clamp => dev.properties.get("boilerTemp1").map_or(10, |p| p.default_interval_s),
            Action::Sample => dev
                .properties
                .values()
                .filter(|p| p.name != HEARTBEAT)
                .map(|p| p.default_interval_s)
                .min()
                .unwrap_or(600),
        };
        seconds * MICROS
    }

    fn run(&mut self) {
        while let Some(Reverse((at, action, _, h, d))) = self.heap.pop() {
            if action == Action::Monitor {
                self.monitor(at);
            } else {
                if self.households[h].report.aborted.is_some() {
                    continue;
                }
                self.account_energy(h, d, at);
                match action {
                    Action::Sync => self.sync(h, d, at),
                    Action::Bus => self.bus(h, d, at),
                    Action::Heartbeat => self.heartbeat(h, d, at),
                    Action::Sample => self.sample(h, d, at),
                    Action::Clamp => self.clamp(h, d, at),
                    Action::Upload => self.upload(h, d, at),
                    Action::Monitor => unreachable!(),
                }
            }
            let next = at + if action == Action::Monitor { self.period(0, 0, action) } else { self.period(h, d, action) };
            if next < self.end {
                self.push(next, action, h, d);
            }
        }
    }

    fn account_energy(&mut self, h: usize, d: usize, at: Micros) {
        let profile = self.scenario.power;
        let dev = &mut self.households[h].devices[d];
        if let Some(last) = dev.last_event {
            if at > last {
                dev.energy.idle((at - last) as f64 / MICROS as f64, &profile);
            }
        }
        dev.last_event = Some(at);
    }

    /// Stamp and buffer `values` taken at true time `at`.
    fn record(&mut self, h: usize, d: usize, at: Micros, values: Vec<(&str, f64)>) {
        let dev = &mut self.households[h].devices[d];
        let stamp = dev.clock.device_time(at);
        let err = (dev.clock.device_micros(at) - at).abs() as f64 / MICROS as f64;
        dev.report.max_clock_error_s = dev.report.max_clock_error_s.max(err);
        for (name, x) in values {
            let format = dev.properties[name].value_format;
            let m = Measurement::new(name, stamp, render(format, x));
            Self::buffer(dev, m);
        }
    }

    fn buffer(dev: &mut Device, m: Measurement) {
        dev.report.generated += 1;
        *dev.report.generated_per_property.entry(m.property.clone()).or_default() += 1;
        dev.buffer.push(m);
    }

    fn sync(&mut self, h: usize, d: usize, at: Micros) {
        let offline = self.households[h].offline(at);
        let label = self.households[h].spec.label.clone();
        let dev = &mut self.households[h].devices[d];
        if offline {
            dev.report.skipped_syncs += 1;
            self.log.push(format!("{} {label} {} sync skipped: offline", at / MICROS, dev.label));
        } else {
            dev.clock.sync(at, &mut dev.clock_rng);
            dev.report.syncs += 1;
        }
    }

    fn heartbeat(&mut self, h: usize, d: usize, at: Micros) {
        let dev = &mut self.households[h].devices[d];
        dev.heartbeat += 1;
        let n = dev.heartbeat as f64;
        self.record(h, d, at, vec![(HEARTBEAT, n)]);
    }

    fn bus(&mut self, h: usize, d: usize, at: Micros) {
        let t = at / MICROS;
        let pos = (t - self.start).rem_euclid(POLL_CYCLE.len() as i64) as usize;
        let hh = &mut self.households[h];
        hh.house.advance_to(t);
        let dev = &mut hh.devices[d];
        let stamp = dev.clock.device_time(at);
        let err = (dev.clock.device_micros(at) - at).abs() as f64 / MICROS as f64;
        dev.report.max_clock_error_s = dev.report.max_clock_error_s.max(err);
        let Behavior::OpenTherm { sampler, thermostat_bias } = &mut dev.behavior else {
            return;
        };
        let room = hh.house.room_c + *thermostat_bias;
        let mut out = Vec::new();
        for f in exchange(&hh.house, pos, room) {
            out.extend(sampler.push(stamp, &f));
        }
        for m in out {
            Self::buffer(dev, m);
        }
    }

    fn clamp(&mut self, h: usize, d: usize, at: Micros) {
        let hh = &mut self.households[h];
        hh.house.advance_to(at / MICROS);
        let rng = &mut hh.devices[d].noise_rng;
        let v = vec![
            ("boilerTemp1", hh.house.supply_c - 0.4 + noise(rng, 0.1)),
            ("boilerTemp2", hh.house.return_c - 0.3 + noise(rng, 0.1)),
        ];
        self.record(h, d, at, v);
    }

    fn sample(&mut self, h: usize, d: usize, at: Micros) {
        let t = at / MICROS;
        let tz = self.tz;
        let hh = &mut self.households[h];
        hh.house.advance_to(t);
        let house = &hh.house;
        let dev = &mut hh.devices[d];
        let rng = &mut dev.noise_rng;
        let values: Vec<(&str, f64)> = match &mut dev.behavior {
            Behavior::LivingRoom { registry } => {
                let (onboarded, seen) = occupancy_scan(registry, &house.present_phones);
                vec![
                    ("co2__ppm", (house.co2_ppm + noise(rng, 8.0)).max(400.0)),
                    ("temp_indoor__degC", house.room_c + 0.3 + noise(rng, 0.05)),
                    ("rel_humidity__0", (house.humidity_pct + noise(rng, 0.5)).clamp(0.0, 100.0)),
                    ("onboarded__p", onboarded as f64),
                    ("occupancy__p", seen as f64),
                ]
            }
            Behavior::BoilerClamps => vec![
                ("boilerTemp1", house.supply_c - 0.4 + noise(rng, 0.1)),
                ("boilerTemp2", house.return_c - 0.3 + noise(rng, 0.1)),
            ],
            Behavior::RoomSensors => vec![
                ("CO2concentration", (house.co2_ppm + noise(rng, 8.0)).max(400.0)),
                ("roomTempCO2", house.room_c + 0.5 + noise(rng, 0.1)),
                ("humidity", (house.humidity_pct + noise(rng, 0.5)).clamp(0.0, 100.0)),
                ("roomTemp", house.room_c + noise(rng, 0.05)),
            ],
            Behavior::SmartMeter { meter, prev_time } => {
                let interval = meter.version.telegram_interval_s();
                let telegram_time = t - t.rem_euclid(interval);
                let snap = RegisterSnapshot::of(house, meter.version, telegram_time);
                let text = render_telegram(meter, &snap, tz);
                let capture = dev.clock.device_time(at);
                let err = (dev.clock.device_micros(at) - at).abs() as f64 / MICROS as f64;
                dev.report.max_clock_error_s = dev.report.max_clock_error_s.max(err);
                let crc = verify_telegram_crc(text.as_bytes());
                let parsed = match crc {
                    CrcVerdict::Ok | CrcVerdict::Absent => parse_p1_bytes(text.as_bytes()).ok(),
                    _ => None,
                };
                let ctx = ReadingContext {
                    prev_time: *prev_time,
                    capture_time: Some(capture),
                };
                let reading = parsed.and_then(|p| telegram_to_reading_with(&p, tz, ObisMap::builtin(), ctx).ok());
                let Some(reading) = reading else {
                    self.log.push(format!("{t} {} {} unreadable telegram", hh.spec.label, dev.label));
                    return;
                };
                *prev_time = Some(reading.telegram_time);
                for m in reading.measurements {
                    if dev.properties.contains_key(&m.property) {
                        Self::buffer(dev, m);
                    }
                }
                return;
            }
            Behavior::OpenTherm { .. } => return,
        };
        self.record(h, d, at, values);
    }

    /// Send a buffer's content with `session`. Returns false on an API error.
    fn deliver(&mut self, h: usize, origin: usize, upload_time: UnixTime) -> Result<(), ApiError> {
        let batch_size = self.scenario.max_upload_batch;
        loop {
            let dev = &mut self.households[h].devices[origin];
            let batch = dev.buffer.take(batch_size);
            if batch.is_empty() {
                return Ok(());
            }
            let Some(session) = dev.session.clone() else {
                dev.buffer.restore(batch);
                return Ok(());
            };
            let latest = batch.iter().map(|m| m.time).max().unwrap_or(upload_time);
            let body = UploadBody::from_measurements(upload_time.max(latest), &batch);
            match self.target.api.upload(&session, &body) {
                Ok(receipt) => {
                    let dev = &mut self.households[h].devices[origin];
                    dev.report.stored += receipt.stored;
                    dev.report.duplicates += receipt.duplicates;
                    dev.report.uploads += 1;
                }
                Err(e) => {
                    self.households[h].devices[origin].buffer.restore(batch);
                    return Err(e);
                }
            }
        }
    }

    fn flush_sampler(dev: &mut Device, device_now: UnixTime) {
        if let Behavior::OpenTherm { sampler, .. } = &mut dev.behavior {
            let out = sampler.flush_until(device_now);
            for m in out {
                Self::buffer(dev, m);
            }
        }
    }

    fn upload(&mut self, h: usize, d: usize, at: Micros) {
        let t = at / MICROS;
        let offline = self.households[h].offline(at);
        let label = self.households[h].spec.label.clone();
        let dev = &mut self.households[h].devices[d];
        if dev.silenced || offline {
            dev.report.skipped_uploads += 1;
            let why = if offline { "offline" } else { "silenced" };
            self.log.push(format!("{t} {label} {} upload skipped: {why}", dev.label));
            return;
        }
        let device_now = dev.clock.device_time(at);
        Self::flush_sampler(dev, device_now);
        self.set_time(t);
        self.upload_with_satellites(h, d, device_now);
    }

    fn upload_with_satellites(&mut self, h: usize, d: usize, device_now: UnixTime) {
        let mut origins = vec![d];
        origins.extend(
            (0..self.households[h].devices.len()).filter(|&i| self.households[h].devices[i].relay == Some(d)),
        );
        for origin in origins {
            let before = self.households[h].devices[origin].report.stored;
            let dups = self.households[h].devices[origin].report.duplicates;
            let label = self.households[h].spec.label.clone();
            match self.deliver(h, origin, device_now) {
                Ok(()) => {
                    let dev = &self.households[h].devices[origin];
                    self.log.push(format!(
                        "{device_now} {label} {} upload stored={} duplicates={}",
                        dev.label,
                        dev.report.stored - before,
                        dev.report.duplicates - dups
                    ));
                }
                Err(e) => {
                    let dev = &self.households[h].devices[origin];
                    self.log.push(format!("{device_now} {label} {} upload failed: {e}", dev.label));
                    self.households[h].report.aborted = Some(format!("upload by {}: {e}", dev.label));
                    return;
                }
            }
        }
    }

    fn monitor(&mut self, at: Micros) {
        let t = at / MICROS;
        self.set_time(t);
        let q = StatusQuery {
            campaign: Some(self.campaign_id),
            at: Some(t),
        };
        let report = match self.target.api.status(self.target.admin_token, &q) {
            Ok(r) => r,
            Err(e) => {
                self.log.push(format!("{t} status unavailable: {e}"));
                return;
            }
        };
        for s in report.sources {
            let Some(&(h, d)) = self.source_index.get(&s.source_id) else {
                continue;
            };
            let label = self.households[h].spec.label.clone();
            let dev = &mut self.households[h].devices[d];
            if s.overdue && !dev.overdue {
                dev.report.overdue_episodes += 1;
                self.log.push(format!("{t} {label} {} overdue", dev.label));
            } else if !s.overdue && dev.overdue {
                self.log.push(format!("{t} {label} {} back on schedule", dev.label));
            }
            dev.overdue = s.overdue;
        }
    }

    /// Final upload once the horizon is reached and the household is online.
    fn drain(&mut self) -> UnixTime {
        let mut order = Vec::new();
        for (h, hh) in self.households.iter().enumerate() {
            let mut t = self.end;
            while let Some(&(_, b)) = hh.outages.iter().find(|&&(a, b)| a <= t && t < b) {
                t = b;
            }
            order.push((t, h));
        }
        order.sort();
        let mut completed = self.end / MICROS;
        for (at, h) in order {
            if self.households[h].report.aborted.is_some() {
                continue;
            }
            let t = at / MICROS;
            completed = completed.max(t);
            for d in 0..self.households[h].devices.len() {
                let dev = &mut self.households[h].devices[d];
                let horizon_device = dev.clock.device_time(self.end);
                Self::flush_sampler(dev, horizon_device);
            }
            self.set_time(t);
            for d in 0..self.households[h].devices.len() {
                let dev = &self.households[h].devices[d];
                if !dev.is_uploader() || dev.silenced || self.households[h].report.aborted.is_some() {
                    continue;
                }
                let device_now = dev.clock.device_time(at);
                self.upload_with_satellites(h, d, device_now);
            }
        }
        completed
    }

    fn finish(mut self) -> SimOutcome {
        let completed = self.drain();
        self.monitor(completed * MICROS);
        let mut report = CampaignReport {
            scenario: self.scenario.name.clone(),
            seed: self.scenario.seed,
            campaign_id: self.campaign_id,
            start: self.start,
            horizon_end: self.end / MICROS,
            completed_at: completed,
            ..CampaignReport::default()
        };
        let mut accounts = BTreeMap::new();
        for hh in self.households {
            let mut hr = hh.report;
            if let Some(a) = hh.account_id {
                accounts.insert(hh.spec.label.clone(), a);
            }
            for dev in hh.devices {
                let mut s = dev.report;
                s.dropped = dev.buffer.dropped();
                s.undelivered = dev.buffer.len() as u64;
                s.energy_j = (dev.energy.energy_j * 1e6).round() / 1e6;
                s.sleep_gaps = dev.energy.sleep_gaps;
                s.off_gaps = dev.energy.off_gaps;
                s.max_clock_error_s = (s.max_clock_error_s * 1e6).round() / 1e6;
                s.overdue_at_end = dev.overdue;
                if let Behavior::OpenTherm { sampler, .. } = &dev.behavior {
                    s.sampler = Some(sampler.stats().clone());
                }
                hr.sources.insert(dev.label, s);
            }
            report.households.insert(hh.spec.label, hr);
        }
        report.compute_totals();
        SimOutcome {
            report,
            log: self.log,
            accounts,
        }
    }
}
