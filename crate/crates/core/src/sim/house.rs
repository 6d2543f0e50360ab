//! One household's physical state, stepped on a fixed grid so every device
//! that looks at it sees the same history regardless of when it looks.

use std::collections::BTreeSet;
use std::f64::consts::PI;

use chrono::{Datelike, NaiveDate, TimeZone, Timelike};
use chrono_tz::Tz;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::occupancy::PhoneId;
use crate::domain::UnixTime;

/// Physics step in seconds. Simulations start on a multiple of it.
pub const STEP_S: i64 = 10;

/// Gross calorific value of Groningen-quality gas, kWh per m3.
const GAS_KWH_PER_M3: f64 = 9.77;

/// Phone ids of visitors start here so they never collide with residents.
const VISITOR_PHONE_BASE: PhoneId = 1 << 40;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HouseParams {
    /// Heat loss coefficient, W/K.
    pub ua_w_per_k: f64,
    /// Effective heat capacity, J/K.
    pub capacity_j_per_k: f64,
    pub boiler_max_kw: u8,
    pub min_modulation: u8,
    pub max_supply_c: f64,
    pub comfort_c: f64,
    pub night_c: f64,
    pub wake_h: f64,
    pub sleep_h: f64,
    pub residents: u8,
    /// Residents away during working hours on weekdays.
    pub workers: u8,
    pub pv_peak_w: f64,
    pub base_load_w: f64,
}

impl HouseParams {
    pub fn random<R: Rng + ?Sized>(rng: &mut R) -> Self {
        let residents = rng.random_range(1..=4u8);
        Self {
            ua_w_per_k: rng.random_range(120.0..320.0),
            capacity_j_per_k: rng.random_range(1.5e7..3.0e7),
            boiler_max_kw: [24, 28, 35][rng.random_range(0..3)],
            min_modulation: rng.random_range(15..=25),
            max_supply_c: [60.0, 70.0, 80.0][rng.random_range(0..3)],
            comfort_c: [19.0, 19.5, 20.0, 20.5, 21.0][rng.random_range(0..5)],
            night_c: [15.0, 16.0, 17.0][rng.random_range(0..3)],
            wake_h: rng.random_range(6.0..8.0),
            sleep_h: rng.random_range(22.0..23.5),
            residents,
            workers: rng.random_range(0..=residents.min(2)),
            pv_peak_w: if rng.random_bool(0.4) { rng.random_range(1500.0..4000.0) } else { 0.0 },
            base_load_w: rng.random_range(100.0..250.0),
        }
    }
}

#[derive(Debug, Clone)]
struct DayPlan {
    date: NaiveDate,
    /// Per resident: local hours away, `[leave, back)`.
    away: Vec<Option<(f64, f64)>>,
    /// Per resident: shower window in local hours.
    shower: Vec<Option<(f64, f64)>>,
    visitors: Option<(f64, f64, u8)>,
    cloudiness: f64,
    outdoor_bias: f64,
}

/// Snapshot of a register value at a capture boundary.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Capture {
    pub time: UnixTime,
    pub value: f64,
}

#[derive(Debug, Clone)]
pub struct House {
    pub params: HouseParams,
    tz: Tz,
    rng: ChaCha8Rng,
    plan: Option<DayPlan>,
    /// Time of the last completed step.
    pub time: UnixTime,
    pub outdoor_c: f64,
    pub room_c: f64,
    pub setpoint_c: f64,
    pub supply_c: f64,
    pub return_c: f64,
    pub ch_on: bool,
    pub dhw_on: bool,
    pub modulation: f64,
    pub co2_ppm: f64,
    pub humidity_pct: f64,
    pub present_phones: BTreeSet<PhoneId>,
    pub residents_home: u8,
    /// Electricity registers in Wh: use low, use high, return low, return high.
    pub electricity_wh: [f64; 4],
    pub gas_m3: f64,
    /// Gas register at the last 5-minute boundary.
    pub gas_5min: Capture,
    /// Gas register at the last full hour.
    pub gas_hourly: Capture,
}

fn hour_of_day(local: &chrono::DateTime<Tz>) -> f64 {
    local.hour() as f64 + local.minute() as f64 / 60.0 + local.second() as f64 / 3600.0
}

fn within(h: f64, window: Option<(f64, f64)>) -> bool {
    window.is_some_and(|(a, b)| a <= h && h < b)
}

/// Exponential approach of `x` to `target` with time constant `tau`.
fn approach(x: f64, target: f64, dt: f64, tau: f64) -> f64 {
    target + (x - target) * (-dt / tau).exp()
}

impl House {
    pub fn new(params: HouseParams, tz: Tz, seed: u64, start: UnixTime) -> Self {
        assert_eq!(start.rem_euclid(3600), 0, "houses start on a full hour");
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let electricity_wh = [
            rng.random_range(2.0e6..9.0e6),
            rng.random_range(2.0e6..9.0e6),
            if params.pv_peak_w > 0.0 { rng.random_range(1.0e5..2.0e6) } else { 0.0 },
            if params.pv_peak_w > 0.0 { rng.random_range(1.0e5..2.0e6) } else { 0.0 },
        ];
        let gas_m3 = rng.random_range(500.0..9000.0);
        let room_c = params.comfort_c - 1.0;
        Self {
            setpoint_c: params.night_c,
            params,
            tz,
            rng,
            plan: None,
            time: start,
            outdoor_c: 10.0,
            room_c,
            supply_c: room_c + 5.0,
            return_c: room_c + 3.0,
            ch_on: false,
            dhw_on: false,
            modulation: 0.0,
            co2_ppm: 450.0,
            humidity_pct: 50.0,
            present_phones: BTreeSet::new(),
            residents_home: 0,
            electricity_wh,
            gas_m3,
            gas_5min: Capture { time: start, value: gas_m3 },
            gas_hourly: Capture { time: start, value: gas_m3 },
        }
    }

    pub fn tz(&self) -> Tz {
        self.tz
    }

    /// Bring the state up to the last grid point at or before `t`.
    pub fn advance_to(&mut self, t: UnixTime) {
        while self.time + STEP_S <= t {
            self.step();
        }
    }

    fn day_plan(&mut self, date: NaiveDate) -> DayPlan {
        let weekday = date.weekday().num_days_from_monday() < 5;
        let p = &self.params;
        let rng = &mut self.rng;
        let jitter = Normal::new(0.0, 0.5).expect("valid normal");
        let mut away = Vec::new();
        let mut shower = Vec::new();
        for r in 0..p.residents {
            let a = if r < p.workers && weekday {
                let leave: f64 = 8.0 + jitter.sample(rng) * 0.6;
                let back = 17.5 + jitter.sample(rng) * 1.2;
                Some((leave, back.max(leave + 4.0)))
            } else if rng.random_bool(0.5) {
                let leave = rng.random_range(9.5..15.0);
                Some((leave, leave + rng.random_range(0.5..3.0)))
            } else {
                None
            };
            away.push(a);
            let s = rng.random_bool(0.7).then(|| {
                let begin = p.wake_h + rng.random_range(0.0..0.75);
                (begin, begin + rng.random_range(5.0..12.0) / 60.0)
            });
            shower.push(s);
        }
        let visitors = rng
            .random_bool(0.25)
            .then(|| (rng.random_range(18.5..20.0), rng.random_range(21.0..23.0), rng.random_range(1..=3u8)));
        DayPlan {
            date,
            away,
            shower,
            visitors,
            cloudiness: rng.random_range(0.1..1.0),
            outdoor_bias: jitter.sample(rng) * 3.0,
        }
    }

    fn step(&mut self) {
        let t = self.time + STEP_S;
        let dt = STEP_S as f64;
        let local = self.tz.timestamp_opt(t, 0).single().expect("UTC maps to one local time");
        let date = local.date_naive();
        if self.plan.as_ref().is_none_or(|p| p.date != date) {
            let plan = self.day_plan(date);
            self.plan = Some(plan);
        }
        let plan = self.plan.as_ref().expect("plan set");
        let h = hour_of_day(&local);
        let weekday = date.weekday().num_days_from_monday() < 5;

        // occupants
        self.present_phones.clear();
        let mut home = 0u8;
        for (r, window) in plan.away.iter().enumerate() {
            if !within(h, *window) {
                home += 1;
                self.present_phones.insert(r as PhoneId + 1);
            }
        }
        if let Some((a, b, n)) = plan.visitors {
            if a <= h && h < b {
                for v in 0..n {
                    self.present_phones.insert(VISITOR_PHONE_BASE + v as PhoneId);
                }
            }
        }
        self.residents_home = home;
        let showering = plan.shower.iter().any(|s| within(h, *s));

        // weather
        self.outdoor_c = 9.0 + plan.outdoor_bias + 4.0 * (2.0 * PI * (h - 9.0) / 24.0).sin();
        let sun = if (7.5..17.5).contains(&h) {
            (PI * (h - 7.5) / 10.0).sin() * (1.0 - 0.8 * plan.cloudiness)
        } else {
            0.0
        };

        // thermostat and boiler
        let p = &self.params;
        self.setpoint_c = if home > 0 && p.wake_h <= h && h < p.sleep_h {
            p.comfort_c
        } else {
            p.night_c
        };
        if self.room_c < self.setpoint_c - 0.3 {
            self.ch_on = true;
        } else if self.room_c > self.setpoint_c + 0.1 {
            self.ch_on = false;
        }
        self.dhw_on = showering;
        let min_mod = p.min_modulation as f64;
        let target_mod = if self.dhw_on {
            100.0
        } else if self.ch_on {
            (min_mod + 60.0 * (self.setpoint_c - self.room_c + 0.3)).clamp(min_mod, 100.0)
        } else {
            0.0
        };
        self.modulation = if target_mod == 0.0 {
            0.0
        } else {
            approach(self.modulation.max(min_mod), target_mod, dt, 60.0)
        };
        let burner_w = self.modulation / 100.0 * p.boiler_max_kw as f64 * 1000.0;
        let ch_heat_w = if self.ch_on && !self.dhw_on { burner_w } else { 0.0 };
        let supply_target = if self.dhw_on {
            p.max_supply_c.min(65.0)
        } else if self.ch_on {
            (30.0 + 0.4 * self.modulation).min(p.max_supply_c)
        } else {
            self.room_c + 4.0
        };
        let tau = if self.flame() { 240.0 } else { 1800.0 };
        self.supply_c = approach(self.supply_c, supply_target, dt, tau);
        let spread = if self.flame() { 6.0 + 0.1 * self.modulation } else { 1.5 };
        self.return_c = approach(self.return_c, self.supply_c - spread, dt, 120.0);

        let gains_w = 100.0 * home as f64 + 1500.0 * sun;
        let loss_w = p.ua_w_per_k * (self.room_c - self.outdoor_c);
        self.room_c += dt * (ch_heat_w * 0.9 + gains_w - loss_w) / p.capacity_j_per_k;

        // air quality: 250 m3 of air, 0.5 air changes per hour
        let gen_ppm_s = 0.022 * home as f64;
        self.co2_ppm += dt * (gen_ppm_s - (self.co2_ppm - 420.0) * 0.5 / 3600.0);
        let rh_target = 45.0 + 3.0 * home as f64 + if showering { 15.0 } else { 0.0 };
        self.humidity_pct = approach(self.humidity_pct, rh_target, dt, 1800.0);

        // energy registers
        let cooking = home > 0 && (17.5..18.75).contains(&h);
        let evening = if (18.0..23.0).contains(&h) && home > 0 { 250.0 } else { 0.0 };
        let noise = self.rng.random_range(0.0..60.0);
        let load_w = p.base_load_w + evening + if cooking { 1200.0 } else { 0.0 } + noise;
        let pv_w = p.pv_peak_w * sun;
        let high_tariff = weekday && (7.0..23.0).contains(&h);
        let net_wh = (load_w - pv_w) * dt / 3600.0;
        let idx = if net_wh >= 0.0 { 0 } else { 2 } + high_tariff as usize;
        self.electricity_wh[idx] += net_wh.abs();
        self.gas_m3 += burner_w * dt / 3600.0 / 1000.0 / GAS_KWH_PER_M3;
        if cooking {
            self.gas_m3 += 0.4 * dt / 3600.0 / 3.0;
        }

        self.time = t;
        if t % 300 == 0 {
            self.gas_5min = Capture { time: t, value: self.gas_m3 };
        }
        if t % 3600 == 0 {
            self.gas_hourly = Capture { time: t, value: self.gas_m3 };
        }
    }

    pub fn flame(&self) -> bool {
        self.modulation > 0.0
    }
}
