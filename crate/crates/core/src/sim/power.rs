//! Sleep-or-off decision between device events.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PowerProfile {
    /// Extra energy spent powering off and booting again, in joules.
    pub boot_energy_j: f64,
    /// Light-sleep draw in watts.
    pub sleep_power_w: f64,
    /// Residual draw while off (RTC only) in watts.
    pub off_power_w: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PowerMode {
    Sleep,
    Off,
}

impl PowerProfile {
    /// An M5Stack CoreInk-like board: 2.3 µA off current at 3.3 V.
    pub const CORE_INK: PowerProfile = PowerProfile {
        boot_energy_j: 0.2,
        sleep_power_w: 2.64e-3,
        off_power_w: 2.3e-6 * 3.3,
    };

    /// Gap length above which switching off is cheaper, or `None` when
    /// sleeping is never more expensive.
    pub fn threshold_s(&self) -> Option<f64> {
        let margin = self.sleep_power_w - self.off_power_w;
        (margin > 0.0).then(|| self.boot_energy_j / margin)
    }

    pub fn energy_j(&self, mode: PowerMode, gap_s: f64) -> f64 {
        match mode {
            PowerMode::Sleep => gap_s * self.sleep_power_w,
            PowerMode::Off => self.boot_energy_j + gap_s * self.off_power_w,
        }
    }

    pub fn is_valid(&self) -> bool {
        [self.boot_energy_j, self.sleep_power_w, self.off_power_w]
            .iter()
            .all(|v| v.is_finite() && *v >= 0.0)
    }
}

impl Default for PowerProfile {
    fn default() -> Self {
        Self::CORE_INK
    }
}

/// Off iff `gap_s` exceeds the threshold; a tie sleeps.
pub fn choose_power_strategy(gap_s: f64, profile: &PowerProfile) -> PowerMode {
    let margin = profile.sleep_power_w - profile.off_power_w;
    if margin > 0.0 && gap_s * margin > profile.boot_energy_j {
        PowerMode::Off
    } else {
        PowerMode::Sleep
    }
}

/// Running energy total for one device.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EnergyMeter {
    pub energy_j: f64,
    pub sleep_gaps: u64,
    pub off_gaps: u64,
}

impl EnergyMeter {
    pub fn idle(&mut self, gap_s: f64, profile: &PowerProfile) -> PowerMode {
        let mode = choose_power_strategy(gap_s, profile);
        self.energy_j += profile.energy_j(mode, gap_s);
        match mode {
            PowerMode::Sleep => self.sleep_gaps += 1,
            PowerMode::Off => self.off_gaps += 1,
        }
        mode
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn core_ink_threshold() {
        let t = PowerProfile::CORE_INK.threshold_s().unwrap();
        assert!((75.0..77.0).contains(&t), "{t}");
        assert_eq!(choose_power_strategy(30.0, &PowerProfile::CORE_INK), PowerMode::Sleep);
        assert_eq!(choose_power_strategy(600.0, &PowerProfile::CORE_INK), PowerMode::Off);
    }

    #[test]
    fn smaller_boot_cost() {
        let p = PowerProfile {
            boot_energy_j: 0.15,
            sleep_power_w: 2.0e-3,
            off_power_w: 7.6e-6,
        };
        let t = p.threshold_s().unwrap();
        assert!((t - 75.3).abs() < 0.05, "{t}");
    }

    #[test]
    fn no_saving_means_sleep() {
        let p = PowerProfile {
            boot_energy_j: 0.0,
            sleep_power_w: 1e-3,
            off_power_w: 1e-3,
        };
        assert_eq!(p.threshold_s(), None);
        assert_eq!(choose_power_strategy(1e9, &p), PowerMode::Sleep);
    }

    #[test]
    fn tie_sleeps() {
        let p = PowerProfile {
            boot_energy_j: 1.0,
            sleep_power_w: 0.5,
            off_power_w: 0.0,
        };
        assert_eq!(choose_power_strategy(2.0, &p), PowerMode::Sleep);
        assert_eq!(choose_power_strategy(2.0 + 1e-9, &p), PowerMode::Off);
    }
}
