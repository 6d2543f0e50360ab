//! Drifting device clocks, kept honest by periodic time syncs.

use rand::Rng;

/// Simulation instants are microseconds since the Unix epoch.
pub type Micros = i64;

pub const MICROS: i64 = 1_000_000;

#[derive(Debug, Clone, PartialEq)]
pub struct DeviceClock {
    /// Offset from true time at the last sync, in µs.
    pub offset_at_sync: i64,
    /// Rate error in parts per million; positive runs fast.
    pub drift_ppm: f64,
    /// True time of the last sync.
    pub last_sync: Micros,
    /// Largest offset magnitude a sync may leave behind, in µs.
    pub tolerance: i64,
}

impl DeviceClock {
    pub fn new(drift_ppm: f64, tolerance: i64, now: Micros) -> Self {
        Self {
            offset_at_sync: 0,
            drift_ppm,
            last_sync: now,
            tolerance,
        }
    }

    pub fn offset(&self, now: Micros) -> i64 {
        let elapsed = (now - self.last_sync) as f64;
        self.offset_at_sync + (self.drift_ppm * elapsed / 1e6).round() as i64
    }

    pub fn device_micros(&self, now: Micros) -> Micros {
        now + self.offset(now)
    }

    /// Device time in whole Unix seconds.
    pub fn device_time(&self, now: Micros) -> i64 {
        self.device_micros(now).div_euclid(MICROS)
    }

    /// Reset the offset to a residual drawn from `rng` within the tolerance.
    pub fn sync<R: Rng + ?Sized>(&mut self, now: Micros, rng: &mut R) {
        self.offset_at_sync = if self.tolerance > 0 {
            rng.random_range(-self.tolerance..=self.tolerance)
        } else {
            0
        };
        self.last_sync = now;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn drift_accumulates_and_resets() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut c = DeviceClock::new(20.0, MICROS, 0);
        c.sync(0, &mut rng);
        let start = c.offset(0);
        assert!(start.abs() <= MICROS);
        let day = 86_400 * MICROS;
        let grown = c.offset(day) - start;
        assert_eq!(grown, 1_728_000);
        c.sync(day, &mut rng);
        assert!(c.offset(day).abs() <= MICROS);
    }

    #[test]
    fn ideal_clock_stays_put() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut c = DeviceClock::new(0.0, 0, 0);
        c.sync(5, &mut rng);
        assert_eq!(c.offset(1_000 * 86_400 * MICROS), 0);
        assert_eq!(c.device_time(1_700_000_000 * MICROS + 999_999), 1_700_000_000);
    }

    #[test]
    fn negative_offsets_floor() {
        let c = DeviceClock {
            offset_at_sync: -1,
            drift_ppm: 0.0,
            last_sync: 0,
            tolerance: 0,
        };
        assert_eq!(c.device_time(10 * MICROS), 9);
    }
}
