//! Campaign run summary.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::domain::UnixTime;
use crate::protocols::SamplerStats;

/// Delivery accounting for one data source (one device or satellite).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SourceReport {
    pub type_name: String,
    pub device_name: String,
    /// Measurements produced and buffered on the device.
    pub generated: u64,
    pub stored: u64,
    pub duplicates: u64,
    /// Lost to buffer overflow.
    pub dropped: u64,
    /// Still buffered when the run ended.
    pub undelivered: u64,
    pub uploads: u64,
    pub skipped_uploads: u64,
    pub syncs: u64,
    pub skipped_syncs: u64,
    pub overdue_episodes: u64,
    pub overdue_at_end: bool,
    pub energy_j: f64,
    pub sleep_gaps: u64,
    pub off_gaps: u64,
    /// Largest |device timestamp − true time| seen on a stamped measurement.
    pub max_clock_error_s: f64,
    pub generated_per_property: BTreeMap<String, u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sampler: Option<SamplerStats>,
}

impl SourceReport {
    /// generated == stored + duplicates + dropped + undelivered
    pub fn conserved(&self) -> bool {
        self.generated == self.stored + self.duplicates + self.dropped + self.undelivered
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct HouseholdReport {
    pub dsmr_version: String,
    /// Why the household stopped early, if it did.
    pub aborted: Option<String>,
    pub weather_zone: Option<String>,
    pub outages: Vec<(UnixTime, UnixTime)>,
    pub sources: BTreeMap<String, SourceReport>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Totals {
    pub generated: u64,
    pub stored: u64,
    pub duplicates: u64,
    pub dropped: u64,
    pub undelivered: u64,
    pub overdue_episodes: u64,
    pub overdue_at_end: u64,
    pub aborted_households: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CampaignReport {
    pub scenario: String,
    pub seed: u64,
    pub campaign_id: i64,
    pub start: UnixTime,
    pub horizon_end: UnixTime,
    /// When the last household finished its final upload.
    pub completed_at: UnixTime,
    pub households: BTreeMap<String, HouseholdReport>,
    pub totals: Totals,
}

impl CampaignReport {
    pub fn sources(&self) -> impl Iterator<Item = (&str, &str, &SourceReport)> {
        self.households
            .iter()
            .flat_map(|(h, r)| r.sources.iter().map(move |(d, s)| (h.as_str(), d.as_str(), s)))
    }

    pub fn compute_totals(&mut self) {
        let mut t = Totals::default();
        for (_, _, s) in self.sources() {
            t.generated += s.generated;
            t.stored += s.stored;
            t.duplicates += s.duplicates;
            t.dropped += s.dropped;
            t.undelivered += s.undelivered;
            t.overdue_episodes += s.overdue_episodes;
            t.overdue_at_end += s.overdue_at_end as u64;
        }
        t.aborted_households = self.households.values().filter(|h| h.aborted.is_some()).count() as u64;
        self.totals = t;
    }

    pub fn conserved(&self) -> bool {
        self.sources().all(|(_, _, s)| s.conserved())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub const CSV_HEADER: &'static str =
        "household,device,type,generated,stored,duplicates,dropped,undelivered,uploads,skipped_uploads,overdue_episodes,energy_j,max_clock_error_s";

    pub fn csv_rows(&self) -> Vec<String> {
        self.sources()
            .map(|(h, d, s)| {
                format!(
                    "{h},{d},{},{},{},{},{},{},{},{},{},{:.3},{:.3}",
                    s.type_name,
                    s.generated,
                    s.stored,
                    s.duplicates,
                    s.dropped,
                    s.undelivered,
                    s.uploads,
                    s.skipped_uploads,
                    s.overdue_episodes,
                    s.energy_j,
                    s.max_clock_error_s
                )
            })
            .collect()
    }
}

impl fmt::Display for CampaignReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{:<8} {:<26} {:>9} {:>9} {:>6} {:>7} {:>7} {:>7} {:>10}",
            "house", "device", "generated", "stored", "dups", "dropped", "pending", "overdue", "energy_J"
        )?;
        for (h, d, s) in self.sources() {
            writeln!(
                f,
                "{:<8} {:<26} {:>9} {:>9} {:>6} {:>7} {:>7} {:>7} {:>10.1}",
                h, d, s.generated, s.stored, s.duplicates, s.dropped, s.undelivered, s.overdue_episodes, s.energy_j
            )?;
        }
        for (h, r) in &self.households {
            if let Some(why) = &r.aborted {
                writeln!(f, "{h}: aborted: {why}")?;
            }
        }
        let t = &self.totals;
        write!(
            f,
            "total: generated {} stored {} duplicates {} dropped {} undelivered {} overdue-at-end {}",
            t.generated, t.stored, t.duplicates, t.dropped, t.undelivered, t.overdue_at_end
        )
    }
}
