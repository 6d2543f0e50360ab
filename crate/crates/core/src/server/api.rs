//! Request and response bodies shared by the service, the HTTP layer and
//! the client, plus the [`GearApi`] trait both backends implement.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::error::{ApiResult, ErrorKind};
use crate::domain::{validate_property_name, AccountId, DataSourceVariant, Measurement, NameVerdict, UnixTime};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AppRecord {
    pub app_id: i64,
    pub name: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignRecord {
    pub campaign_id: i64,
    pub app_id: i64,
    pub name: String,
    pub data_source_list: Vec<String>,
    /// False for a campaign with an empty data-source list.
    pub activatable: bool,
    pub overdue_multiplier: f64,
    /// Device upload cadence for this campaign, overriding the type default.
    pub upload_interval_s: Option<i64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NewAccount {
    pub account_id: AccountId,
    /// Shown once; only its hash is kept.
    pub activation_token: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AccountSummary {
    pub account_id: AccountId,
    pub campaign_id: i64,
    pub activated_at: Option<UnixTime>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DataSourceRef {
    pub source_id: i64,
    pub type_name: String,
    pub variant: DataSourceVariant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccountActivation {
    pub session_token: String,
    pub account_id: AccountId,
    pub campaign: CampaignRecord,
    /// Data sources the app must activate, in campaign order.
    pub data_sources: Vec<DataSourceRef>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeviceRegistration {
    pub device_type: String,
    pub device_name: String,
    pub proof_of_possession: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeviceRecordView {
    pub device_id: i64,
    pub device_name: String,
    pub device_type: String,
    pub activated_at: Option<UnixTime>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeviceActivation {
    pub session_token: String,
    pub device_id: i64,
    pub source_id: i64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimedValue {
    pub time: UnixTime,
    pub value: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PropertyMeasurements {
    pub property_name: String,
    pub measurements: Vec<TimedValue>,
}

/// Upload body: measurements grouped per property.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UploadBody {
    pub upload_time: UnixTime,
    pub property_measurements: Vec<PropertyMeasurements>,
}

impl UploadBody {
    pub fn from_measurements(upload_time: UnixTime, measurements: &[Measurement]) -> Self {
        let mut grouped: BTreeMap<&str, Vec<TimedValue>> = BTreeMap::new();
        for m in measurements {
            grouped.entry(&m.property).or_default().push(TimedValue {
                time: m.time,
                value: m.value.clone(),
            });
        }
        Self {
            upload_time,
            property_measurements: grouped
                .into_iter()
                .map(|(p, measurements)| PropertyMeasurements {
                    property_name: p.to_string(),
                    measurements,
                })
                .collect(),
        }
    }

    pub fn measurements(&self) -> Vec<Measurement> {
        self.property_measurements
            .iter()
            .flat_map(|pm| {
                pm.measurements
                    .iter()
                    .map(|tv| Measurement::new(&pm.property_name, tv.time, tv.value.clone()))
            })
            .collect()
    }

    pub fn size(&self) -> usize {
        self.property_measurements.iter().map(|p| p.measurements.len()).sum()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestReceipt {
    pub stored: u64,
    pub duplicates: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnergyQueryRequest {
    pub query_kind: String,
    pub payload: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CloudFeedAuthorization {
    pub authorization_id: i64,
    pub feed_type: String,
    pub source_id: i64,
    pub authorized_at: UnixTime,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StatusQuery {
    /// Admin only: restrict to one campaign.
    pub campaign: Option<i64>,
    /// Evaluate as of this time instead of now.
    pub at: Option<UnixTime>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataSourceStatus {
    pub account_id: AccountId,
    pub source_id: i64,
    pub source_type: String,
    pub variant: DataSourceVariant,
    pub device_name: Option<String>,
    pub latest_measurement_time: Option<UnixTime>,
    pub expected_interval_s: Option<i64>,
    pub next_expected_time: Option<UnixTime>,
    pub overdue: bool,
    pub latest_heartbeat: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatusReport {
    pub at: UnixTime,
    pub sources: Vec<DataSourceStatus>,
    /// Accounts created but not yet activated (admin view only).
    pub not_activated: Vec<AccountId>,
    /// Energy-query sources of activated accounts without any answer.
    pub unanswered_queries: Vec<DataSourceRef>,
}

impl StatusReport {
    pub fn overdue_count(&self) -> usize {
        self.sources.iter().filter(|s| s.overdue).count()
    }
}

/// One long-format record, as exported and as accepted by import.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ExportRow {
    pub account: String,
    pub source: String,
    pub property: String,
    pub unit: String,
    pub time_unix: UnixTime,
    pub value: String,
}

pub const EXPORT_HEADER: [&str; 6] = ["account", "source", "property", "unit", "time_unix", "value"];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImportRequest {
    pub campaign_id: i64,
    pub records: Vec<ExportRow>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImportReceipt {
    pub stored: u64,
    pub duplicates: u64,
    pub accounts_created: u64,
    pub types_created: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExportFilter {
    pub campaign: i64,
    pub account: Option<String>,
    /// Inclusive lower bound.
    pub from: Option<UnixTime>,
    /// Exclusive upper bound.
    pub to: Option<UnixTime>,
}

/// Revoke every session of one account or one device.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RevokeRequest {
    pub account_id: Option<String>,
    pub device_name: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CreateCampaign {
    pub app_id: i64,
    pub name: String,
    pub data_source_list: Vec<String>,
    pub overdue_multiplier: Option<f64>,
    pub upload_interval_s: Option<i64>,
}

/// Operations of the measurement service. Credentials are bearer strings:
/// the admin token, an account session or a device session.
pub trait GearApi {
    fn create_app(&self, admin: &str, name: &str) -> ApiResult<AppRecord>;
    fn list_apps(&self, admin: &str) -> ApiResult<Vec<AppRecord>>;
    fn create_campaign(&self, admin: &str, req: &CreateCampaign) -> ApiResult<CampaignRecord>;
    fn list_campaigns(&self, admin: &str) -> ApiResult<Vec<CampaignRecord>>;
    fn create_account(&self, admin: &str, campaign_id: i64) -> ApiResult<NewAccount>;
    fn list_accounts(&self, admin: &str, campaign_id: i64) -> ApiResult<Vec<AccountSummary>>;
    fn activate_account(&self, activation_token: &str) -> ApiResult<AccountActivation>;
    fn register_device(&self, admin: &str, reg: &DeviceRegistration) -> ApiResult<DeviceRecordView>;
    fn activate_device(&self, session: &str, device_name: &str, pop: &str) -> ApiResult<DeviceActivation>;
    fn upload(&self, session: &str, body: &UploadBody) -> ApiResult<IngestReceipt>;
    fn energy_query(&self, session: &str, req: &EnergyQueryRequest) -> ApiResult<IngestReceipt>;
    fn activate_cloud_feed(&self, session: &str, feed_type: &str) -> ApiResult<CloudFeedAuthorization>;
    fn status(&self, session: &str, query: &StatusQuery) -> ApiResult<StatusReport>;
    fn import_batch(&self, admin: &str, req: &ImportRequest) -> ApiResult<ImportReceipt>;
    fn export(&self, admin: &str, filter: &ExportFilter) -> ApiResult<Vec<ExportRow>>;
    fn revoke_sessions(&self, admin: &str, req: &RevokeRequest) -> ApiResult<u64>;
}

/// Id of the app called `name`, creating it when missing.
pub fn ensure_app(api: &dyn GearApi, admin: &str, name: &str) -> ApiResult<i64> {
    match api.create_app(admin, name) {
        Ok(a) => Ok(a.app_id),
        Err(e) if e.kind == ErrorKind::Duplicate => api
            .list_apps(admin)?
            .into_iter()
            .find(|a| a.name == name)
            .map(|a| a.app_id)
            .ok_or(e),
        Err(e) => Err(e),
    }
}

/// Render rows as RFC 4180 CSV with the export header.
pub fn rows_to_csv(rows: &[ExportRow]) -> String {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::CRLF).from_writer(Vec::new());
    w.write_record(EXPORT_HEADER).expect("write to memory");
    for r in rows {
        w.write_record([
            r.account.as_str(),
            r.source.as_str(),
            r.property.as_str(),
            r.unit.as_str(),
            &r.time_unix.to_string(),
            r.value.as_str(),
        ])
        .expect("write to memory");
    }
    String::from_utf8(w.into_inner().expect("flush to memory")).expect("csv of utf-8 fields")
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("line {line}: {message}")]
pub struct CsvRowError {
    pub line: u64,
    pub message: String,
}

/// Parse export-format CSV. Errors name the 1-based file line.
pub fn csv_to_rows(text: &str) -> Result<Vec<ExportRow>, CsvRowError> {
    Ok(csv_to_numbered_rows(text)?.into_iter().map(|(_, r)| r).collect())
}

/// Like [`csv_to_rows`], keeping each row's file line.
pub fn csv_to_numbered_rows(text: &str) -> Result<Vec<(u64, ExportRow)>, CsvRowError> {
    let mut r = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
    let header = r.headers().map_err(|e| CsvRowError {
        line: 1,
        message: e.to_string(),
    })?;
    if header.iter().collect::<Vec<_>>() != EXPORT_HEADER {
        return Err(CsvRowError {
            line: 1,
            message: format!("expected header {}", EXPORT_HEADER.join(",")),
        });
    }
    // record positions can sit between the CR and LF of the previous terminator
    let line_at = |byte: u64| {
        let b = text.as_bytes();
        let mut end = byte as usize;
        while end < b.len() && (b[end] == b'\r' || b[end] == b'\n') {
            end += 1;
        }
        1 + b[..end].iter().filter(|&&c| c == b'\n').count() as u64
    };
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| CsvRowError {
            line: e.position().map(|p| line_at(p.byte())).unwrap_or(0),
            message: e.to_string(),
        })?;
        let line = rec.position().map(|p| line_at(p.byte())).unwrap_or(0);
        let err = |message: String| CsvRowError { line, message };
        if rec.len() != 6 {
            return Err(err(format!("expected 6 fields, found {}", rec.len())));
        }
        if let NameVerdict::Invalid(reason) = validate_property_name(&rec[2]) {
            return Err(err(format!("property {:?}: {reason}", &rec[2])));
        }
        let time_unix = rec[4]
            .parse()
            .map_err(|_| err(format!("time_unix {:?} is not an integer", &rec[4])))?;
        rows.push((line, ExportRow {
            account: rec[0].to_string(),
            source: rec[1].to_string(),
            property: rec[2].to_string(),
            unit: rec[3].to_string(),
            time_unix,
            value: rec[5].to_string(),
        }));
    }
    Ok(rows)
}
