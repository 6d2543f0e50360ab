use std::fmt;

use serde::{Deserialize, Serialize};

use super::property::PropertyDescriptor;

/// Seconds since the Unix epoch, UTC.
pub type UnixTime = i64;

/// A single timestamped property value. A missing reading has no
/// `Measurement` at all; it is never encoded as "0".
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Measurement {
    pub property: String,
    pub time: UnixTime,
    pub value: String,
}

impl Measurement {
    pub fn new(property: impl Into<String>, time: UnixTime, value: impl Into<String>) -> Self {
        Self {
            property: property.into(),
            time,
            value: value.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum UploadError {
    #[error("upload contains no measurements")]
    Empty,
    #[error("measurement of {property} at {time} is later than upload time {upload_time}")]
    FromTheFuture {
        property: String,
        time: UnixTime,
        upload_time: UnixTime,
    },
}

/// A batch of measurements delivered by one data source.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Upload {
    pub source_id: i64,
    pub upload_time: UnixTime,
    pub measurements: Vec<Measurement>,
}

impl Upload {
    pub fn size(&self) -> usize {
        self.measurements.len()
    }

    pub fn check(&self) -> Result<(), UploadError> {
        check_upload_times(self.upload_time, &self.measurements)
    }
}

pub fn check_upload_times(upload_time: UnixTime, measurements: &[Measurement]) -> Result<(), UploadError> {
    if measurements.is_empty() {
        return Err(UploadError::Empty);
    }
    match measurements.iter().find(|m| m.time > upload_time) {
        Some(m) => Err(UploadError::FromTheFuture {
            property: m.property.clone(),
            time: m.time,
            upload_time,
        }),
        None => Ok(()),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataSourceVariant {
    DeviceType,
    EnergyQuery,
    CloudFeed,
    /// Data added by deployers after the fact, outside the resident app.
    BatchImport,
}

impl DataSourceVariant {
    pub fn as_str(self) -> &'static str {
        match self {
            DataSourceVariant::DeviceType => "device_type",
            DataSourceVariant::EnergyQuery => "energy_query",
            DataSourceVariant::CloudFeed => "cloud_feed",
            DataSourceVariant::BatchImport => "batch_import",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [
            DataSourceVariant::DeviceType,
            DataSourceVariant::EnergyQuery,
            DataSourceVariant::CloudFeed,
            DataSourceVariant::BatchImport,
        ]
        .into_iter()
        .find(|v| v.as_str() == s)
    }
}

impl fmt::Display for DataSourceVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A kind of data source a campaign can declare.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DataSourceType {
    pub variant: DataSourceVariant,
    pub type_name: String,
    pub properties: Vec<PropertyDescriptor>,
    /// Upload cadence in seconds; only meaningful for device types.
    pub upload_interval_s: Option<i64>,
}

impl DataSourceType {
    pub fn property(&self, name: &str) -> Option<&PropertyDescriptor> {
        self.properties.iter().find(|p| p.name == name)
    }

    /// Smallest property interval, i.e. the fastest sampling cadence.
    pub fn fastest_interval_s(&self) -> Option<i64> {
        self.properties.iter().map(|p| p.default_interval_s).min()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Campaign {
    pub campaign_id: i64,
    pub app_id: i64,
    pub name: String,
    pub data_source_list: Vec<String>,
}

impl Campaign {
    pub fn is_activatable(&self) -> bool {
        !self.data_source_list.is_empty()
    }
}

/// Opaque pseudonymous account identifier.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AccountId(pub String);

impl fmt::Display for AccountId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "snake_case")]
pub enum ActivationState {
    Pending { token_hash: String },
    Activated { activated_at: UnixTime },
}

/// A resident's participation in a campaign. Deliberately carries no
/// directly identifying fields.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Account {
    pub account_id: AccountId,
    pub campaign_id: i64,
    pub activation_state: ActivationState,
}
