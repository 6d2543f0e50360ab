//! The shipped data-source catalog: every device property with its unit,
//! format and default interval, plus the energy-query and cloud-feed types.

use std::sync::OnceLock;

use super::model::{DataSourceType, DataSourceVariant};
use super::property::{PropertyDescriptor, ValueFormat};

const DEVICE_PROPERTIES_TSV: &str = include_str!("../../data/device_properties.tsv");

pub const LIVING_ROOM_MODULE: &str = "living-room-module";
pub const SMART_METER_MODULE: &str = "smart-meter-module";
pub const OPENTHERM_MONITOR: &str = "opentherm-monitor";
pub const BOILER_MONITOR_SATELLITE: &str = "boiler-monitor-satellite";
pub const ROOM_MONITOR_SATELLITE: &str = "room-monitor-satellite";
pub const INTEGRATED_BOILER_MONITOR: &str = "integrated-boiler-monitor";
pub const WEATHER_ZONE_QUERY: &str = "weather-zone";
pub const ENELOGIC_FEED: &str = "enelogic-stub";

pub const WEATHER_ZONE_CELL: &str = "weather_zone_cell__str";
pub const WEATHER_ZONE_TZ: &str = "timezone__str";

/// Devices upload in bulk; six hours unless a scenario overrides it.
pub const DEFAULT_UPLOAD_INTERVAL_S: i64 = 6 * 3600;

/// One row of the device property table.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PropertyRow {
    pub source: String,
    pub interval_s: i64,
    pub property: String,
    pub description: String,
    pub unit: String,
    pub format: ValueFormat,
    pub sensor: String,
}

impl PropertyRow {
    pub fn descriptor(&self) -> PropertyDescriptor {
        PropertyDescriptor {
            name: self.property.clone(),
            unit: self.unit.clone(),
            value_format: self.format,
            default_interval_s: self.interval_s,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum CatalogError {
    #[error("line {line}: expected 7 tab-separated columns, found {found}")]
    Columns { line: usize, found: usize },
    #[error("line {line}: bad interval {text:?}")]
    Interval { line: usize, text: String },
    #[error("line {line}: {source}")]
    Format {
        line: usize,
        source: super::property::UnknownFormat,
    },
}

/// Parse `H:MM:SS` (hours may be one or two digits).
pub fn parse_hms(text: &str) -> Option<i64> {
    let mut parts = text.trim().split(':');
    let (h, m, s) = (parts.next()?, parts.next()?, parts.next()?);
    if parts.next().is_some() {
        return None;
    }
    let field = |p: &str| -> Option<i64> {
        (!p.is_empty() && p.bytes().all(|b| b.is_ascii_digit())).then(|| p.parse().ok())?
    };
    let (h, m, s) = (field(h)?, field(m)?, field(s)?);
    (m < 60 && s < 60).then_some(h * 3600 + m * 60 + s)
}

/// Parse the property table. Blank source cells inherit the previous row's
/// source and footnote markers on the interval are ignored.
pub fn parse_property_table(text: &str) -> Result<Vec<PropertyRow>, CatalogError> {
    let mut rows = Vec::new();
    let mut current_source = String::new();
    for (idx, line) in text.lines().enumerate().skip(1) {
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').map(str::trim).collect();
        if cols.len() != 7 {
            return Err(CatalogError::Columns {
                line: line_no,
                found: cols.len(),
            });
        }
        if !cols[0].is_empty() {
            current_source = cols[0].to_string();
        }
        let interval_text: String = cols[1].chars().filter(|c| *c == ':' || c.is_ascii_digit()).collect();
        let interval_s = parse_hms(&interval_text).ok_or_else(|| CatalogError::Interval {
            line: line_no,
            text: cols[1].to_string(),
        })?;
        let format = cols[5]
            .parse()
            .map_err(|source| CatalogError::Format { line: line_no, source })?;
        rows.push(PropertyRow {
            source: current_source.clone(),
            interval_s,
            property: cols[2].to_string(),
            description: cols[3].to_string(),
            unit: cols[4].to_string(),
            format,
            sensor: cols[6].to_string(),
        });
    }
    Ok(rows)
}

/// All data-source types known out of the box.
#[derive(Debug, Clone)]
pub struct Catalog {
    pub rows: Vec<PropertyRow>,
    pub types: Vec<DataSourceType>,
}

impl Catalog {
    pub fn shipped() -> &'static Catalog {
        static CATALOG: OnceLock<Catalog> = OnceLock::new();
        CATALOG.get_or_init(|| {
            let rows = parse_property_table(DEVICE_PROPERTIES_TSV).expect("shipped property table parses");
            Catalog::from_rows(rows)
        })
    }

    pub fn from_rows(rows: Vec<PropertyRow>) -> Self {
        let by_source = |source: &str| -> Vec<PropertyDescriptor> {
            rows.iter()
                .filter(|r| r.source == source)
                .map(PropertyRow::descriptor)
                .collect()
        };
        let device = |name: &str, properties: Vec<PropertyDescriptor>| DataSourceType {
            variant: DataSourceVariant::DeviceType,
            type_name: name.to_string(),
            properties,
            upload_interval_s: Some(DEFAULT_UPLOAD_INTERVAL_S),
        };
        let mut integrated = by_source("OpenTherm Monitor");
        integrated.extend(by_source("Boiler Monitor Satellite"));
        let types = vec![
            device(LIVING_ROOM_MODULE, by_source("Living Room Module")),
            device(SMART_METER_MODULE, by_source("Smart Meter Module")),
            device(OPENTHERM_MONITOR, by_source("OpenTherm Monitor")),
            device(BOILER_MONITOR_SATELLITE, by_source("Boiler Monitor Satellite")),
            device(ROOM_MONITOR_SATELLITE, by_source("Room Monitor Satellite")),
            device(INTEGRATED_BOILER_MONITOR, integrated),
            DataSourceType {
                variant: DataSourceVariant::EnergyQuery,
                type_name: WEATHER_ZONE_QUERY.to_string(),
                properties: vec![
                    PropertyDescriptor {
                        name: WEATHER_ZONE_CELL.into(),
                        unit: "h3".into(),
                        value_format: ValueFormat::Text,
                        default_interval_s: 86_400,
                    },
                    PropertyDescriptor {
                        name: WEATHER_ZONE_TZ.into(),
                        unit: "tz".into(),
                        value_format: ValueFormat::Text,
                        default_interval_s: 86_400,
                    },
                ],
                upload_interval_s: None,
            },
            DataSourceType {
                variant: DataSourceVariant::CloudFeed,
                type_name: ENELOGIC_FEED.to_string(),
                properties: vec![],
                upload_interval_s: None,
            },
        ];
        Catalog { rows, types }
    }

    pub fn get(&self, type_name: &str) -> Option<&DataSourceType> {
        self.types.iter().find(|t| t.type_name == type_name)
    }
}
