//! Property descriptors and the `<quantity>__<unit>` naming convention.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// Unit suffixes recognised without a warning.
pub const KNOWN_UNITS: &[&str] = &["0", "p", "ppm", "degC", "kWh", "m3", "str"];

/// printf-style value format tag attached to every property.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ValueFormat {
    #[serde(rename = "%u")]
    Unsigned,
    #[serde(rename = "%d")]
    Signed,
    #[serde(rename = "%.1f")]
    Fixed1,
    #[serde(rename = "%.2f")]
    Fixed2,
    #[serde(rename = "%.3f")]
    Fixed3,
    #[serde(rename = "%s")]
    Text,
}

impl ValueFormat {
    pub const ALL: [ValueFormat; 6] = [
        ValueFormat::Unsigned,
        ValueFormat::Signed,
        ValueFormat::Fixed1,
        ValueFormat::Fixed2,
        ValueFormat::Fixed3,
        ValueFormat::Text,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            ValueFormat::Unsigned => "%u",
            ValueFormat::Signed => "%d",
            ValueFormat::Fixed1 => "%.1f",
            ValueFormat::Fixed2 => "%.2f",
            ValueFormat::Fixed3 => "%.3f",
            ValueFormat::Text => "%s",
        }
    }

    /// Number of decimals for the fixed-point tags.
    pub fn decimals(self) -> Option<usize> {
        match self {
            ValueFormat::Fixed1 => Some(1),
            ValueFormat::Fixed2 => Some(2),
            ValueFormat::Fixed3 => Some(3),
            _ => None,
        }
    }
}

impl fmt::Display for ValueFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown value format tag {0:?}")]
pub struct UnknownFormat(pub String);

impl FromStr for ValueFormat {
    type Err = UnknownFormat;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ValueFormat::ALL
            .into_iter()
            .find(|f| f.tag() == s)
            .ok_or_else(|| UnknownFormat(s.to_string()))
    }
}

/// A named measurable quantity.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PropertyDescriptor {
    pub name: String,
    pub unit: String,
    pub value_format: ValueFormat,
    /// Default sampling interval in seconds.
    pub default_interval_s: i64,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum DescriptorError {
    #[error("property name {name:?} rejected: {reason}")]
    InvalidName { name: String, reason: String },
    #[error("property {0:?} must have a positive interval")]
    NonPositiveInterval(String),
}

impl PropertyDescriptor {
    pub fn new(
        name: impl Into<String>,
        unit: impl Into<String>,
        value_format: ValueFormat,
        default_interval_s: i64,
    ) -> Result<Self, DescriptorError> {
        let name = name.into();
        if let NameVerdict::Invalid(reason) = validate_property_name(&name) {
            return Err(DescriptorError::InvalidName { name, reason });
        }
        if default_interval_s <= 0 {
            return Err(DescriptorError::NonPositiveInterval(name));
        }
        Ok(Self {
            name,
            unit: unit.into(),
            value_format,
            default_interval_s,
        })
    }
}

/// Outcome of property-name validation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "verdict", rename_all = "snake_case")]
pub enum NameVerdict {
    /// Conforms to `<quantity>__<unit>`. Unknown units carry a warning.
    Valid { warning: Option<String> },
    /// Pre-convention identifier (camelCase or single-underscore), kept loadable.
    Legacy,
    Invalid(String),
}

impl NameVerdict {
    pub fn is_accepted(&self) -> bool {
        !matches!(self, NameVerdict::Invalid(_))
    }
}

pub fn validate_property_name(name: &str) -> NameVerdict {
    if name.is_empty() {
        return NameVerdict::Invalid("empty name".into());
    }
    let Some((quantity, unit)) = name.split_once("__") else {
        return if is_identifier(name) {
            NameVerdict::Legacy
        } else {
            NameVerdict::Invalid("no double-underscore separator".into())
        };
    };
    if quantity.is_empty() {
        return NameVerdict::Invalid("empty quantity part".into());
    }
    if unit.is_empty() {
        return NameVerdict::Invalid("empty unit part".into());
    }
    if !is_snake_case(quantity) {
        return NameVerdict::Invalid(format!(
            "quantity part {quantity:?} is not lowercase snake-case"
        ));
    }
    if !unit.chars().all(|c| c.is_ascii_alphanumeric()) {
        return NameVerdict::Invalid(format!("unit part {unit:?} must be alphanumeric"));
    }
    let warning = (!KNOWN_UNITS.contains(&unit)).then(|| format!("unrecognised unit {unit:?}"));
    NameVerdict::Valid { warning }
}

fn is_identifier(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic())
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

fn is_snake_case(s: &str) -> bool {
    let starts_ok = s.starts_with(|c: char| c.is_ascii_lowercase());
    starts_ok
        && !s.ends_with('_')
        && s
            .split('_')
            .all(|part| !part.is_empty() && part.chars().all(|c| c.is_ascii_lowercase() || c.is_ascii_digit()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn convention_names() {
        assert_eq!(validate_property_name("co2__ppm"), NameVerdict::Valid { warning: None });
        assert_eq!(
            validate_property_name("e_use_hi_cum__kWh"),
            NameVerdict::Valid { warning: None }
        );
        assert_eq!(
            validate_property_name("temp indoor"),
            NameVerdict::Invalid("no double-underscore separator".into())
        );
        assert_eq!(validate_property_name("boilerSupplyTemp"), NameVerdict::Legacy);
        assert_eq!(validate_property_name("meter_code_str"), NameVerdict::Legacy);
    }

    #[test]
    fn unknown_unit_is_a_warning() {
        match validate_property_name("wind_speed__mps") {
            NameVerdict::Valid { warning: Some(w) } => assert!(w.contains("mps")),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn malformed_parts() {
        for bad in ["__ppm", "co2__", "Co2__ppm", "co2_ppm__x y", "co_2___ppm", "_co2__ppm", ""] {
            assert!(!validate_property_name(bad).is_accepted(), "{bad:?} accepted");
        }
    }

    #[test]
    fn format_tags_round_trip() {
        for f in ValueFormat::ALL {
            assert_eq!(f.tag().parse::<ValueFormat>().unwrap(), f);
        }
        assert!("%x".parse::<ValueFormat>().is_err());
    }

    #[test]
    fn descriptor_requires_positive_interval() {
        assert!(PropertyDescriptor::new("co2__ppm", "ppm", ValueFormat::Unsigned, 0).is_err());
        assert!(PropertyDescriptor::new("temp indoor", "°C", ValueFormat::Fixed1, 600).is_err());
        assert!(PropertyDescriptor::new("co2__ppm", "ppm", ValueFormat::Unsigned, 600).is_ok());
    }
}
