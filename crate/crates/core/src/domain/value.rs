//! Canonical rendering and parsing of measurement values under a format tag.

use serde::{Deserialize, Serialize};

use super::property::ValueFormat;

/// A raw sensor value before it is rendered, or a parsed stored value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RawValue {
    Int(i64),
    Float(f64),
    Text(String),
}

impl RawValue {
    pub fn as_f64(&self) -> Option<f64> {
        match *self {
            RawValue::Int(i) => Some(i as f64),
            RawValue::Float(f) => Some(f),
            RawValue::Text(_) => None,
        }
    }
}

impl From<i64> for RawValue {
    fn from(v: i64) -> Self {
        RawValue::Int(v)
    }
}

impl From<f64> for RawValue {
    fn from(v: f64) -> Self {
        RawValue::Float(v)
    }
}

impl From<&str> for RawValue {
    fn from(v: &str) -> Self {
        RawValue::Text(v.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ValueError {
    #[error("format {format} expects a number, got text")]
    ExpectedNumber { format: ValueFormat },
    #[error("format %s expects text, got a number")]
    ExpectedText,
    #[error("format {format} expects an integer, got {value}")]
    ExpectedInteger { format: ValueFormat, value: f64 },
    #[error("negative value {0} under %u")]
    NegativeUnsigned(i64),
    #[error("value {0} is not finite")]
    NotFinite(f64),
    #[error("cannot parse {text:?} under {format}")]
    Unparseable { format: ValueFormat, text: String },
}

fn integral(format: ValueFormat, raw: &RawValue) -> Result<i64, ValueError> {
    match *raw {
        RawValue::Int(i) => Ok(i),
        RawValue::Float(f) if !f.is_finite() => Err(ValueError::NotFinite(f)),
        RawValue::Float(f) if f.fract() == 0.0 && f.abs() < 9.0e15 => Ok(f as i64),
        RawValue::Float(f) => Err(ValueError::ExpectedInteger { format, value: f }),
        RawValue::Text(_) => Err(ValueError::ExpectedNumber { format }),
    }
}

/// Render `raw` as the canonical string for `format`.
pub fn render_value(format: ValueFormat, raw: &RawValue) -> Result<String, ValueError> {
    match format {
        ValueFormat::Unsigned => {
            let v = integral(format, raw)?;
            if v < 0 {
                return Err(ValueError::NegativeUnsigned(v));
            }
            Ok(v.to_string())
        }
        ValueFormat::Signed => Ok(integral(format, raw)?.to_string()),
        ValueFormat::Fixed1 | ValueFormat::Fixed2 | ValueFormat::Fixed3 => {
            let v = raw.as_f64().ok_or(ValueError::ExpectedNumber { format })?;
            if !v.is_finite() {
                return Err(ValueError::NotFinite(v));
            }
            let decimals = format.decimals().unwrap_or(0);
            let s = format!("{v:.decimals$}");
            // "-0.0" and friends collapse to the unsigned zero
            if s.starts_with('-') && s[1..].bytes().all(|b| b == b'0' || b == b'.') {
                Ok(s[1..].to_string())
            } else {
                Ok(s)
            }
        }
        ValueFormat::Text => match raw {
            RawValue::Text(t) => Ok(t.clone()),
            _ => Err(ValueError::ExpectedText),
        },
    }
}

/// Parse a stored or transmitted value under `format`.
///
/// Leading zeros are accepted (DSMR registers are zero padded); exponents,
/// `inf`, `nan` and surrounding whitespace are not.
pub fn parse_value(format: ValueFormat, text: &str) -> Result<RawValue, ValueError> {
    let bad = || ValueError::Unparseable {
        format,
        text: text.to_string(),
    };
    match format {
        ValueFormat::Text => Ok(RawValue::Text(text.to_string())),
        ValueFormat::Unsigned => {
            if text.is_empty() || !text.bytes().all(|b| b.is_ascii_digit()) {
                return Err(bad());
            }
            text.parse::<i64>().map(RawValue::Int).map_err(|_| bad())
        }
        ValueFormat::Signed => {
            let digits = text.strip_prefix('-').unwrap_or(text);
            if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) {
                return Err(bad());
            }
            text.parse::<i64>().map(RawValue::Int).map_err(|_| bad())
        }
        ValueFormat::Fixed1 | ValueFormat::Fixed2 | ValueFormat::Fixed3 => {
            let body = text.strip_prefix('-').unwrap_or(text);
            let (int, frac) = body.split_once('.').unwrap_or((body, ""));
            let ok = !int.is_empty()
                && int.bytes().all(|b| b.is_ascii_digit())
                && frac.bytes().all(|b| b.is_ascii_digit())
                && !(body.contains('.') && frac.is_empty());
            if !ok {
                return Err(bad());
            }
            text.parse::<f64>().map(RawValue::Float).map_err(|_| bad())
        }
    }
}

/// Parse and re-render, yielding the canonical spelling of `text`.
pub fn canonicalize(format: ValueFormat, text: &str) -> Result<String, ValueError> {
    render_value(format, &parse_value(format, text)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn render_examples() {
        assert_eq!(render_value(ValueFormat::Fixed3, &12345.678.into()).unwrap(), "12345.678");
        assert_eq!(render_value(ValueFormat::Unsigned, &412.into()).unwrap(), "412");
        assert_eq!(
            render_value(ValueFormat::Unsigned, &(-1).into()),
            Err(ValueError::NegativeUnsigned(-1))
        );
        assert_eq!(render_value(ValueFormat::Signed, &(-7).into()).unwrap(), "-7");
        assert_eq!(render_value(ValueFormat::Text, &"ISk5".into()).unwrap(), "ISk5");
        assert_eq!(render_value(ValueFormat::Fixed1, &(-0.04).into()).unwrap(), "0.0");
    }

    #[test]
    fn render_type_mismatch() {
        assert!(render_value(ValueFormat::Fixed2, &"abc".into()).is_err());
        assert!(render_value(ValueFormat::Text, &1.into()).is_err());
        assert!(render_value(ValueFormat::Signed, &1.5.into()).is_err());
        assert!(render_value(ValueFormat::Fixed1, &f64::NAN.into()).is_err());
    }

    #[test]
    fn parse_examples() {
        assert_eq!(parse_value(ValueFormat::Fixed1, "20.5").unwrap(), RawValue::Float(20.5));
        assert!(parse_value(ValueFormat::Unsigned, "abc").is_err());
        assert_eq!(
            parse_value(ValueFormat::Fixed3, "012345.678").unwrap(),
            RawValue::Float(12345.678)
        );
        for bad in ["", "1e3", "inf", "NaN", " 1.0", "1.", ".5", "--1", "+1"] {
            assert!(parse_value(ValueFormat::Fixed2, bad).is_err(), "{bad:?}");
        }
        assert!(parse_value(ValueFormat::Unsigned, "-1").is_err());
        assert_eq!(parse_value(ValueFormat::Signed, "-1").unwrap(), RawValue::Int(-1));
    }

    #[test]
    fn canonical_spelling() {
        assert_eq!(canonicalize(ValueFormat::Fixed3, "012345.678").unwrap(), "12345.678");
        assert_eq!(canonicalize(ValueFormat::Fixed1, "20").unwrap(), "20.0");
    }

    fn format_and_value() -> impl Strategy<Value = (ValueFormat, RawValue)> {
        prop_oneof![
            (0i64..10_000_000).prop_map(|v| (ValueFormat::Unsigned, RawValue::Int(v))),
            (-10_000_000i64..10_000_000).prop_map(|v| (ValueFormat::Signed, RawValue::Int(v))),
            (-1.0e6f64..1.0e6).prop_map(|v| (ValueFormat::Fixed1, RawValue::Float(v))),
            (-1.0e6f64..1.0e6).prop_map(|v| (ValueFormat::Fixed2, RawValue::Float(v))),
            (-1.0e6f64..1.0e6).prop_map(|v| (ValueFormat::Fixed3, RawValue::Float(v))),
            "[ -~]{0,24}".prop_map(|s| (ValueFormat::Text, RawValue::Text(s))),
        ]
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(10_000))]

        #[test]
        fn render_parse_round_trip((format, raw) in format_and_value()) {
            let text = render_value(format, &raw).unwrap();
            let back = parse_value(format, &text).unwrap();
            match (format.decimals(), &raw, &back) {
                (Some(d), RawValue::Float(x), RawValue::Float(y)) => {
                    let half_ulp = 0.5 * 10f64.powi(-(d as i32));
                    prop_assert!((x - y).abs() <= half_ulp * (1.0 + 1e-9));
                    prop_assert_eq!(render_value(format, &back).unwrap(), text);
                }
                _ => prop_assert_eq!(&back, &raw),
            }
        }
    }
}
