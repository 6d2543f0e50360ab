//! DSMR P1 telegram parser.
//!
//! A telegram is an identification line starting with `/`, a blank line, one
//! COSEM object per line and a closing `!` optionally followed by a four digit
//! hex CRC. Lines may end in CRLF or LF. A line that starts with `(` continues
//! the previous object; DSMR 3.0 meters put the gas register value there.

use std::fmt;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObisObject {
    pub reference: String,
    /// `(text, unit)` for every parenthesised group, unit split off at `*`.
    pub values: Vec<(String, Option<String>)>,
}

impl ObisObject {
    pub fn value(&self, idx: usize) -> Option<&str> {
        self.values.get(idx).map(|(v, _)| v.as_str())
    }

    pub fn last_value(&self) -> Option<&(String, Option<String>)> {
        self.values.last()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct P1Telegram {
    /// Identification line without the leading `/`.
    pub header: String,
    pub objects: Vec<ObisObject>,
    pub crc: Option<u16>,
}

impl P1Telegram {
    pub fn object(&self, reference: &str) -> Option<&ObisObject> {
        self.objects.iter().find(|o| o.reference == reference)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum P1Error {
    #[error("telegram does not start with '/'")]
    MissingStart,
    #[error("telegram has no '!' end marker")]
    MissingEnd,
    #[error("telegram is not valid UTF-8")]
    Encoding,
    #[error("line {line}: malformed object {text:?}: {reason}")]
    MalformedLine {
        line: usize,
        text: String,
        reason: &'static str,
    },
    #[error("malformed CRC trailer {0:?}")]
    BadTrailer(String),
}

/// OBIS reference `A-B:C.D.E`, each part a decimal number.
pub fn is_obis_reference(s: &str) -> bool {
    let Some((ab, cde)) = s.split_once(':') else {
        return false;
    };
    let Some((a, b)) = ab.split_once('-') else {
        return false;
    };
    let num = |p: &str| !p.is_empty() && p.len() <= 3 && p.bytes().all(|c| c.is_ascii_digit());
    let parts: Vec<&str> = cde.split('.').collect();
    num(a) && num(b) && parts.len() == 3 && parts.iter().all(|p| num(p))
}

fn parse_groups(mut rest: &str) -> Result<Vec<(String, Option<String>)>, &'static str> {
    let mut groups = Vec::new();
    while !rest.is_empty() {
        let body = rest.strip_prefix('(').ok_or("expected '('")?;
        let close = body.find(')').ok_or("unterminated value group")?;
        let inner = &body[..close];
        if inner.contains('(') {
            return Err("nested '('");
        }
        let (text, unit) = match inner.split_once('*') {
            Some((t, u)) => (t.to_string(), Some(u.to_string())),
            None => (inner.to_string(), None),
        };
        groups.push((text, unit));
        rest = &body[close + 1..];
    }
    Ok(groups)
}

pub fn parse_p1_bytes(raw: &[u8]) -> Result<P1Telegram, P1Error> {
    let text = std::str::from_utf8(raw).map_err(|_| P1Error::Encoding)?;
    parse_p1_telegram(text)
}

pub fn parse_p1_telegram(text: &str) -> Result<P1Telegram, P1Error> {
    let text = text.strip_prefix('/').ok_or(P1Error::MissingStart)?;
    let mut lines = text.split('\n').map(|l| l.strip_suffix('\r').unwrap_or(l));
    let header = lines.next().unwrap_or_default();
    if header.contains('!') {
        return Err(P1Error::MalformedLine {
            line: 1,
            text: header.to_string(),
            reason: "end marker inside identification line",
        });
    }
    let mut objects: Vec<ObisObject> = Vec::new();
    let mut crc = None;
    let mut ended = false;
    for (idx, line) in lines.enumerate() {
        let line_no = idx + 2;
        if ended {
            if line.trim().is_empty() {
                continue;
            }
            return Err(P1Error::MalformedLine {
                line: line_no,
                text: line.to_string(),
                reason: "data after end marker",
            });
        }
        if let Some(trailer) = line.strip_prefix('!') {
            let trailer = trailer.trim();
            if !trailer.is_empty() {
                if trailer.len() != 4 || !trailer.bytes().all(|b| b.is_ascii_hexdigit()) {
                    return Err(P1Error::BadTrailer(trailer.to_string()));
                }
                crc = u16::from_str_radix(trailer, 16).ok();
            }
            ended = true;
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let malformed = |reason| P1Error::MalformedLine {
            line: line_no,
            text: line.to_string(),
            reason,
        };
        if line.starts_with('(') {
            let groups = parse_groups(line).map_err(malformed)?;
            let last = objects.last_mut().ok_or_else(|| malformed("continuation without object"))?;
            last.values.extend(groups);
            continue;
        }
        let split = line.find('(').ok_or_else(|| malformed("no value group"))?;
        let reference = &line[..split];
        if !is_obis_reference(reference) {
            return Err(malformed("reference is not A-B:C.D.E"));
        }
        let values = parse_groups(&line[split..]).map_err(malformed)?;
        objects.push(ObisObject {
            reference: reference.to_string(),
            values,
        });
    }
    if !ended {
        return Err(P1Error::MissingEnd);
    }
    Ok(P1Telegram {
        header: header.to_string(),
        objects,
        crc,
    })
}

impl fmt::Display for P1Telegram {
    /// Serialise back to telegram text with CRLF line ends and no trailer.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "/{}\r\n\r\n", self.header)?;
        for o in &self.objects {
            f.write_str(&o.reference)?;
            for (text, unit) in &o.values {
                match unit {
                    Some(u) => write!(f, "({text}*{u})")?,
                    None => write!(f, "({text})")?,
                }
            }
            f.write_str("\r\n")?;
        }
        f.write_str("!")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn empty_body() {
        let t = parse_p1_telegram("/ISk5\\2ME382-1003\r\n\r\n!\r\n").unwrap();
        assert_eq!(t.header, "ISk5\\2ME382-1003");
        assert!(t.objects.is_empty());
        assert_eq!(t.crc, None);
    }

    #[test]
    fn register_with_unit() {
        let t = parse_p1_telegram("/XMX5LGF\r\n\r\n1-0:1.8.1(012345.678*kWh)\r\n!1A2B\r\n").unwrap();
        assert_eq!(
            t.objects,
            vec![ObisObject {
                reference: "1-0:1.8.1".into(),
                values: vec![("012345.678".into(), Some("kWh".into()))],
            }]
        );
        assert_eq!(t.crc, Some(0x1A2B));
    }

    #[test]
    fn garbled_line_reports_line_number() {
        let err = parse_p1_telegram("/XMX5\r\n\r\n1-0:1.8.1(000001.000*kWh)\r\n1-0:1.8(\r\n!").unwrap_err();
        match err {
            P1Error::MalformedLine { line, .. } => assert_eq!(line, 4),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn structural_errors() {
        assert_eq!(parse_p1_telegram("XMX5\r\n!"), Err(P1Error::MissingStart));
        assert_eq!(parse_p1_telegram("/XMX5\r\n\r\n1-0:1.8.1(1*kWh)\r\n"), Err(P1Error::MissingEnd));
        assert!(matches!(parse_p1_telegram("/X\n\n!12\n"), Err(P1Error::BadTrailer(_))));
    }

    #[test]
    fn continuation_line_and_lf_endings() {
        let t = parse_p1_telegram(
            "/ISk5\\2ME382-1003\n\n0-1:24.3.0(120517020000)(08)(60)(1)(0-1:24.2.1)(m3)\n(00124.477)\n!\n",
        )
        .unwrap();
        let gas = t.object("0-1:24.3.0").unwrap();
        assert_eq!(gas.values.len(), 7);
        assert_eq!(gas.last_value().unwrap().0, "00124.477");
    }

    #[test]
    fn display_reparses() {
        let src = "/KFM5KAIFA-METER\r\n\r\n1-3:0.2.8(42)\r\n0-0:1.0.0(170124213128W)\r\n1-0:1.8.1(000123.456*kWh)\r\n0-0:96.13.0()\r\n!";
        let t = parse_p1_telegram(src).unwrap();
        assert_eq!(t.to_string(), src);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(2_000))]

        #[test]
        fn never_panics_on_bytes(bytes in proptest::collection::vec(any::<u8>(), 0..256)) {
            let _ = parse_p1_bytes(&bytes);
            let _ = crate::protocols::crc::verify_telegram_crc(&bytes);
        }

        #[test]
        fn never_panics_on_telegram_like_text(s in "/[A-Za-z0-9\\\\]{0,8}\r?\n(\r?\n)?([0-9:.()*A-Za-z-]{0,30}\r?\n){0,6}!?[0-9A-F]{0,5}") {
            let _ = parse_p1_telegram(&s);
        }
    }
}
