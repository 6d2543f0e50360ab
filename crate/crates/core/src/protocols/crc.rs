//! CRC16 over the P1 telegram from `/` through `!`.

/// Reflected form of the 0x8005 polynomial (CRC-16/ARC, as used by DSMR).
pub const DSMR_CRC_POLY: u16 = 0xA001;
pub const DSMR_CRC_INIT: u16 = 0x0000;

const TABLE: [u16; 256] = build_table();

const fn build_table() -> [u16; 256] {
    let mut table = [0u16; 256];
    let mut i = 0;
    while i < 256 {
        let mut crc = i as u16;
        let mut bit = 0;
        while bit < 8 {
            crc = if crc & 1 != 0 {
                (crc >> 1) ^ DSMR_CRC_POLY
            } else {
                crc >> 1
            };
            bit += 1;
        }
        table[i] = crc;
        i += 1;
    }
    table
}

pub fn crc16(data: &[u8]) -> u16 {
    data.iter().fold(DSMR_CRC_INIT, |crc, &b| {
        (crc >> 8) ^ TABLE[((crc ^ b as u16) & 0xFF) as usize]
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CrcVerdict {
    Ok,
    Mismatch { expected: u16, found: u16 },
    /// No checksum trailer, as in DSMR 3.0 telegrams.
    Absent,
    /// Something follows `!` but it is not four hex digits.
    BadTrailer,
}

/// Check the checksum trailer of a raw telegram byte stream.
pub fn verify_telegram_crc(raw: &[u8]) -> CrcVerdict {
    let Some(start) = raw.iter().position(|&b| b == b'/') else {
        return CrcVerdict::Absent;
    };
    let Some(bang) = raw[start..].iter().position(|&b| b == b'!').map(|p| p + start) else {
        return CrcVerdict::Absent;
    };
    let trailer: Vec<u8> = raw[bang + 1..]
        .iter()
        .copied()
        .take_while(|&b| b != b'\r' && b != b'\n')
        .collect();
    if trailer.iter().all(|b| b.is_ascii_whitespace()) {
        return CrcVerdict::Absent;
    }
    let found = match std::str::from_utf8(&trailer)
        .ok()
        .filter(|t| t.len() == 4 && t.bytes().all(|b| b.is_ascii_hexdigit()))
        .and_then(|t| u16::from_str_radix(t, 16).ok())
    {
        Some(v) => v,
        None => return CrcVerdict::BadTrailer,
    };
    let expected = crc16(&raw[start..=bang]);
    if expected == found {
        CrcVerdict::Ok
    } else {
        CrcVerdict::Mismatch { expected, found }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn arc_check_value() {
        // catalogued check value of CRC-16/ARC
        assert_eq!(crc16(b"123456789"), 0xBB3D);
        assert_eq!(crc16(b""), 0);
    }

    #[test]
    fn verdicts() {
        let body = b"/XMX5LGBBFG1012463183\r\n\r\n1-0:1.8.1(000001.000*kWh)\r\n!";
        let crc = crc16(body);
        let mut ok = body.to_vec();
        ok.extend_from_slice(format!("{crc:04X}\r\n").as_bytes());
        assert_eq!(verify_telegram_crc(&ok), CrcVerdict::Ok);

        let mut flipped = ok.clone();
        flipped[30] ^= 0x01;
        assert!(matches!(verify_telegram_crc(&flipped), CrcVerdict::Mismatch { .. }));

        let mut bare = body.to_vec();
        bare.extend_from_slice(b"\r\n");
        assert_eq!(verify_telegram_crc(&bare), CrcVerdict::Absent);

        let mut junk = body.to_vec();
        junk.extend_from_slice(b"12G4\r\n");
        assert_eq!(verify_telegram_crc(&junk), CrcVerdict::BadTrailer);
    }
}
