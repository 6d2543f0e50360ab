//! Weather-zone assignment: a home coordinate becomes a resolution-4 cell of
//! the H3 hexagonal grid, after Gaussian noise has been added to it.
//!
//! Only the cell id and the time-zone name leave this module.

use h3o::{CellIndex, LatLng, Resolution};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

pub const WEATHER_ZONE_RESOLUTION: Resolution = Resolution::Four;

/// Default displacement standard deviation in metres.
pub const DEFAULT_SIGMA_M: f64 = 3_000.0;

/// Mean earth radius used by H3, in metres.
const EARTH_RADIUS_M: f64 = 6_371_007.180_918_475;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeatherZoneResult {
    pub cell_id: String,
    pub tz: String,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GeoError {
    #[error("invalid coordinate")]
    InvalidCoordinate,
    #[error("sigma must be finite and non-negative, got {0}")]
    InvalidSigma(f64),
    #[error("unknown time zone {0:?}")]
    UnknownZone(String),
    #[error("malformed cell id {0:?}")]
    MalformedCell(String),
    #[error("cell {0} is not at resolution 4")]
    WrongResolution(String),
}

/// Move `(lat, lon)` by `north_m`/`east_m` metres using the local flat-earth
/// approximation. Crossing a pole reflects the latitude.
pub fn displace(lat: f64, lon: f64, north_m: f64, east_m: f64) -> (f64, f64) {
    let m_per_deg = EARTH_RADIUS_M * std::f64::consts::PI / 180.0;
    let cos = lat.to_radians().cos().max(1e-9);
    let mut new_lat = lat + north_m / m_per_deg;
    let mut new_lon = lon + east_m / (m_per_deg * cos);
    if new_lat > 90.0 {
        new_lat = 180.0 - new_lat;
        new_lon += 180.0;
    } else if new_lat < -90.0 {
        new_lat = -180.0 - new_lat;
        new_lon += 180.0;
    }
    new_lon = (new_lon + 180.0).rem_euclid(360.0) - 180.0;
    (new_lat, new_lon)
}

fn checked_latlng(lat: f64, lon: f64) -> Result<LatLng, GeoError> {
    if !(-90.0..=90.0).contains(&lat) || !(-180.0..=180.0).contains(&lon) {
        return Err(GeoError::InvalidCoordinate);
    }
    LatLng::new(lat, lon).map_err(|_| GeoError::InvalidCoordinate)
}

/// Resolution-4 cell containing the exact point.
pub fn cell_at(lat: f64, lon: f64) -> Result<CellIndex, GeoError> {
    Ok(checked_latlng(lat, lon)?.to_cell(WEATHER_ZONE_RESOLUTION))
}

pub fn assign_weather_zone<R: Rng + ?Sized>(
    lat: f64,
    lon: f64,
    sigma_m: f64,
    tz: &str,
    rng: &mut R,
) -> Result<WeatherZoneResult, GeoError> {
    checked_latlng(lat, lon)?;
    if !sigma_m.is_finite() || sigma_m < 0.0 {
        return Err(GeoError::InvalidSigma(sigma_m));
    }
    if tz.parse::<chrono_tz::Tz>().is_err() {
        return Err(GeoError::UnknownZone(tz.to_string()));
    }
    let (plat, plon) = if sigma_m == 0.0 {
        (lat, lon)
    } else {
        let north: f64 = StandardNormal.sample(rng);
        let east: f64 = StandardNormal.sample(rng);
        displace(lat, lon, north * sigma_m, east * sigma_m)
    };
    Ok(WeatherZoneResult {
        cell_id: cell_at(plat, plon)?.to_string(),
        tz: tz.to_string(),
    })
}

/// Parse a 15-hex-digit resolution-4 cell id.
pub fn parse_cell(cell_id: &str) -> Result<CellIndex, GeoError> {
    if cell_id.len() != 15 || !cell_id.bytes().all(|b| b.is_ascii_hexdigit()) {
        return Err(GeoError::MalformedCell(cell_id.to_string()));
    }
    let cell: CellIndex = cell_id
        .parse()
        .map_err(|_| GeoError::MalformedCell(cell_id.to_string()))?;
    if cell.resolution() != WEATHER_ZONE_RESOLUTION {
        return Err(GeoError::WrongResolution(cell_id.to_string()));
    }
    Ok(cell)
}

/// Centroid of a weather-zone cell in degrees.
pub fn cell_center(cell_id: &str) -> Result<(f64, f64), GeoError> {
    let ll = LatLng::from(parse_cell(cell_id)?);
    Ok((ll.lat(), ll.lng()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zwolle_cell() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let z = assign_weather_zone(52.5126, 6.0946, 0.0, "Europe/Amsterdam", &mut rng).unwrap();
        assert_eq!(z.cell_id, "8419699ffffffff");
        let json = serde_json::to_value(&z).unwrap();
        let keys: Vec<&String> = json.as_object().unwrap().keys().collect();
        assert_eq!(keys, ["cell_id", "tz"]);
    }

    #[test]
    fn center_round_trips() {
        let (lat, lon) = cell_center("8419699ffffffff").unwrap();
        assert_eq!(cell_at(lat, lon).unwrap().to_string(), "8419699ffffffff");
    }

    #[test]
    fn rejects_bad_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(cell_center("zz"), Err(GeoError::MalformedCell("zz".into())));
        assert!(matches!(cell_center("8519699bfffffff"), Err(GeoError::WrongResolution(_))));
        assert!(assign_weather_zone(95.0, 0.0, 0.0, "UTC", &mut rng).is_err());
        assert!(assign_weather_zone(f64::NAN, 0.0, 0.0, "UTC", &mut rng).is_err());
        assert!(assign_weather_zone(0.0, 0.0, -1.0, "UTC", &mut rng).is_err());
        assert_eq!(
            assign_weather_zone(0.0, 0.0, 0.0, "Mars/Olympus", &mut rng),
            Err(GeoError::UnknownZone("Mars/Olympus".into()))
        );
    }

    #[test]
    fn displacement_wraps() {
        let (lat, lon) = displace(89.99, 10.0, 5_000.0, 0.0);
        assert!(lat <= 90.0 && (lon - -170.0).abs() < 1e-9);
        let (_, lon) = displace(0.0, 179.99, 0.0, 5_000.0);
        assert!(lon < -179.9);
    }
}
