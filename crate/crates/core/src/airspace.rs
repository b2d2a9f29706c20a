//! Airport frame, traffic-pattern structure and the discrete intent label set.
//!
//! Everything downstream works in a local east/north/up frame measured in
//! kilometres and centred on the airport reference point.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Mean earth radius in km.
pub const EARTH_RADIUS_KM: f64 = 6371.0088;
pub const KM_PER_NM: f64 = 1.852;
const MAX_PROJECTION_RANGE_KM: f64 = 500.0;

#[derive(Debug, Error, PartialEq)]
pub enum GeoError {
    #[error("direction undefined at field")]
    DirectionUndefined,
    #[error("latitude {0} out of range")]
    LatitudeOutOfRange(f64),
    #[error("point {0:.1} km from origin exceeds projection range")]
    TooFar(f64),
    #[error("unsupported sector count {0}, expected 4 or 8")]
    BadSectors(u8),
    #[error("invalid airport config: {0}")]
    InvalidAirport(String),
    #[error("airport config parse error: {0}")]
    Parse(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LocalPosition {
    /// km east of the reference point
    pub x: f64,
    /// km north
    pub y: f64,
    /// km above field elevation
    pub z: f64,
}

impl LocalPosition {
    pub const ORIGIN: LocalPosition = LocalPosition { x: 0.0, y: 0.0, z: 0.0 };

    pub fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn horizontal_range(&self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn distance(&self, other: &LocalPosition) -> f64 {
        let (dx, dy, dz) = (self.x - other.x, self.y - other.y, self.z - other.z);
        (dx * dx + dy * dy + dz * dz).sqrt()
    }

    pub fn horizontal_distance(&self, other: &LocalPosition) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    pub fn sub(&self, other: &LocalPosition) -> LocalPosition {
        LocalPosition::new(self.x - other.x, self.y - other.y, self.z - other.z)
    }

    pub fn add(&self, other: &LocalPosition) -> LocalPosition {
        LocalPosition::new(self.x + other.x, self.y + other.y, self.z + other.z)
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    pub fn to_array(&self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }

    /// Compass bearing from the origin, degrees in [0, 360).
    pub fn bearing_deg(&self) -> f64 {
        let b = self.x.atan2(self.y).to_degrees();
        if b < 0.0 {
            b + 360.0
        } else {
            b
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Geodetic {
    pub lat_deg: f64,
    pub lon_deg: f64,
    /// metres above mean sea level
    pub elevation_m: f64,
}

impl Geodetic {
    pub fn new(lat_deg: f64, lon_deg: f64, elevation_m: f64) -> Self {
        Self { lat_deg, lon_deg, elevation_m }
    }
}

/// Equirectangular projection about `origin`.
pub fn geodetic_to_local(point: &Geodetic, origin: &Geodetic) -> Result<LocalPosition, GeoError> {
    for lat in [point.lat_deg, origin.lat_deg] {
        if !(lat.abs() <= 90.0) {
            return Err(GeoError::LatitudeOutOfRange(lat));
        }
    }
    let mut dlon = point.lon_deg - origin.lon_deg;
    if dlon > 180.0 {
        dlon -= 360.0;
    } else if dlon < -180.0 {
        dlon += 360.0;
    }
    let x = EARTH_RADIUS_KM * dlon.to_radians() * origin.lat_deg.to_radians().cos();
    let y = EARTH_RADIUS_KM * (point.lat_deg - origin.lat_deg).to_radians();
    let range = x.hypot(y);
    if range > MAX_PROJECTION_RANGE_KM {
        return Err(GeoError::TooFar(range));
    }
    Ok(LocalPosition::new(x, y, (point.elevation_m - origin.elevation_m) / 1000.0))
}

pub fn local_to_geodetic(pos: &LocalPosition, origin: &Geodetic) -> Geodetic {
    let lat = origin.lat_deg + (pos.y / EARTH_RADIUS_KM).to_degrees();
    let lon = origin.lon_deg
        + (pos.x / (EARTH_RADIUS_KM * origin.lat_deg.to_radians().cos())).to_degrees();
    Geodetic::new(lat, lon, origin.elevation_m + pos.z * 1000.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Direction {
    North,
    Northeast,
    East,
    Southeast,
    South,
    Southwest,
    West,
    Northwest,
}

impl Direction {
    pub const CARDINALS: [Direction; 4] =
        [Direction::North, Direction::East, Direction::South, Direction::West];

    const EIGHT: [Direction; 8] = [
        Direction::North,
        Direction::Northeast,
        Direction::East,
        Direction::Southeast,
        Direction::South,
        Direction::Southwest,
        Direction::West,
        Direction::Northwest,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Direction::North => "North",
            Direction::Northeast => "Northeast",
            Direction::East => "East",
            Direction::Southeast => "Southeast",
            Direction::South => "South",
            Direction::Southwest => "Southwest",
            Direction::West => "West",
            Direction::Northwest => "Northwest",
        }
    }

    pub fn short(&self) -> &'static str {
        match self {
            Direction::North => "N",
            Direction::Northeast => "NE",
            Direction::East => "E",
            Direction::Southeast => "SE",
            Direction::South => "S",
            Direction::Southwest => "SW",
            Direction::West => "W",
            Direction::Northwest => "NW",
        }
    }

    pub fn bearing_deg(&self) -> f64 {
        Self::EIGHT.iter().position(|d| d == self).unwrap() as f64 * 45.0
    }

    pub fn is_cardinal(&self) -> bool {
        Self::CARDINALS.contains(self)
    }
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Sector of the bearing from the field. Sector boundaries go to the sector
/// that comes first clockwise, so 45° with four sectors is North.
pub fn cardinal_direction(pos: &LocalPosition, sectors: u8) -> Result<Direction, GeoError> {
    let step = match sectors {
        4 => 2,
        8 => 1,
        other => return Err(GeoError::BadSectors(other)),
    };
    if pos.horizontal_range() == 0.0 {
        return Err(GeoError::DirectionUndefined);
    }
    let width = 360.0 / sectors as f64;
    let idx = ((pos.bearing_deg() + width / 2.0) / width).ceil() as i64 - 1;
    let idx = idx.rem_euclid(sectors as i64) as usize;
    Ok(Direction::EIGHT[idx * step])
}

/// Horizontal range in whole nautical miles, rounded half up.
pub fn distance_miles(pos: &LocalPosition) -> u32 {
    (pos.horizontal_range() / KM_PER_NM + 0.5).floor() as u32
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PatternDirection {
    #[default]
    Left,
    Right,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Leg {
    Crosswind,
    Downwind,
    Base,
}

impl Leg {
    pub const ALL: [Leg; 3] = [Leg::Crosswind, Leg::Downwind, Leg::Base];

    pub fn name(&self) -> &'static str {
        match self {
            Leg::Crosswind => "crosswind",
            Leg::Downwind => "downwind",
            Leg::Base => "base",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunwayEnd {
    pub designator: String,
    pub heading_deg: f64,
    pub threshold: LocalPosition,
    #[serde(default)]
    pub pattern: PatternDirection,
}

impl RunwayEnd {
    pub fn number(&self) -> u32 {
        self.designator.trim_end_matches(['L', 'R', 'C']).parse().unwrap_or(0)
    }

    /// Unit vector along the landing direction (east, north).
    pub fn along(&self) -> (f64, f64) {
        let h = self.heading_deg.to_radians();
        (h.sin(), h.cos())
    }

    /// Unit vector from the runway toward the pattern side.
    pub fn pattern_side(&self) -> (f64, f64) {
        let (ax, ay) = self.along();
        match self.pattern {
            PatternDirection::Left => (-ay, ax),
            PatternDirection::Right => (ay, -ax),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AirportConfig {
    pub name: String,
    /// Spoken names of the field, e.g. "butler county".
    #[serde(default)]
    pub aliases: Vec<String>,
    pub origin: Geodetic,
    pub runway_ends: Vec<RunwayEnd>,
    #[serde(default = "default_pattern_altitude")]
    pub pattern_altitude_agl_km: f64,
}

fn default_pattern_altitude() -> f64 {
    0.305
}

#[derive(Serialize, Deserialize)]
struct AirportFile {
    schema: u32,
    #[serde(flatten)]
    airport: AirportConfig,
}

pub const AIRPORT_SCHEMA: u32 = 1;

impl AirportConfig {
    /// A single 1.5 km runway 08/26 at the origin, left traffic both ends.
    pub fn example() -> Self {
        let half = 0.75;
        let h08: f64 = 80.0;
        let (ax, ay) = (h08.to_radians().sin(), h08.to_radians().cos());
        AirportConfig {
            name: "Butler County".into(),
            aliases: vec!["butler county".into(), "butler".into()],
            origin: Geodetic::new(40.7776, -79.9497, 381.0),
            runway_ends: vec![
                RunwayEnd {
                    designator: "08".into(),
                    heading_deg: 80.0,
                    threshold: LocalPosition::new(-half * ax, -half * ay, 0.0),
                    pattern: PatternDirection::Left,
                },
                RunwayEnd {
                    designator: "26".into(),
                    heading_deg: 260.0,
                    threshold: LocalPosition::new(half * ax, half * ay, 0.0),
                    pattern: PatternDirection::Left,
                },
            ],
            pattern_altitude_agl_km: 0.305,
        }
    }

    pub fn validate(&self) -> Result<(), GeoError> {
        let bad = |m: String| Err(GeoError::InvalidAirport(m));
        if self.runway_ends.is_empty() {
            return bad("no runway ends".into());
        }
        if !(self.pattern_altitude_agl_km > 0.0) {
            return bad(format!("pattern altitude {} must be positive", self.pattern_altitude_agl_km));
        }
        for (i, end) in self.runway_ends.iter().enumerate() {
            if !(0.0..360.0).contains(&end.heading_deg) {
                return bad(format!("runway {} heading {} outside [0,360)", end.designator, end.heading_deg));
            }
            let num = end.number() as i64;
            if end.designator.len() < 2 || !(1..=36).contains(&num) {
                return bad(format!("bad designator {:?}", end.designator));
            }
            let expected = (end.heading_deg / 10.0).round() as i64 % 36;
            let diff = (num % 36 - expected).rem_euclid(36);
            if diff > 1 && diff < 35 {
                return bad(format!(
                    "designator {} does not match heading {}",
                    end.designator, end.heading_deg
                ));
            }
            for other in &self.runway_ends[i + 1..] {
                if other.designator == end.designator {
                    return bad(format!("duplicate designator {}", end.designator));
                }
                if (other.number() as i64 - num).rem_euclid(36) == 18 {
                    let d = (other.heading_deg - end.heading_deg).rem_euclid(360.0);
                    if (d - 180.0).abs() > 1.0 {
                        return bad(format!(
                            "runway ends {} and {} are not reciprocal",
                            end.designator, other.designator
                        ));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn runway(&self, designator: &str) -> Option<&RunwayEnd> {
        self.runway_ends.iter().find(|r| r.designator == designator)
    }

    /// Runway end whose number matches a spoken runway number.
    pub fn runway_by_number(&self, n: u32) -> Option<&RunwayEnd> {
        self.runway_ends.iter().find(|r| r.number() == n)
    }

    fn sorted_ends(&self) -> Vec<&RunwayEnd> {
        let mut ends: Vec<&RunwayEnd> = self.runway_ends.iter().collect();
        ends.sort_by(|a, b| a.designator.cmp(&b.designator));
        ends
    }

    pub fn from_toml(text: &str) -> Result<Self, GeoError> {
        let file: AirportFile = toml::from_str(text).map_err(|e| GeoError::Parse(e.to_string()))?;
        if file.schema != AIRPORT_SCHEMA {
            return Err(GeoError::Parse(format!(
                "schema {} unsupported, expected {}",
                file.schema, AIRPORT_SCHEMA
            )));
        }
        file.airport.validate()?;
        Ok(file.airport)
    }

    pub fn to_toml(&self) -> String {
        let file = AirportFile { schema: AIRPORT_SCHEMA, airport: self.clone() };
        toml::to_string(&file).expect("airport config serializes")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum IntentLabel {
    Takeoff(String),
    Landing(String),
    EnterLeg(String, Leg),
    Depart(Direction),
    OtherIntent,
    InsufficientInformation,
    Unknown,
}

impl IntentLabel {
    pub fn is_unknown(&self) -> bool {
        matches!(self, IntentLabel::Unknown)
    }
}

impl fmt::Display for IntentLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            IntentLabel::Takeoff(r) => write!(f, "takeoff:{r}"),
            IntentLabel::Landing(r) => write!(f, "landing:{r}"),
            IntentLabel::EnterLeg(r, leg) => write!(f, "{}:{r}", leg.name()),
            IntentLabel::Depart(d) => write!(f, "depart:{}", d.short()),
            IntentLabel::OtherIntent => f.write_str("other"),
            IntentLabel::InsufficientInformation => f.write_str("insufficient"),
            IntentLabel::Unknown => f.write_str("unknown"),
        }
    }
}

#[derive(Debug, Error, PartialEq)]
#[error("unrecognized intent label {0:?}")]
pub struct LabelParseError(pub String);

impl FromStr for IntentLabel {
    type Err = LabelParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let err = || LabelParseError(s.to_string());
        let t = s.trim().to_ascii_lowercase();
        match t.as_str() {
            "other" => return Ok(IntentLabel::OtherIntent),
            "insufficient" => return Ok(IntentLabel::InsufficientInformation),
            "unknown" => return Ok(IntentLabel::Unknown),
            _ => {}
        }
        let (kind, arg) = t.split_once(':').ok_or_else(err)?;
        let runway = || {
            if arg.is_empty() {
                Err(err())
            } else {
                Ok(arg.to_ascii_uppercase())
            }
        };
        match kind {
            "takeoff" => Ok(IntentLabel::Takeoff(runway()?)),
            "landing" => Ok(IntentLabel::Landing(runway()?)),
            "crosswind" => Ok(IntentLabel::EnterLeg(runway()?, Leg::Crosswind)),
            "downwind" => Ok(IntentLabel::EnterLeg(runway()?, Leg::Downwind)),
            "base" => Ok(IntentLabel::EnterLeg(runway()?, Leg::Base)),
            "depart" => {
                let d = match arg {
                    "n" => Direction::North,
                    "e" => Direction::East,
                    "s" => Direction::South,
                    "w" => Direction::West,
                    _ => return Err(err()),
                };
                Ok(IntentLabel::Depart(d))
            }
            _ => Err(err()),
        }
    }
}

impl From<IntentLabel> for String {
    fn from(l: IntentLabel) -> String {
        l.to_string()
    }
}

impl TryFrom<String> for IntentLabel {
    type Error = LabelParseError;
    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

/// All labels for `airport` in embedding-index order: per runway end (by
/// designator) takeoff, landing, crosswind, downwind, base; then departures
/// N, E, S, W; other; insufficient; unknown.
pub fn intent_label_set(airport: &AirportConfig) -> Vec<IntentLabel> {
    let mut out = Vec::with_capacity(5 * airport.runway_ends.len() + 7);
    for end in airport.sorted_ends() {
        let r = end.designator.clone();
        out.push(IntentLabel::Takeoff(r.clone()));
        out.push(IntentLabel::Landing(r.clone()));
        for leg in Leg::ALL {
            out.push(IntentLabel::EnterLeg(r.clone(), leg));
        }
    }
    out.extend(Direction::CARDINALS.iter().map(|d| IntentLabel::Depart(*d)));
    out.push(IntentLabel::OtherIntent);
    out.push(IntentLabel::InsufficientInformation);
    out.push(IntentLabel::Unknown);
    out
}
