//! Track and radio-call ingestion, time alignment and scene windowing.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io::{BufRead, BufReader, Read};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::airspace::{geodetic_to_local, Geodetic, IntentLabel, LocalPosition};

/// Gaps longer than this split a track; interpolation never crosses them.
pub const MAX_GAP_S: f64 = 2.0;
pub const DEFAULT_STALENESS_S: f64 = 600.0;
const SECONDS_PER_DAY: f64 = 86_400.0;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}:{line}: {msg}")]
    Malformed { path: String, line: usize, msg: String },
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("unsupported header {0:?}")]
    Header(String),
    #[error("scene cache schema {found} unsupported (expected {expected})")]
    Schema { found: String, expected: u32 },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DataError + '_ {
    move |source| DataError::Io { path: path.display().to_string(), source }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrackSample {
    pub time: f64,
    pub position: LocalPosition,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Track {
    pub aircraft_id: String,
    pub points: Vec<TrackSample>,
}

impl Track {
    pub fn new(aircraft_id: impl Into<String>, points: Vec<TrackSample>) -> Self {
        Self { aircraft_id: aircraft_id.into(), points }
    }

    pub fn duration(&self) -> f64 {
        match (self.points.first(), self.points.last()) {
            (Some(a), Some(b)) => b.time - a.time,
            _ => 0.0,
        }
    }

    /// Linear interpolation at `t`, or `None` outside the track.
    pub fn position_at(&self, t: f64) -> Option<LocalPosition> {
        let pts = &self.points;
        let first = pts.first()?;
        let last = pts.last()?;
        if t < first.time || t > last.time {
            return None;
        }
        let i = pts.partition_point(|p| p.time <= t);
        if i == 0 {
            return Some(first.position);
        }
        if i == pts.len() {
            return Some(last.position);
        }
        let (a, b) = (&pts[i - 1], &pts[i]);
        let w = (t - a.time) / (b.time - a.time);
        Some(lerp(&a.position, &b.position, w))
    }
}

fn lerp(a: &LocalPosition, b: &LocalPosition, w: f64) -> LocalPosition {
    LocalPosition::new(a.x + (b.x - a.x) * w, a.y + (b.y - a.y) * w, a.z + (b.z - a.z) * w)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RadioCall {
    #[serde(rename = "time_s")]
    pub time: f64,
    pub transcript: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub speaker_truth: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub intent_truth: Option<IntentLabel>,
}

/// A call after speaker identification and intent extraction.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledCall {
    pub time: f64,
    pub speaker: Option<String>,
    pub intent: IntentLabel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub id: String,
    pub aircraft_id: String,
    pub t_obs: f64,
    pub obs: Vec<LocalPosition>,
    pub intent: IntentLabel,
    pub call_age: Option<f64>,
    pub goal: LocalPosition,
}

impl Scene {
    pub fn day(&self) -> i64 {
        (self.t_obs / SECONDS_PER_DAY).floor() as i64
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct DatasetSplit {
    pub train: Vec<Scene>,
    pub val: Vec<Scene>,
    pub test: Vec<Scene>,
    pub seed: u64,
    pub provenance: String,
}

impl DatasetSplit {
    pub fn len(&self) -> usize {
        self.train.len() + self.val.len() + self.test.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn all(&self) -> impl Iterator<Item = &Scene> {
        self.train.iter().chain(&self.val).chain(&self.test)
    }
}

const LOCAL_HEADER: [&str; 5] = ["time_s", "aircraft_id", "x_km", "y_km", "z_km"];
const GEODETIC_HEADER: [&str; 5] = ["time_s", "aircraft_id", "lat", "lon", "alt_m"];

/// Reads a track file. Local-frame files need no origin; geodetic files are
/// projected about `origin` and fail without one.
pub fn load_tracks(path: &Path, origin: Option<&Geodetic>) -> Result<BTreeMap<String, Track>, DataError> {
    let file = fs::File::open(path).map_err(io_err(path))?;
    read_tracks(file, &path.display().to_string(), origin)
}

pub fn read_tracks<R: Read>(
    reader: R,
    name: &str,
    origin: Option<&Geodetic>,
) -> Result<BTreeMap<String, Track>, DataError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(false).trim(csv::Trim::All).from_reader(reader);
    let mut records = rdr.records();
    let header = match records.next() {
        None => return Ok(BTreeMap::new()),
        Some(r) => r.map_err(|e| malformed(name, 1, e.to_string()))?,
    };
    let cols: Vec<&str> = header.iter().collect();
    let geodetic = if cols == LOCAL_HEADER {
        false
    } else if cols == GEODETIC_HEADER {
        true
    } else {
        return Err(DataError::Header(cols.join(",")));
    };
    if geodetic && origin.is_none() {
        return Err(malformed(name, 1, "geodetic track file requires an airport origin".into()));
    }
    let mut raw: BTreeMap<String, Vec<(usize, TrackSample)>> = BTreeMap::new();
    for (i, rec) in records.enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| malformed(name, line, e.to_string()))?;
        if rec.len() != 5 {
            return Err(malformed(name, line, format!("expected 5 fields, found {}", rec.len())));
        }
        let num = |j: usize| -> Result<f64, DataError> {
            rec[j]
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| malformed(name, line, format!("field {} is not a number: {:?}", cols[j], &rec[j])))
        };
        let time = num(0)?;
        let id = rec[1].to_string();
        if id.is_empty() {
            return Err(malformed(name, line, "empty aircraft_id".into()));
        }
        let position = if geodetic {
            let g = Geodetic::new(num(2)?, num(3)?, num(4)?);
            geodetic_to_local(&g, origin.unwrap()).map_err(|e| malformed(name, line, e.to_string()))?
        } else {
            LocalPosition::new(num(2)?, num(3)?, num(4)?)
        };
        raw.entry(id).or_default().push((line, TrackSample { time, position }));
    }
    Ok(raw
        .into_iter()
        .map(|(id, mut pts)| {
            // stable sort keeps file order among equal times; the last one wins
            pts.sort_by(|a, b| a.1.time.total_cmp(&b.1.time));
            let mut points: Vec<TrackSample> = Vec::with_capacity(pts.len());
            for (_, p) in pts {
                match points.last_mut() {
                    Some(last) if last.time == p.time => *last = p,
                    _ => points.push(p),
                }
            }
            (id.clone(), Track::new(id, points))
        })
        .collect())
}

fn malformed(name: &str, line: usize, msg: String) -> DataError {
    DataError::Malformed { path: name.to_string(), line, msg }
}

pub fn write_tracks<W: std::io::Write>(out: W, tracks: &BTreeMap<String, Track>) -> std::io::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(LOCAL_HEADER)?;
    for track in tracks.values() {
        for p in &track.points {
            w.write_record([
                p.time.to_string(),
                track.aircraft_id.clone(),
                p.position.x.to_string(),
                p.position.y.to_string(),
                p.position.z.to_string(),
            ])?;
        }
    }
    w.flush()
}

/// Radio-call file: one JSON object per line.
pub fn load_calls(path: &Path) -> Result<Vec<RadioCall>, DataError> {
    let file = fs::File::open(path).map_err(io_err(path))?;
    let name = path.display().to_string();
    let mut calls = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line_text = line.map_err(io_err(path))?;
        if line_text.trim().is_empty() {
            continue;
        }
        let call: RadioCall =
            serde_json::from_str(&line_text).map_err(|e| malformed(&name, i + 1, e.to_string()))?;
        calls.push(call);
    }
    calls.sort_by(|a, b| a.time.total_cmp(&b.time));
    Ok(calls)
}

pub fn write_calls<W: std::io::Write>(mut out: W, calls: &[RadioCall]) -> std::io::Result<()> {
    for c in calls {
        serde_json::to_writer(&mut out, c)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

/// Resamples onto a uniform grid starting at each segment's first sample.
/// Source gaps longer than [`MAX_GAP_S`] start a new segment.
pub fn resample_track(track: &Track, rate_hz: f64) -> Vec<Track> {
    assert!(rate_hz > 0.0, "sample rate must be positive");
    if track.points.len() <= 1 {
        return vec![track.clone()];
    }
    let mut segments = Vec::new();
    let mut start = 0;
    for i in 1..=track.points.len() {
        let split = i == track.points.len() || track.points[i].time - track.points[i - 1].time > MAX_GAP_S;
        if split {
            let src = Track::new(track.aircraft_id.clone(), track.points[start..i].to_vec());
            segments.push(regrid(&src, rate_hz));
            start = i;
        }
    }
    segments
}

fn regrid(src: &Track, rate_hz: f64) -> Track {
    let t0 = src.points[0].time;
    let t_end = src.points.last().unwrap().time;
    let dt = 1.0 / rate_hz;
    let n = ((t_end - t0) * rate_hz + 1e-9).floor() as usize;
    let points = (0..=n)
        .map(|k| {
            let t = t0 + k as f64 * dt;
            TrackSample { time: t, position: src.position_at(t.min(t_end)).unwrap() }
        })
        .collect();
    Track::new(src.aircraft_id.clone(), points)
}

/// Latest call by `aircraft_id` at or before `t_obs` and no older than
/// `staleness_s`; `Unknown` when there is none.
pub fn attach_intent(
    aircraft_id: &str,
    calls: &[LabeledCall],
    t_obs: f64,
    staleness_s: f64,
) -> (IntentLabel, Option<f64>) {
    calls
        .iter()
        .filter(|c| c.time <= t_obs && c.speaker.as_deref() == Some(aircraft_id))
        .next_back()
        .filter(|c| t_obs - c.time <= staleness_s)
        .map(|c| (c.intent.clone(), Some(t_obs - c.time)))
        .unwrap_or((IntentLabel::Unknown, None))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WindowConfig {
    pub obs_horizon_s: f64,
    pub pred_horizon_s: f64,
    pub stride_s: f64,
    pub sample_rate_hz: f64,
    pub staleness_s: f64,
}

impl Default for WindowConfig {
    fn default() -> Self {
        Self {
            obs_horizon_s: 11.0,
            pred_horizon_s: 120.0,
            stride_s: 10.0,
            sample_rate_hz: 1.0,
            staleness_s: DEFAULT_STALENESS_S,
        }
    }
}

impl WindowConfig {
    pub fn obs_len(&self) -> usize {
        (self.obs_horizon_s * self.sample_rate_hz).round() as usize + 1
    }
}

/// Slides observation windows over every resampled segment. Output order is
/// by aircraft id, then window start.
pub fn window_scenes(
    tracks: &BTreeMap<String, Track>,
    calls: &[LabeledCall],
    cfg: &WindowConfig,
) -> Vec<Scene> {
    assert!(cfg.obs_horizon_s > 0.0 && cfg.pred_horizon_s > 0.0 && cfg.stride_s > 0.0);
    let obs_steps = (cfg.obs_horizon_s * cfg.sample_rate_hz).round() as usize;
    let pred_steps = (cfg.pred_horizon_s * cfg.sample_rate_hz).round() as usize;
    let stride = ((cfg.stride_s * cfg.sample_rate_hz).round() as usize).max(1);
    let mut scenes = Vec::new();
    for track in tracks.values() {
        let own_calls: Vec<LabeledCall> =
            calls.iter().filter(|c| c.speaker.as_deref() == Some(track.aircraft_id.as_str())).cloned().collect();
        for seg in resample_track(track, cfg.sample_rate_hz) {
            let pts = &seg.points;
            let mut start = 0;
            while start + obs_steps + pred_steps < pts.len() {
                let last = start + obs_steps;
                let t_obs = pts[last].time;
                let goal = &pts[last + pred_steps];
                debug_assert!((goal.time - t_obs - cfg.pred_horizon_s).abs() <= 0.5);
                let (intent, call_age) = attach_intent(&track.aircraft_id, &own_calls, t_obs, cfg.staleness_s);
                scenes.push(Scene {
                    id: format!("{}@{}", track.aircraft_id, t_obs),
                    aircraft_id: track.aircraft_id.clone(),
                    t_obs,
                    obs: pts[start..=last].iter().map(|p| p.position).collect(),
                    intent,
                    call_age,
                    goal: goal.position,
                });
                start += stride;
            }
        }
    }
    scenes
}

/// The single scene whose observation window ends at `t_obs`, if the
/// track covers the whole observation and prediction span.
pub fn scene_at(track: &Track, calls: &[LabeledCall], t_obs: f64, cfg: &WindowConfig) -> Option<Scene> {
    let dt = 1.0 / cfg.sample_rate_hz;
    let obs_steps = (cfg.obs_horizon_s * cfg.sample_rate_hz).round() as usize;
    let pred_steps = (cfg.pred_horizon_s * cfg.sample_rate_hz).round() as usize;
    let obs = (0..=obs_steps)
        .map(|k| track.position_at(t_obs - (obs_steps - k) as f64 * dt))
        .collect::<Option<Vec<_>>>()?;
    let goal = track.position_at(t_obs + pred_steps as f64 * dt)?;
    let (intent, call_age) = attach_intent(&track.aircraft_id, calls, t_obs, cfg.staleness_s);
    Some(Scene {
        id: format!("{}@{}", track.aircraft_id, t_obs),
        aircraft_id: track.aircraft_id.clone(),
        t_obs,
        obs,
        intent,
        call_age,
        goal,
    })
}

/// Uniform draw in [0, 1) keyed by seed and group.
fn group_draw(seed: u64, aircraft: &str, day: i64) -> f64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(aircraft.as_bytes());
    h.update([0]);
    h.update(day.to_le_bytes());
    let d = h.finalize();
    let x = u64::from_le_bytes(d[..8].try_into().expect("digest has 32 bytes"));
    (x >> 11) as f64 / (1u64 << 53) as f64
}

/// Splits scenes into train/val/test by whole (aircraft, day) groups. Each
/// group's side depends only on its key and the seed, so re-windowing the
/// same flights keeps every group on the same side. Realized fractions are
/// approximate.
pub fn split_scenes(scenes: Vec<Scene>, fractions: (f64, f64), seed: u64, provenance: &str) -> DatasetSplit {
    let mut split = DatasetSplit { seed, provenance: provenance.to_string(), ..Default::default() };
    let mut memo: BTreeMap<(String, i64), f64> = BTreeMap::new();
    for s in scenes {
        let key = (s.aircraft_id.clone(), s.day());
        let u = *memo.entry(key).or_insert_with(|| group_draw(seed, &s.aircraft_id, s.day()));
        if u < fractions.0 {
            split.train.push(s);
        } else if u < fractions.0 + fractions.1 {
            split.val.push(s);
        } else {
            split.test.push(s);
        }
    }
    split
}

pub const SCENE_CACHE_SCHEMA: u32 = 1;

/// Line-structured scene cache.
///
/// ```text
/// goalcast-scenes schema=1 obs_len=<n>
/// split,id,aircraft_id,t_obs,intent,call_age,gx,gy,gz,x0,y0,z0,...
/// ```
/// `split` is one of train/val/test, `call_age` is empty when absent, and
/// floats use the shortest exact round-trip representation.
pub fn write_scene_cache(split: &DatasetSplit) -> String {
    let obs_len = split.all().next().map(|s| s.obs.len()).unwrap_or(0);
    let mut out = format!("goalcast-scenes schema={SCENE_CACHE_SCHEMA} obs_len={obs_len}\n");
    let _ = writeln!(out, "# seed={} provenance={}", split.seed, split.provenance.replace('\n', " "));
    for (tag, list) in [("train", &split.train), ("val", &split.val), ("test", &split.test)] {
        for s in list {
            let age = s.call_age.map(|a| a.to_string()).unwrap_or_default();
            let _ = write!(
                out,
                "{tag},{},{},{},{},{age},{},{},{}",
                s.id, s.aircraft_id, s.t_obs, s.intent, s.goal.x, s.goal.y, s.goal.z
            );
            for p in &s.obs {
                let _ = write!(out, ",{},{},{}", p.x, p.y, p.z);
            }
            out.push('\n');
        }
    }
    out
}

pub fn read_scene_cache(text: &str) -> Result<DatasetSplit, DataError> {
    let mut lines = text.lines().enumerate();
    let header = lines.next().map(|(_, l)| l).unwrap_or("");
    let mut fields = header.split_whitespace();
    if fields.next() != Some("goalcast-scenes") {
        return Err(DataError::Header(header.to_string()));
    }
    let schema = fields.next().and_then(|f| f.strip_prefix("schema=")).unwrap_or("");
    if schema != SCENE_CACHE_SCHEMA.to_string() {
        return Err(DataError::Schema { found: schema.to_string(), expected: SCENE_CACHE_SCHEMA });
    }
    let obs_len: usize = fields
        .next()
        .and_then(|f| f.strip_prefix("obs_len="))
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| DataError::Header(header.to_string()))?;
    let mut split = DatasetSplit::default();
    for (i, line) in lines {
        let bad = |msg: &str| malformed("scene cache", i + 1, msg.to_string());
        if let Some(meta) = line.strip_prefix("# ") {
            if let Some(rest) = meta.strip_prefix("seed=") {
                let (seed, prov) = rest.split_once(" provenance=").unwrap_or((rest, ""));
                split.seed = seed.parse().map_err(|_| bad("bad seed"))?;
                split.provenance = prov.to_string();
            }
            continue;
        }
        if line.is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 9 + 3 * obs_len {
            return Err(bad("wrong field count"));
        }
        let f = |j: usize| cols[j].parse::<f64>().map_err(|_| bad("bad number"));
        let intent = cols[4].parse().map_err(|_| bad("bad intent"))?;
        let call_age = if cols[5].is_empty() { None } else { Some(f(5)?) };
        let mut obs = Vec::with_capacity(obs_len);
        for k in 0..obs_len {
            obs.push(LocalPosition::new(f(9 + 3 * k)?, f(10 + 3 * k)?, f(11 + 3 * k)?));
        }
        let scene = Scene {
            id: cols[1].to_string(),
            aircraft_id: cols[2].to_string(),
            t_obs: f(3)?,
            obs,
            intent,
            call_age,
            goal: LocalPosition::new(f(6)?, f(7)?, f(8)?),
        };
        match cols[0] {
            "train" => split.train.push(scene),
            "val" => split.val.push(scene),
            "test" => split.test.push(scene),
            _ => return Err(bad("unknown split tag")),
        }
    }
    Ok(split)
}
