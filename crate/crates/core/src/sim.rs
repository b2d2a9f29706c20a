//! Synthetic traffic-pattern flights with matching templated radio calls.
//!
//! Paths are built from analytic segments (straight legs with linear speed
//! change, constant-rate turns, holds) in a runway frame where `u` runs
//! along the landing direction from the threshold and `w` points to the
//! pattern side. Every pattern turn is then a positive rotation in that
//! frame regardless of left or right traffic.

use std::collections::{BTreeMap, BTreeSet};
use std::f64::consts::{FRAC_PI_2, PI};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::airspace::{
    cardinal_direction, distance_miles, AirportConfig, Direction, IntentLabel, Leg, LocalPosition, PatternDirection,
    RunwayEnd,
};
use crate::data::{
    scene_at, split_scenes, window_scenes, DatasetSplit, LabeledCall, RadioCall, Scene, Track, TrackSample,
    WindowConfig,
};
use crate::radio::{label_calls, AircraftDirectory, AircraftDirectoryEntry};

const SECONDS_PER_DAY: f64 = 86_400.0;
const ROLL_KM: f64 = 0.45;
const TAXI_SPEED_MPS: f64 = 8.0;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("runway {0} is not defined at this airport")]
    UnknownRunway(String),
    #[error("invalid sim config: {0}")]
    Config(String),
    #[error("pattern too tight: downwind offset {offset} km needs at least two turn radii ({radius} km each)")]
    TightPattern { offset: f64, radius: f64 },
}

/// Relative weights of call degradations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhrasingNoise {
    pub none: f64,
    pub synonyms: f64,
    pub omissions: f64,
}

impl Default for PhrasingNoise {
    fn default() -> Self {
        Self { none: 1.0, synonyms: 0.0, omissions: 0.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub airport: AirportConfig,
    pub speed_mps: f64,
    pub turn_rate_dps: f64,
    pub sample_rate_hz: f64,
    pub position_noise_km: f64,
    pub phrasing: PhrasingNoise,
    pub downwind_offset_km: f64,
    pub final_length_km: f64,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            airport: AirportConfig::example(),
            speed_mps: 36.0,
            turn_rate_dps: 3.0,
            sample_rate_hz: 1.0,
            position_noise_km: 0.02,
            phrasing: PhrasingNoise::default(),
            downwind_offset_km: 1.5,
            final_length_km: 1.5,
            seed: 0,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        if !(self.speed_mps > 0.0 && self.turn_rate_dps > 0.0 && self.sample_rate_hz > 0.0) {
            return Err(SimError::Config("speed, turn_rate and sample_rate must be positive".into()));
        }
        if self.position_noise_km < 0.0 {
            return Err(SimError::Config("position noise must be non-negative".into()));
        }
        let p = self.phrasing;
        if p.none < 0.0 || p.synonyms < 0.0 || p.omissions < 0.0 || p.none + p.synonyms + p.omissions <= 0.0 {
            return Err(SimError::Config("phrasing weights must be non-negative with a positive sum".into()));
        }
        let r = self.turn_radius_km();
        if self.downwind_offset_km < 2.0 * r || self.final_length_km < r {
            return Err(SimError::TightPattern { offset: self.downwind_offset_km, radius: r });
        }
        self.airport.validate().map_err(|e| SimError::Config(e.to_string()))
    }

    fn speed_kps(&self) -> f64 {
        self.speed_mps / 1000.0
    }

    fn omega(&self) -> f64 {
        self.turn_rate_dps.to_radians()
    }

    pub fn turn_radius_km(&self) -> f64 {
        self.speed_kps() / self.omega()
    }
}

/// What happens after the branch point in the ambiguity benchmark.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Branch {
    Land,
    ExtendDownwind,
    Depart(Direction),
}

impl Branch {
    pub const ALL: [Branch; 6] = [
        Branch::Land,
        Branch::ExtendDownwind,
        Branch::Depart(Direction::North),
        Branch::Depart(Direction::East),
        Branch::Depart(Direction::South),
        Branch::Depart(Direction::West),
    ];

    pub fn label(&self, runway: &str) -> IntentLabel {
        match self {
            Branch::Land => IntentLabel::Landing(runway.to_string()),
            Branch::ExtendDownwind => IntentLabel::EnterLeg(runway.to_string(), Leg::Downwind),
            Branch::Depart(d) => IntentLabel::Depart(*d),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Maneuver {
    FullPattern,
    TouchAndGo,
    Entry45,
    Departure(Direction),
    Taxi,
    /// Spawn on downwind `preroll_s` before the branch point, then branch.
    DownwindBranch { branch: Branch, preroll_s: u32 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlightScript {
    pub aircraft_id: String,
    /// Spoken type name, e.g. "Skyhawk"; omitted calls fall back to the tail.
    pub callsign_type: String,
    pub runway: String,
    pub maneuver: Maneuver,
    pub spawn_time: f64,
    /// Per-transition call flags in emission order; missing entries emit.
    pub emit: Vec<bool>,
}

impl FlightScript {
    fn emits(&self, idx: usize) -> bool {
        self.emit.get(idx).copied().unwrap_or(true)
    }

    /// Spoken identifier: the last three characters of the tail number.
    pub fn spoken_id(&self) -> String {
        let t = &self.aircraft_id;
        t[t.len().saturating_sub(3)..].to_string()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct State {
    u: f64,
    w: f64,
    /// Frame heading, radians; 0 is +u, π/2 is +w.
    h: f64,
    alt: f64,
}

#[derive(Debug, Clone, Copy)]
enum Motion {
    Straight { v0: f64, v1: f64 },
    Turn { rate: f64, v: f64 },
    Hold,
}

#[derive(Debug, Clone, Copy)]
struct Segment {
    start: State,
    duration: f64,
    alt_end: f64,
    motion: Motion,
}

impl Segment {
    fn at(&self, tau: f64) -> State {
        let s = self.start;
        let frac = if self.duration > 0.0 { tau / self.duration } else { 1.0 };
        let alt = s.alt + (self.alt_end - s.alt) * frac;
        match self.motion {
            Motion::Hold => State { alt, ..s },
            Motion::Straight { v0, v1 } => {
                let d = v0 * tau + (v1 - v0) * tau * tau / (2.0 * self.duration.max(f64::MIN_POSITIVE));
                State { u: s.u + d * s.h.cos(), w: s.w + d * s.h.sin(), h: s.h, alt }
            }
            Motion::Turn { rate, v } => {
                let h = s.h + rate * tau;
                let k = v / rate;
                State { u: s.u + k * (h.sin() - s.h.sin()), w: s.w + k * (s.h.cos() - h.cos()), h, alt }
            }
        }
    }

    fn end(&self) -> State {
        self.at(self.duration)
    }
}

/// Kind of templated call to emit at a transition.
#[derive(Debug, Clone, Copy, PartialEq)]
enum CallKind {
    Takeoff,
    Crosswind,
    Downwind,
    Entry45,
    Base,
    Final { touch_and_go: bool },
    DepartPattern(Direction),
    Taxi,
    BranchLanding,
    BranchExtend,
}

#[derive(Debug, Clone)]
struct Event {
    time: f64,
    kind: CallKind,
    label: IntentLabel,
}

struct Pilot<'a> {
    cfg: &'a SimConfig,
    runway: &'a RunwayEnd,
    segs: Vec<Segment>,
    state: State,
    t: f64,
    events: Vec<Event>,
}

impl<'a> Pilot<'a> {
    fn new(cfg: &'a SimConfig, runway: &'a RunwayEnd, state: State) -> Self {
        Self { cfg, runway, segs: Vec::new(), state, t: 0.0, events: Vec::new() }
    }

    fn push(&mut self, duration: f64, alt_end: f64, motion: Motion) {
        if duration <= 0.0 {
            return;
        }
        let seg = Segment { start: self.state, duration, alt_end, motion };
        self.state = seg.end();
        self.t += duration;
        self.segs.push(seg);
    }

    fn straight(&mut self, dist: f64, alt_end: f64) {
        let v = self.cfg.speed_kps();
        self.push(dist.max(0.0) / v, alt_end, Motion::Straight { v0: v, v1: v });
    }

    /// Straight run with speed changing linearly from `v0` to `v1` (km/s).
    fn roll(&mut self, dist: f64, v0: f64, v1: f64) {
        self.push(2.0 * dist / (v0 + v1), self.state.alt, Motion::Straight { v0, v1 });
    }

    fn turn(&mut self, angle: f64, alt_end: f64) {
        let w = self.cfg.omega();
        self.push(angle.abs() / w, alt_end, Motion::Turn { rate: w * angle.signum(), v: self.cfg.speed_kps() });
    }

    fn hold(&mut self, dur: f64) {
        self.push(dur, self.state.alt, Motion::Hold);
    }

    /// Turns off the runway away from the pattern side and taxis clear.
    fn exit_runway(&mut self, taxi_s: f64) {
        self.push(15.0, 0.0, Motion::Turn { rate: -FRAC_PI_2 / 15.0, v: 0.0 });
        self.state.h = -FRAC_PI_2;
        let v = TAXI_SPEED_MPS / 1000.0;
        self.push(taxi_s, 0.0, Motion::Straight { v0: v, v1: v });
    }

    fn event(&mut self, kind: CallKind, label: IntentLabel) {
        self.events.push(Event { time: self.t, kind, label });
    }

    fn rw(&self) -> String {
        self.runway.designator.clone()
    }

    fn pattern_alt(&self) -> f64 {
        self.cfg.airport.pattern_altitude_agl_km
    }

    fn runway_length(&self) -> f64 {
        // the opposite threshold when there is one, else a nominal 1.5 km
        let (ax, ay) = self.runway.along();
        self.cfg
            .airport
            .runway_ends
            .iter()
            .filter(|e| e.designator != self.runway.designator)
            .map(|e| {
                let d = e.threshold.sub(&self.runway.threshold);
                d.x * ax + d.y * ay
            })
            .fold(1.5_f64, |acc, l| if l > 0.1 { l } else { acc })
    }

    /// Frame heading for a world bearing (degrees clockwise from north).
    fn frame_heading(&self, bearing_deg: f64) -> f64 {
        let b = bearing_deg.to_radians();
        let (dx, dy) = (b.sin(), b.cos());
        let (ax, ay) = self.runway.along();
        let (sx, sy) = self.runway.pattern_side();
        (dx * sx + dy * sy).atan2(dx * ax + dy * ay)
    }

    /// Shortest turn onto `target` frame heading.
    fn turn_to(&mut self, target: f64, alt_end: f64) {
        let mut d = (target - self.state.h).rem_euclid(2.0 * PI);
        if d > PI {
            d -= 2.0 * PI;
        }
        self.turn(d, alt_end);
    }

    fn takeoff(&mut self) {
        self.event(CallKind::Takeoff, IntentLabel::Takeoff(self.rw()));
        self.roll(ROLL_KM, 0.0, self.cfg.speed_kps());
    }

    /// Upwind climb then crosswind and the turn onto downwind.
    fn upwind_to_downwind(&mut self, emit_crosswind: bool) {
        let (r, d, h) = (self.cfg.turn_radius_km(), self.cfg.downwind_offset_km, self.pattern_alt());
        let upwind_end = self.runway_length() + 0.5;
        self.straight(upwind_end - self.state.u, h * 0.8);
        if emit_crosswind {
            self.event(CallKind::Crosswind, IntentLabel::EnterLeg(self.rw(), Leg::Crosswind));
        }
        self.turn(FRAC_PI_2, h);
        self.straight(d - 2.0 * r, h);
        self.event(CallKind::Downwind, IntentLabel::EnterLeg(self.rw(), Leg::Downwind));
        self.turn(FRAC_PI_2, h);
    }

    /// From anywhere on downwind to a full stop (or roll-through).
    fn downwind_to_runway(&mut self, extension_km: f64, touch_and_go: bool, emit: bool) {
        let (r, d, f, h) =
            (self.cfg.turn_radius_km(), self.cfg.downwind_offset_km, self.cfg.final_length_km, self.pattern_alt());
        self.straight(self.state.u - (-f + r) + extension_km, h);
        if emit {
            self.event(CallKind::Base, IntentLabel::EnterLeg(self.rw(), Leg::Base));
        }
        self.turn(FRAC_PI_2, h * 0.8);
        self.straight(d - 2.0 * r, h * 0.7);
        if emit {
            self.event(CallKind::Final { touch_and_go }, IntentLabel::Landing(self.rw()));
        }
        self.turn(FRAC_PI_2, h * 0.55);
        self.straight(-self.state.u, 0.0);
        let v = self.cfg.speed_kps();
        if touch_and_go {
            self.roll(ROLL_KM, v * 0.8, v);
        } else {
            self.roll(ROLL_KM, v, 0.0);
        }
    }

    fn depart(&mut self, dir: Direction, climb_to: f64, emit: bool) {
        if emit {
            self.event(CallKind::DepartPattern(dir), IntentLabel::Depart(dir));
        }
        let target = self.frame_heading(dir.bearing_deg());
        self.turn_to(target, self.state.alt + (climb_to - self.state.alt) * 0.3);
        self.straight(8.0, climb_to);
    }
}

fn runway<'c>(cfg: &'c SimConfig, designator: &str) -> Result<&'c RunwayEnd, SimError> {
    cfg.airport.runway(designator).ok_or_else(|| SimError::UnknownRunway(designator.to_string()))
}

/// Frame position of the downwind branch point: abeam the runway midpoint.
fn branch_point(cfg: &SimConfig, rw: &RunwayEnd) -> State {
    let len = Pilot::new(cfg, rw, State { u: 0.0, w: 0.0, h: 0.0, alt: 0.0 }).runway_length();
    State { u: len / 2.0, w: cfg.downwind_offset_km, h: PI, alt: cfg.airport.pattern_altitude_agl_km }
}

fn plan(script: &FlightScript, cfg: &SimConfig) -> Result<(Vec<Segment>, Vec<Event>, &'static str), SimError> {
    let rw = runway(cfg, &script.runway)?;
    let ground = State { u: 0.0, w: 0.0, h: 0.0, alt: 0.0 };
    let mut p = Pilot::new(cfg, rw, ground);
    let h = cfg.airport.pattern_altitude_agl_km;
    match script.maneuver {
        Maneuver::FullPattern => {
            p.hold(5.0);
            p.takeoff();
            p.upwind_to_downwind(true);
            p.downwind_to_runway(0.0, false, true);
            p.exit_runway(30.0);
        }
        Maneuver::TouchAndGo => {
            p.hold(5.0);
            p.takeoff();
            p.upwind_to_downwind(true);
            p.downwind_to_runway(0.0, true, true);
            p.upwind_to_downwind(true);
            p.downwind_to_runway(0.0, false, true);
            p.exit_runway(30.0);
        }
        Maneuver::Departure(dir) => {
            p.hold(5.0);
            p.takeoff();
            let upwind_end = p.runway_length() + 0.5;
            p.straight(upwind_end - p.state.u, h);
            p.depart(dir, h * 2.0, true);
        }
        Maneuver::Entry45 => {
            // Build the entry from a scratch origin, then shift it so the
            // 45° leg joins downwind abeam the runway midpoint.
            let entry_heading = 1.25 * PI;
            let mut scratch = Pilot::new(cfg, rw, State { u: 0.0, w: 0.0, h: entry_heading, alt: h + 0.15 });
            scratch.straight(3.0, h);
            scratch.turn(-PI / 4.0, h);
            let join = branch_point(cfg, rw);
            let (du, dw) = (join.u - scratch.state.u, join.w - scratch.state.w);
            p.state = State { u: du, w: dw, h: entry_heading, alt: h + 0.15 };
            p.event(CallKind::Entry45, IntentLabel::EnterLeg(p.rw(), Leg::Downwind));
            p.straight(3.0, h);
            p.turn(-PI / 4.0, h);
            p.downwind_to_runway(0.0, false, true);
            p.exit_runway(30.0);
        }
        Maneuver::Taxi => {
            p.state = State { u: 0.4, w: -0.25, h: PI, alt: 0.0 };
            p.event(CallKind::Taxi, IntentLabel::OtherIntent);
            let v = TAXI_SPEED_MPS / 1000.0;
            p.push(0.35 / v, 0.0, Motion::Straight { v0: v, v1: v });
            p.push(20.0, 0.0, Motion::Turn { rate: FRAC_PI_2 / 20.0, v: 0.0 });
            p.state.h = 1.5 * PI;
            p.push(0.2 / v, 0.0, Motion::Straight { v0: v, v1: v });
            p.hold(90.0);
        }
        Maneuver::DownwindBranch { branch, preroll_s } => {
            let join = branch_point(cfg, rw);
            let lead = preroll_s as f64 * cfg.speed_kps();
            p.state = State { u: join.u + lead, ..join };
            let label = branch.label(&rw.designator);
            let kind = match branch {
                Branch::Land => CallKind::BranchLanding,
                Branch::ExtendDownwind => CallKind::BranchExtend,
                Branch::Depart(d) => CallKind::DepartPattern(d),
            };
            p.event(kind, label);
            p.straight(lead, h);
            match branch {
                Branch::Land => {
                    p.downwind_to_runway(0.0, false, false);
                    p.exit_runway(200.0);
                }
                Branch::ExtendDownwind => {
                    p.downwind_to_runway(2.0, false, false);
                    p.exit_runway(200.0);
                }
                Branch::Depart(d) => {
                    p.depart(d, h * 2.0, false);
                }
            }
        }
    }
    let rwy = if rw.pattern == PatternDirection::Left { "left" } else { "right" };
    Ok((p.segs, p.events, rwy))
}

/// Maps a frame state to field coordinates.
fn to_local(rw: &RunwayEnd, s: &State) -> LocalPosition {
    let (ax, ay) = rw.along();
    let (sx, sy) = rw.pattern_side();
    LocalPosition::new(
        rw.threshold.x + s.u * ax + s.w * sx,
        rw.threshold.y + s.u * ay + s.w * sy,
        rw.threshold.z + s.alt,
    )
}

fn sample_path(segs: &[Segment], rw: &RunwayEnd, t0: f64, rate: f64) -> Vec<(f64, LocalPosition)> {
    let total: f64 = segs.iter().map(|s| s.duration).sum();
    let n = (total * rate).floor() as usize;
    let mut out = Vec::with_capacity(n + 1);
    let mut idx = 0;
    let mut seg_start = 0.0;
    for k in 0..=n {
        let tau = k as f64 / rate;
        while idx + 1 < segs.len() && tau > seg_start + segs[idx].duration {
            seg_start += segs[idx].duration;
            idx += 1;
        }
        let local = (tau - seg_start).min(segs[idx].duration);
        out.push((t0 + tau, to_local(rw, &segs[idx].at(local))));
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Phrasing {
    Clean,
    Synonyms,
    Omission,
}

fn pick_phrasing(rng: &mut ChaCha8Rng, w: &PhrasingNoise) -> Phrasing {
    let total = w.none + w.synonyms + w.omissions;
    let x = rng.random::<f64>() * total;
    if x < w.none {
        Phrasing::Clean
    } else if x < w.none + w.synonyms {
        Phrasing::Synonyms
    } else {
        Phrasing::Omission
    }
}

const PHONETIC: [&str; 26] = [
    "alpha", "bravo", "charlie", "delta", "echo", "foxtrot", "golf", "hotel", "india", "juliet", "kilo", "lima", "mike",
    "november", "oscar", "papa", "quebec", "romeo", "sierra", "tango", "uniform", "victor", "whiskey", "xray",
    "yankee", "zulu",
];
const DIGITS: [&str; 10] = ["zero", "one", "two", "three", "four", "five", "six", "seven", "eight", "niner"];

fn spell(id: &str) -> String {
    id.chars()
        .map(|c| match c {
            '0'..='9' => DIGITS[c as usize - '0' as usize].to_string(),
            'A'..='Z' => PHONETIC[c as usize - 'A' as usize].to_string(),
            other => other.to_string(),
        })
        .collect::<Vec<_>>()
        .join(" ")
}

fn spoken_runway(rw: &str, rng: &mut ChaCha8Rng, synonyms: bool) -> String {
    if !synonyms {
        return rw.to_string();
    }
    let n: u32 = rw.trim_end_matches(['L', 'R', 'C']).parse().unwrap_or(0);
    if n < 10 && rng.random_bool(0.5) {
        DIGITS[n as usize].to_string()
    } else {
        spell(rw)
    }
}

/// Slots of a templated call; rendering joins the non-empty ones.
struct CallParts {
    lead: String,
    callsign: String,
    position: String,
    body: String,
    trailer: String,
}

fn position_phrase(pos: &LocalPosition) -> String {
    let miles = distance_miles(pos);
    match cardinal_direction(pos, 8) {
        Ok(dir) if miles >= 1 => {
            let unit = if miles == 1 { "mile" } else { "miles" };
            format!("{miles} {unit} {}", dir.name().to_lowercase())
        }
        _ => String::new(),
    }
}

#[allow(clippy::too_many_arguments)]
fn render_call(
    kind: CallKind,
    script: &FlightScript,
    side: &str,
    airport: &AirportConfig,
    pos: &LocalPosition,
    phrasing: Phrasing,
    rng: &mut ChaCha8Rng,
) -> String {
    let syn = phrasing == Phrasing::Synonyms;
    let field = if syn && rng.random_bool(0.5) {
        airport.aliases.last().cloned().unwrap_or_else(|| airport.name.clone())
    } else {
        airport.name.clone()
    };
    let id = if syn && rng.random_bool(0.5) { spell(&script.spoken_id()) } else { script.spoken_id() };
    let rwy = spoken_runway(&script.runway, rng, syn);
    let pick = |rng: &mut ChaCha8Rng, a: &str, b: &str| if syn && rng.random_bool(0.5) { b.to_string() } else { a.to_string() };
    let body = match kind {
        CallKind::Takeoff => format!("{} runway {rwy}", pick(rng, "departing", "rolling")),
        CallKind::Crosswind => format!("turning {side} crosswind runway {rwy}"),
        CallKind::Downwind => format!("{} {side} downwind runway {rwy}", pick(rng, "entering", "turning")),
        CallKind::Entry45 => format!("{} the 45 for {side} downwind runway {rwy}", pick(rng, "entering", "joining")),
        CallKind::Base => format!("{} {side} base runway {rwy}", pick(rng, "turning", "on")),
        CallKind::Final { touch_and_go: true } => format!("turning final runway {rwy} touch and go"),
        CallKind::Final { touch_and_go: false } => {
            format!("turning final runway {rwy} {}", pick(rng, "full stop", "to land"))
        }
        CallKind::DepartPattern(d) => {
            let dir = d.name().to_lowercase();
            if syn && rng.random_bool(0.5) {
                format!("{dir}bound departure")
            } else {
                format!("departing the pattern to the {dir}")
            }
        }
        CallKind::Taxi => format!("{} to runway {rwy}", pick(rng, "taxiing", "taxi")),
        CallKind::BranchLanding => format!("landing runway {rwy} {}", pick(rng, "full stop", "to land")),
        CallKind::BranchExtend => format!("extending {side} downwind runway {rwy}"),
    };
    let position = match kind {
        CallKind::Entry45 | CallKind::BranchLanding | CallKind::BranchExtend | CallKind::DepartPattern(_) => {
            position_phrase(pos)
        }
        _ => String::new(),
    };
    let mut parts = CallParts {
        lead: format!("{field} traffic"),
        callsign: format!("{} {id}", script.callsign_type),
        position,
        body,
        trailer: field,
    };
    if phrasing == Phrasing::Omission {
        let x: f64 = rng.random();
        if x < 0.3 {
            parts.lead.clear();
        } else if x < 0.6 {
            parts.trailer.clear();
        } else if x < 0.8 {
            parts.callsign = id;
        } else if x < 0.9 {
            parts.position.clear();
        } else {
            parts.body = drop_runway(&parts.body);
        }
    }
    [parts.lead, parts.callsign, parts.position, parts.body, parts.trailer]
        .into_iter()
        .filter(|s| !s.is_empty())
        .collect::<Vec<_>>()
        .join(", ")
}

/// Removes `runway <designator>` (however spoken) from a phrase.
fn drop_runway(body: &str) -> String {
    let words: Vec<&str> = body.split(' ').collect();
    let Some(i) = words.iter().position(|w| *w == "runway") else { return body.to_string() };
    let mut j = i + 1;
    while j < words.len() && (DIGITS.contains(&words[j]) || words[j].chars().all(|c| c.is_ascii_alphanumeric() && !c.is_ascii_lowercase()))
    {
        j += 1;
    }
    let mut kept: Vec<&str> = words[..i].to_vec();
    kept.extend_from_slice(&words[j..]);
    kept.join(" ")
}

/// One flight's noisy track and its calls with ground truth attached.
pub fn simulate_flight(script: &FlightScript, cfg: &SimConfig, rng: &mut ChaCha8Rng) -> Result<(Track, Vec<RadioCall>), SimError> {
    cfg.validate()?;
    let rw = runway(cfg, &script.runway)?;
    let (segs, events, side) = plan(script, cfg)?;
    let noise = Normal::new(0.0, cfg.position_noise_km.max(0.0)).map_err(|e| SimError::Config(e.to_string()))?;
    let samples = sample_path(&segs, rw, script.spawn_time, cfg.sample_rate_hz);
    let points = samples
        .into_iter()
        .map(|(t, p)| {
            let p = if cfg.position_noise_km > 0.0 {
                LocalPosition::new(p.x + noise.sample(rng), p.y + noise.sample(rng), p.z + noise.sample(rng))
            } else {
                p
            };
            TrackSample { time: t, position: p }
        })
        .collect();
    let track = Track::new(script.aircraft_id.clone(), points);
    let mut calls = Vec::new();
    for (i, ev) in events.iter().enumerate() {
        if !script.emits(i) {
            continue;
        }
        let pos = path_position(&segs, rw, ev.time);
        let phrasing = pick_phrasing(rng, &cfg.phrasing);
        let transcript = render_call(ev.kind, script, side, &cfg.airport, &pos, phrasing, rng);
        calls.push(RadioCall {
            time: script.spawn_time + ev.time,
            transcript,
            speaker_truth: Some(script.aircraft_id.clone()),
            intent_truth: Some(ev.label.clone()),
        });
    }
    Ok((track, calls))
}

fn path_position(segs: &[Segment], rw: &RunwayEnd, t: f64) -> LocalPosition {
    let mut start = 0.0;
    for s in segs {
        if t <= start + s.duration {
            return to_local(rw, &s.at(t - start));
        }
        start += s.duration;
    }
    segs.last().map(|s| to_local(rw, &s.end())).unwrap_or(LocalPosition::ORIGIN)
}

/// Noise-free position `t` seconds after spawn.
pub fn nominal_position(script: &FlightScript, cfg: &SimConfig, t: f64) -> Result<LocalPosition, SimError> {
    let rw = runway(cfg, &script.runway)?;
    let (segs, _, _) = plan(script, cfg)?;
    Ok(path_position(&segs, rw, t))
}

const FLEET_TYPES: [(&str, &[&str]); 5] = [
    ("Skyhawk", &["C172", "Cessna", "Skyhawk"]),
    ("Cherokee", &["P28A", "Piper", "Cherokee"]),
    ("Diamond", &["DA40", "Diamond", "Star"]),
    ("Archer", &["P28A", "Piper", "Archer"]),
    ("Cirrus", &["SR22", "Cirrus"]),
];

/// `n` aircraft whose spoken three-character suffixes are all distinct.
pub fn synthetic_fleet(n: usize, rng: &mut ChaCha8Rng) -> Vec<(String, &'static str, &'static [&'static str])> {
    let mut suffixes = BTreeSet::new();
    let mut fleet = Vec::with_capacity(n);
    while fleet.len() < n {
        let d: u32 = rng.random_range(1..100);
        let s: String = format!(
            "{}{}{}",
            rng.random_range(0..10),
            (b'A' + rng.random_range(0..26u8)) as char,
            (b'A' + rng.random_range(0..26u8)) as char
        );
        if !suffixes.insert(s.clone()) {
            continue;
        }
        let (ty, aliases) = FLEET_TYPES[rng.random_range(0..FLEET_TYPES.len())];
        fleet.push((format!("N{d}{s}"), ty, aliases));
    }
    fleet
}

fn directory_for(fleet: &[(String, &str, &[&str])]) -> AircraftDirectory {
    AircraftDirectory::new(fleet.iter().map(|(tail, _, aliases)| AircraftDirectoryEntry::new(tail, aliases)))
        .expect("fleet tails are unique")
}

/// Relative weights of the script families.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScriptMix {
    pub full_pattern: f64,
    pub touch_and_go: f64,
    pub entry45: f64,
    pub departure: f64,
    pub taxi: f64,
}

impl Default for ScriptMix {
    fn default() -> Self {
        Self { full_pattern: 0.3, touch_and_go: 0.1, entry45: 0.25, departure: 0.3, taxi: 0.05 }
    }
}

impl ScriptMix {
    fn pick(&self, rng: &mut ChaCha8Rng) -> Maneuver {
        let w = [self.full_pattern, self.touch_and_go, self.entry45, self.departure, self.taxi];
        let mut x = rng.random::<f64>() * w.iter().sum::<f64>();
        let mut idx = w.len() - 1;
        for (i, wi) in w.iter().enumerate() {
            if x < *wi {
                idx = i;
                break;
            }
            x -= wi;
        }
        match idx {
            0 => Maneuver::FullPattern,
            1 => Maneuver::TouchAndGo,
            2 => Maneuver::Entry45,
            3 => Maneuver::Departure(Direction::CARDINALS[rng.random_range(0..4)]),
            _ => Maneuver::Taxi,
        }
    }
}

/// Everything a simulation run produces.
#[derive(Debug, Clone)]
pub struct SimDataset {
    pub scripts: Vec<FlightScript>,
    pub tracks: BTreeMap<String, Track>,
    pub calls: Vec<RadioCall>,
    pub directory: AircraftDirectory,
    pub labeled: Vec<LabeledCall>,
}

impl SimDataset {
    pub fn scenes(&self, window: &WindowConfig) -> Vec<Scene> {
        window_scenes(&self.tracks, &self.labeled, window)
    }
}

fn flight_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64 + 1);
    rng
}

fn merge_track(tracks: &mut BTreeMap<String, Track>, track: Track) {
    match tracks.get_mut(&track.aircraft_id) {
        Some(t) => {
            t.points.extend(track.points);
            t.points.sort_by(|a, b| a.time.total_cmp(&b.time));
        }
        None => {
            tracks.insert(track.aircraft_id.clone(), track);
        }
    }
}

pub const FLIGHTS_PER_DAY: usize = 12;

/// Seeded mix of scripted flights, staggered within synthetic days, with
/// calls labeled by the rule parser.
pub fn generate_flights(n_flights: usize, mix: &ScriptMix, cfg: &SimConfig) -> Result<SimDataset, SimError> {
    if n_flights == 0 {
        return Err(SimError::Config("n_flights must be at least 1".into()));
    }
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let fleet = synthetic_fleet(n_flights.min(2 * FLIGHTS_PER_DAY), &mut rng);
    let mut scripts = Vec::with_capacity(n_flights);
    for i in 0..n_flights {
        let mut frng = flight_rng(cfg.seed, i);
        let (tail, ty, _) = &fleet[i % fleet.len()];
        let day = (i / FLIGHTS_PER_DAY) as f64;
        let slot = (i % FLIGHTS_PER_DAY) as f64;
        let rw = &cfg.airport.runway_ends[frng.random_range(0..cfg.airport.runway_ends.len())];
        scripts.push(FlightScript {
            aircraft_id: tail.clone(),
            callsign_type: ty.to_string(),
            runway: rw.designator.clone(),
            maneuver: mix.pick(&mut frng),
            spawn_time: day * SECONDS_PER_DAY + 3600.0 + slot * 150.0 + frng.random_range(0.0..30.0_f64).floor(),
            emit: Vec::new(),
        });
    }
    run_scripts(scripts, directory_for(&fleet), cfg)
}

fn run_scripts(scripts: Vec<FlightScript>, directory: AircraftDirectory, cfg: &SimConfig) -> Result<SimDataset, SimError> {
    let mut tracks = BTreeMap::new();
    let mut calls = Vec::new();
    for (i, s) in scripts.iter().enumerate() {
        let mut frng = flight_rng(cfg.seed ^ 0x7ac4, i);
        let (track, c) = simulate_flight(s, cfg, &mut frng)?;
        merge_track(&mut tracks, track);
        calls.extend(c);
    }
    calls.sort_by(|a, b| a.time.total_cmp(&b.time));
    let labeled = label_calls(&calls, &directory, &tracks, &cfg.airport);
    Ok(SimDataset { scripts, tracks, calls, directory, labeled })
}

/// Flights windowed and split by (aircraft, day).
pub fn generate_dataset(
    n_flights: usize,
    mix: &ScriptMix,
    cfg: &SimConfig,
    window: &WindowConfig,
    fractions: (f64, f64),
) -> Result<(SimDataset, DatasetSplit), SimError> {
    let data = generate_flights(n_flights, mix, cfg)?;
    let scenes = data.scenes(window);
    let split = split_scenes(scenes, fractions, cfg.seed, &format!("pattern-sim seed={} flights={n_flights}", cfg.seed));
    Ok((data, split))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AmbiguityConfig {
    pub n_flights: usize,
    /// Fraction of flights that make no call at all.
    pub silent_fraction: f64,
    pub min_preroll_s: u32,
    pub max_preroll_s: u32,
}

impl Default for AmbiguityConfig {
    fn default() -> Self {
        Self { n_flights: 480, silent_fraction: 0.0, min_preroll_s: 20, max_preroll_s: 40 }
    }
}

/// Flights that share one downwind prefix and branch at a fixed point.
#[derive(Debug, Clone)]
pub struct AmbiguityBenchmark {
    pub data: SimDataset,
    /// `(aircraft, branch, time at the branch point)` per flight.
    pub flights: Vec<(String, Branch, f64)>,
}

impl AmbiguityBenchmark {
    /// One scene per flight, observed up to the branch point.
    pub fn scenes(&self, window: &WindowConfig) -> Vec<Scene> {
        self.flights
            .iter()
            .filter_map(|(id, _, t)| scene_at(&self.data.tracks[id], &self.data.labeled, *t, window))
            .collect()
    }

    pub fn split(&self, window: &WindowConfig, fractions: (f64, f64), seed: u64) -> DatasetSplit {
        split_scenes(self.scenes(window), fractions, seed, "ambiguity-benchmark")
    }
}

pub fn ambiguity_benchmark(cfg: &SimConfig, bench: &AmbiguityConfig) -> Result<AmbiguityBenchmark, SimError> {
    cfg.validate()?;
    if bench.n_flights == 0 || bench.min_preroll_s > bench.max_preroll_s {
        return Err(SimError::Config("need at least one flight and min_preroll_s <= max_preroll_s".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let fleet = synthetic_fleet(bench.n_flights, &mut rng);
    let rw = cfg.airport.runway_ends[0].designator.clone();
    let mut branches: Vec<Branch> = (0..bench.n_flights).map(|i| Branch::ALL[i % Branch::ALL.len()]).collect();
    branches.shuffle(&mut rng);
    let mut scripts = Vec::with_capacity(bench.n_flights);
    let mut flights = Vec::with_capacity(bench.n_flights);
    for (i, branch) in branches.into_iter().enumerate() {
        let mut frng = flight_rng(cfg.seed, i);
        let preroll = frng.random_range(bench.min_preroll_s..=bench.max_preroll_s);
        let silent = frng.random::<f64>() < bench.silent_fraction;
        let day = (i / 100) as f64;
        let spawn = day * SECONDS_PER_DAY + 3600.0 + (i % 100) as f64 * 600.0;
        let (tail, ty, _) = &fleet[i];
        scripts.push(FlightScript {
            aircraft_id: tail.clone(),
            callsign_type: ty.to_string(),
            runway: rw.clone(),
            maneuver: Maneuver::DownwindBranch { branch, preroll_s: preroll },
            spawn_time: spawn,
            emit: if silent { vec![false] } else { Vec::new() },
        });
        flights.push((tail.clone(), branch, spawn + preroll as f64));
    }
    let data = run_scripts(scripts, directory_for(&fleet), cfg)?;
    Ok(AmbiguityBenchmark { data, flights })
}
